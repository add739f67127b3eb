#include "meshreg/delaunay.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <utility>

#include <json.hpp>

#include "meshreg/predicates.hpp"

namespace meshreg {

namespace {

constexpr std::array<Point2, 4> kCorners{{{0.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}, {1.0, 1.0}}};

using Tri = std::array<int, 3>;

bool in_unit_square(const Point2& p) {
    return std::isfinite(p.x) && std::isfinite(p.y) && p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0;
}

Tri canonical(const Tri& t) {
    const auto it = std::min_element(t.begin(), t.end());
    const auto k = std::size_t(it - t.begin());
    return {t[k], t[(k + 1) % 3], t[(k + 2) % 3]};
}

// Inserts vertex `v` into a Delaunay triangulation covering the unit square.
void insert_vertex(const std::vector<Point2>& verts, std::vector<Tri>& tris, int v) {
    const Point2& p = verts[std::size_t(v)];
    std::vector<Tri> kept;
    std::vector<Tri> cavity;
    kept.reserve(tris.size() + 2);
    for (const auto& t : tris) {
        if (incircle(verts[std::size_t(t[0])], verts[std::size_t(t[1])], verts[std::size_t(t[2])], p) > 0)
            cavity.push_back(t);
        else
            kept.push_back(t);
    }
    if (cavity.empty()) throw NumericalError("delaunay: inserted point is outside the triangulation");

    // Cavity boundary: directed edges whose reverse is not in the cavity.
    std::map<std::pair<int, int>, int> directed;
    for (const auto& t : cavity)
        for (int e = 0; e < 3; ++e) ++directed[{t[std::size_t(e)], t[std::size_t((e + 1) % 3)]}];
    for (const auto& [edge, count] : directed) {
        if (directed.contains({edge.second, edge.first})) continue;
        const int orient = orient2d(verts[std::size_t(edge.first)], verts[std::size_t(edge.second)], p);
        if (orient < 0) throw NumericalError("delaunay: cavity is not star-shaped");
        // p on a hull side: that side is split rather than fanned.
        if (orient == 0) continue;
        kept.push_back({edge.first, edge.second, v});
    }
    tris = std::move(kept);
}

}  // namespace

double TriMesh::area(std::size_t t) const {
    const auto& tri = triangles.at(t);
    return 0.5 * cross(vertices[std::size_t(tri[0])], vertices[std::size_t(tri[1])], vertices[std::size_t(tri[2])]);
}

std::vector<Point2> sample_poisson_points(double intensity, Seed seed) {
    if (!(intensity > 0.0) || !std::isfinite(intensity))
        throw ArgumentError("sample_poisson_points: intensity must be positive and finite");
    CounterRng rng(seed);
    std::poisson_distribution<int> count_dist(intensity);
    const int n = count_dist(rng);
    std::vector<Point2> points;
    points.reserve(std::size_t(n));
    for (int i = 0; i < n; ++i) {
        const double x = rng.uniform();
        const double y = rng.uniform();
        points.push_back({x, y});
    }
    return points;
}

TriMesh delaunay_triangulate(std::span<const Point2> points) {
    TriMesh mesh;
    mesh.vertices.reserve(points.size() + 4);
    for (const auto& p : points) {
        if (!in_unit_square(p)) throw ArgumentError("delaunay_triangulate: point outside [0,1]^2");
        if (std::find(mesh.vertices.begin(), mesh.vertices.end(), p) == mesh.vertices.end())
            mesh.vertices.push_back(p);
    }
    std::array<int, 4> corner_index{};
    for (std::size_t c = 0; c < kCorners.size(); ++c) {
        const auto it = std::find(mesh.vertices.begin(), mesh.vertices.end(), kCorners[c]);
        if (it != mesh.vertices.end()) {
            corner_index[c] = int(it - mesh.vertices.begin());
        } else {
            corner_index[c] = int(mesh.vertices.size());
            mesh.vertices.push_back(kCorners[c]);
        }
    }

    // Seed triangulation: the square split along (0,0)-(1,1).
    const int c00 = corner_index[0], c10 = corner_index[1], c01 = corner_index[2], c11 = corner_index[3];
    std::vector<Tri> tris{{c00, c10, c11}, {c00, c11, c01}};

    for (int v = 0; v < int(mesh.vertices.size()); ++v) {
        if (std::find(corner_index.begin(), corner_index.end(), v) != corner_index.end()) continue;
        insert_vertex(mesh.vertices, tris, v);
    }

    for (auto& t : tris) t = canonical(t);
    std::sort(tris.begin(), tris.end());
    mesh.triangles = std::move(tris);
    return mesh;
}

TriMesh mesh_with_k_triangles(int k, Seed seed) {
    if (k < 2) throw ArgumentError("mesh_with_k_triangles: k must be >= 2, got " + std::to_string(k));
    auto points = sample_poisson_points(0.5 * k, derive_seed(seed, 0));
    CounterRng rng(derive_seed(seed, 1));

    for (;;) {
        TriMesh mesh = delaunay_triangulate(points);
        const int count = int(mesh.triangle_count());
        if (count == k) return mesh;
        if (count > k) {
            points.pop_back();
        } else if (k - count == 1) {
            double t = 0.0;
            while (t == 0.0) t = rng.uniform();
            switch (rng() % 4) {
                case 0: points.push_back({t, 0.0}); break;
                case 1: points.push_back({1.0, t}); break;
                case 2: points.push_back({t, 1.0}); break;
                default: points.push_back({0.0, t}); break;
            }
        } else {
            const double x = rng.uniform();
            const double y = rng.uniform();
            points.push_back({x, y});
        }
    }
}

DelaunayAudit audit_delaunay(const TriMesh& mesh, double tol) {
    DelaunayAudit audit;
    for (const auto& t : mesh.triangles) {
        const auto& a = mesh.vertices.at(std::size_t(t[0]));
        const auto& b = mesh.vertices.at(std::size_t(t[1]));
        const auto& c = mesh.vertices.at(std::size_t(t[2]));
        if (orient2d(a, b, c) <= 0) ++audit.degenerate;
        for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
            if (int(v) == t[0] || int(v) == t[1] || int(v) == t[2]) continue;
            const double value = incircle_normalized(a, b, c, mesh.vertices[v]);
            audit.worst = std::max(audit.worst, value);
            if (value > tol) ++audit.violations;
        }
    }
    return audit;
}

void save_mesh(const TriMesh& mesh, const std::filesystem::path& path) {
    nlohmann::ordered_json j;
    auto& verts = j["vertices"] = nlohmann::ordered_json::array();
    for (const auto& v : mesh.vertices) verts.push_back({v.x, v.y});
    auto& tris = j["triangles"] = nlohmann::ordered_json::array();
    for (const auto& t : mesh.triangles) tris.push_back({t[0], t[1], t[2]});
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError(path.string(), "cannot open for writing: " + path.string());
    out << j.dump() << '\n';
}

TriMesh load_mesh(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path.string(), "cannot open for reading: " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("mesh", std::string("mesh file is not valid JSON: ") + e.what());
    }
    if (!j.contains("vertices") || !j["vertices"].is_array())
        throw ParseError("vertices", "mesh file: 'vertices' missing or not an array");
    if (!j.contains("triangles") || !j["triangles"].is_array())
        throw ParseError("triangles", "mesh file: 'triangles' missing or not an array");
    TriMesh mesh;
    for (const auto& v : j["vertices"]) {
        if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
            throw ParseError("vertices", "mesh file: each vertex must be [x, y]");
        const Point2 p{v[0].get<double>(), v[1].get<double>()};
        if (!in_unit_square(p)) throw ParseError("vertices", "mesh file: vertex outside [0,1]^2");
        mesh.vertices.push_back(p);
    }
    const int n = int(mesh.vertices.size());
    for (const auto& t : j["triangles"]) {
        if (!t.is_array() || t.size() != 3) throw ParseError("triangles", "mesh file: each triangle must be [a, b, c]");
        Tri tri{};
        for (std::size_t i = 0; i < 3; ++i) {
            if (!t[i].is_number_integer()) throw ParseError("triangles", "mesh file: triangle index not an integer");
            tri[i] = t[i].get<int>();
            if (tri[i] < 0 || tri[i] >= n) throw ParseError("triangles", "mesh file: triangle index out of range");
        }
        mesh.triangles.push_back(tri);
    }
    return mesh;
}

}  // namespace meshreg

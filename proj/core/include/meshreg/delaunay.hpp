#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "meshreg/grid.hpp"
#include "meshreg/random.hpp"

namespace meshreg {

/// Triangulation of the unit square. Triangles are counterclockwise vertex
/// index triples; the four domain corners are always vertices.
struct TriMesh {
    std::vector<Point2> vertices;
    std::vector<std::array<int, 3>> triangles;

    std::size_t triangle_count() const noexcept { return triangles.size(); }
    double area(std::size_t t) const;

    friend bool operator==(const TriMesh&, const TriMesh&) = default;
};

/// Homogeneous Poisson process on [0,1]^2: the count is Poisson(intensity)
/// and the points are i.i.d. uniform.
std::vector<Point2> sample_poisson_points(double intensity, Seed seed);

/// Incremental Bowyer-Watson triangulation with exact predicates.
///
/// Exact duplicates are dropped (first occurrence wins) and any missing unit
/// square corner is appended, so the hull is always the full square. All
/// points must lie in [0,1]^2. Vertex order in the result is: deduplicated
/// input points, then appended corners. Triangles are canonicalized (lowest
/// vertex index first, then sorted) so output depends only on the input.
TriMesh delaunay_triangulate(std::span<const Point2> points);

/// Random Delaunay mesh with exactly k triangles (k >= 2). Starts from a
/// Poisson sample of intensity k/2, then removes the most recent point or
/// inserts uniform ones until the count matches. With only the four corners
/// on the hull a mesh has an even triangle count, so odd k is reached by
/// inserting one point on a random side of the square.
TriMesh mesh_with_k_triangles(int k, Seed seed);

struct DelaunayAudit {
    std::size_t violations = 0;   // (triangle, vertex) pairs with vertex inside the circumcircle
    std::size_t degenerate = 0;   // triangles that are not strictly counterclockwise
    double worst = 0.0;           // largest normalized in-circle value seen
};

/// Brute-force check of the empty-circumcircle property over all
/// (triangle, vertex) pairs; a pair counts when the normalized in-circle
/// value exceeds `tol`.
DelaunayAudit audit_delaunay(const TriMesh& mesh, double tol = 1e-9);

/// JSON {"vertices":[[x,y],...],"triangles":[[a,b,c],...]}.
void save_mesh(const TriMesh& mesh, const std::filesystem::path& path);
TriMesh load_mesh(const std::filesystem::path& path);

}  // namespace meshreg

#include "meshreg/subspace.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "meshreg/predicates.hpp"

namespace meshreg {

namespace {

struct Fnv1a {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    void bytes(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xff;
            h *= 0x100000001b3ULL;
        }
    }
};

std::uint64_t basis_hash(const TriMesh& mesh, const Grid& grid) {
    Fnv1a f;
    f.bytes(std::uint64_t(grid.side()));
    f.bytes(mesh.vertices.size());
    for (const auto& v : mesh.vertices) {
        f.bytes(std::bit_cast<std::uint64_t>(v.x));
        f.bytes(std::bit_cast<std::uint64_t>(v.y));
    }
    f.bytes(mesh.triangles.size());
    for (const auto& t : mesh.triangles)
        for (int i : t) f.bytes(std::uint64_t(i));
    return f.h;
}

}  // namespace

SubspaceBasis rasterize(const TriMesh& mesh, const Grid& grid) {
    SubspaceBasis basis(mesh, grid);
    const int side = grid.side();
    std::vector<int> tri_of_pixel(std::size_t(grid.size()), -1);
    std::vector<int> tri_counts(mesh.triangle_count(), 0);

    for (std::size_t t = 0; t < mesh.triangle_count(); ++t) {
        const auto& tri = mesh.triangles[t];
        const Point2& a = mesh.vertices.at(std::size_t(tri[0]));
        const Point2& b = mesh.vertices.at(std::size_t(tri[1]));
        const Point2& c = mesh.vertices.at(std::size_t(tri[2]));
        const double xmin = std::min({a.x, b.x, c.x}), xmax = std::max({a.x, b.x, c.x});
        const double ymin = std::min({a.y, b.y, c.y}), ymax = std::max({a.y, b.y, c.y});
        // Centers (j + 0.5) / side within [xmin, xmax], padded by one pixel.
        const int j0 = std::max(0, int(std::floor(xmin * side - 0.5)) - 1);
        const int j1 = std::min(side - 1, int(std::ceil(xmax * side - 0.5)) + 1);
        const int i0 = std::max(0, int(std::floor(ymin * side - 0.5)) - 1);
        const int i1 = std::min(side - 1, int(std::ceil(ymax * side - 0.5)) + 1);
        for (int i = i0; i <= i1; ++i) {
            for (int j = j0; j <= j1; ++j) {
                const auto p = std::size_t(grid.index(i, j));
                if (tri_of_pixel[p] >= 0) continue;
                const Point2 q = grid.center(i, j);
                if (orient2d(a, b, q) >= 0 && orient2d(b, c, q) >= 0 && orient2d(c, a, q) >= 0) {
                    tri_of_pixel[p] = int(t);
                    ++tri_counts[t];
                }
            }
        }
    }
    if (std::find(tri_of_pixel.begin(), tri_of_pixel.end(), -1) != tri_of_pixel.end())
        throw ArgumentError("rasterize: mesh does not cover every pixel center");

    std::vector<int> column_of_tri(mesh.triangle_count(), -1);
    for (std::size_t t = 0; t < mesh.triangle_count(); ++t) {
        if (tri_counts[t] == 0) continue;
        column_of_tri[t] = int(basis.counts_.size());
        basis.column_triangle_.push_back(int(t));
        basis.counts_.push_back(tri_counts[t]);
        basis.inv_sqrt_counts_.push_back(1.0 / std::sqrt(double(tri_counts[t])));
    }
    basis.assignment_.resize(tri_of_pixel.size());
    for (std::size_t p = 0; p < tri_of_pixel.size(); ++p)
        basis.assignment_[p] = column_of_tri[std::size_t(tri_of_pixel[p])];
    basis.hash_ = basis_hash(basis.mesh_, grid);
    return basis;
}

Eigen::VectorXd SubspaceBasis::coeffs(const Eigen::VectorXd& x) const {
    if (x.size() != grid_.size()) throw ArgumentError("coeffs: image size does not match basis grid");
    Eigen::VectorXd q = Eigen::VectorXd::Zero(column_count());
    for (std::size_t p = 0; p < assignment_.size(); ++p) q[assignment_[p]] += x[Eigen::Index(p)];
    for (int k = 0; k < column_count(); ++k) q[k] *= inv_sqrt_counts_[std::size_t(k)];
    return q;
}

Eigen::VectorXd SubspaceBasis::coeffs(const Image& img) const {
    require_same_grid(img.grid(), grid_, "coeffs");
    return coeffs(img.values());
}

void SubspaceBasis::synthesize_add(const Eigen::VectorXd& q, Eigen::VectorXd& out, double scale) const {
    if (q.size() != column_count())
        throw ArgumentError("synthesize: expected " + std::to_string(column_count()) + " coefficients, got " +
                            std::to_string(q.size()));
    if (out.size() != grid_.size()) throw ArgumentError("synthesize: output size does not match basis grid");
    for (std::size_t p = 0; p < assignment_.size(); ++p) {
        const auto k = std::size_t(assignment_[p]);
        out[Eigen::Index(p)] += scale * q[Eigen::Index(k)] * inv_sqrt_counts_[k];
    }
}

Image SubspaceBasis::synthesize(const Eigen::VectorXd& q) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(grid_.size());
    synthesize_add(q, out);
    return Image(grid_, std::move(out));
}

Image SubspaceBasis::project(const Image& img) const {
    require_same_grid(img.grid(), grid_, "project");
    std::vector<double> sums(counts_.size(), 0.0);
    for (std::size_t p = 0; p < assignment_.size(); ++p) sums[std::size_t(assignment_[p])] += img.values()[Eigen::Index(p)];
    Eigen::VectorXd out(grid_.size());
    for (std::size_t p = 0; p < assignment_.size(); ++p) {
        const auto k = std::size_t(assignment_[p]);
        out[Eigen::Index(p)] = sums[k] / counts_[k];
    }
    return Image(grid_, std::move(out));
}

Image SubspaceBasis::column(int k) const {
    if (k < 0 || k >= column_count()) throw ArgumentError("column: index out of range");
    Eigen::VectorXd out = Eigen::VectorXd::Zero(grid_.size());
    for (std::size_t p = 0; p < assignment_.size(); ++p)
        if (assignment_[p] == k) out[Eigen::Index(p)] = inv_sqrt_counts_[std::size_t(k)];
    return Image(grid_, std::move(out));
}

Eigen::SparseMatrix<double> SubspaceBasis::matrix() const {
    std::vector<Eigen::Triplet<double>> entries;
    entries.reserve(assignment_.size());
    for (std::size_t p = 0; p < assignment_.size(); ++p) {
        const auto k = std::size_t(assignment_[p]);
        entries.emplace_back(Eigen::Index(p), Eigen::Index(k), inv_sqrt_counts_[k]);
    }
    Eigen::SparseMatrix<double> b(grid_.size(), column_count());
    b.setFromTriplets(entries.begin(), entries.end());
    return b;
}

Image project(const SubspaceBasis& basis, const Image& img) { return basis.project(img); }
Eigen::VectorXd coeffs(const SubspaceBasis& basis, const Image& img) { return basis.coeffs(img); }
Image synthesize(const SubspaceBasis& basis, const Eigen::VectorXd& q) { return basis.synthesize(q); }

StackedBasis::StackedBasis(std::vector<SubspaceBasis> bases) : grid_(bases.empty() ? Grid(2) : bases.front().grid()) {
    if (bases.empty()) throw ArgumentError("StackedBasis: need at least one basis");
    for (auto& b : bases) add(std::move(b));
}

void StackedBasis::add(SubspaceBasis basis) {
    require_same_grid(basis.grid(), grid_, "StackedBasis::add");
    offsets_.push_back(offsets_.back() + basis.column_count());
    bases_.push_back(std::move(basis));
}

Eigen::VectorXd StackedBasis::apply_transpose(const Eigen::VectorXd& x) const {
    if (x.size() != grid_.size()) throw ArgumentError("StackedBasis: image size mismatch");
    Eigen::VectorXd q(total_columns());
    for (std::size_t i = 0; i < bases_.size(); ++i)
        q.segment(offsets_[i], bases_[i].column_count()) = bases_[i].coeffs(x);
    return q;
}

Eigen::VectorXd StackedBasis::apply(const Eigen::VectorXd& q) const {
    if (q.size() != total_columns())
        throw ArgumentError("StackedBasis: expected " + std::to_string(total_columns()) + " coefficients, got " +
                            std::to_string(q.size()));
    Eigen::VectorXd out = Eigen::VectorXd::Zero(grid_.size());
    for (std::size_t i = 0; i < bases_.size(); ++i)
        bases_[i].synthesize_add(q.segment(offsets_[i], bases_[i].column_count()), out);
    return out;
}

Eigen::MatrixXd StackedBasis::dense() const {
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(grid_.size(), total_columns());
    for (std::size_t i = 0; i < bases_.size(); ++i) b.middleCols(offsets_[i], bases_[i].column_count()) = Eigen::MatrixXd(bases_[i].matrix());
    return b;
}

}  // namespace meshreg

#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "meshreg/delaunay.hpp"
#include "meshreg/grid.hpp"

namespace meshreg {

/// Orthonormal basis of images that are piecewise constant on a mesh.
///
/// Column k is the indicator of the pixels whose centers fall in one triangle,
/// divided by sqrt(pixel count). Triangles that contain no pixel center get no
/// column, so column_count() can be smaller than the mesh's triangle count.
/// A coefficient q_k corresponds to the triangle mean q_k / sqrt(count_k).
class SubspaceBasis {
public:
    const TriMesh& mesh() const noexcept { return mesh_; }
    const Grid& grid() const noexcept { return grid_; }
    int column_count() const noexcept { return int(counts_.size()); }

    /// Column index of every pixel.
    const std::vector<int>& assignment() const noexcept { return assignment_; }
    /// Mesh triangle index of every pixel.
    int triangle_of_pixel(Eigen::Index p) const { return column_triangle_[std::size_t(assignment_[std::size_t(p)])]; }
    /// Mesh triangle behind each column.
    const std::vector<int>& column_triangle() const noexcept { return column_triangle_; }
    const std::vector<int>& pixel_counts() const noexcept { return counts_; }

    /// B^T x.
    Eigen::VectorXd coeffs(const Image& img) const;
    Eigen::VectorXd coeffs(const Eigen::VectorXd& x) const;
    /// B q.
    Image synthesize(const Eigen::VectorXd& q) const;
    void synthesize_add(const Eigen::VectorXd& q, Eigen::VectorXd& out, double scale = 1.0) const;
    /// B B^T x: each triangle's pixels replaced by their mean.
    Image project(const Image& img) const;

    Image column(int k) const;
    Eigen::SparseMatrix<double> matrix() const;

    /// FNV-1a over grid side, vertex coordinates and triangles.
    std::uint64_t hash() const noexcept { return hash_; }

private:
    friend SubspaceBasis rasterize(const TriMesh& mesh, const Grid& grid);
    SubspaceBasis(TriMesh mesh, Grid grid) : mesh_(std::move(mesh)), grid_(grid) {}

    TriMesh mesh_;
    Grid grid_;
    std::vector<int> assignment_;
    std::vector<int> column_triangle_;
    std::vector<int> counts_;
    std::vector<double> inv_sqrt_counts_;
    std::uint64_t hash_ = 0;
};

/// Assigns each pixel center to the triangle containing it. A center on a
/// shared edge or vertex goes to the lowest-index incident triangle.
SubspaceBasis rasterize(const TriMesh& mesh, const Grid& grid);

Image project(const SubspaceBasis& basis, const Image& img);
Eigen::VectorXd coeffs(const SubspaceBasis& basis, const Image& img);
Image synthesize(const SubspaceBasis& basis, const Eigen::VectorXd& q);

/// B = [B_1 ... B_L] over one grid; coefficient vectors are stacked in order.
class StackedBasis {
public:
    explicit StackedBasis(Grid grid) : grid_(grid) {}
    explicit StackedBasis(std::vector<SubspaceBasis> bases);

    void add(SubspaceBasis basis);

    const Grid& grid() const noexcept { return grid_; }
    std::size_t subspace_count() const noexcept { return bases_.size(); }
    const SubspaceBasis& operator[](std::size_t i) const { return bases_.at(i); }
    const std::vector<SubspaceBasis>& bases() const noexcept { return bases_; }
    Eigen::Index total_columns() const noexcept { return offsets_.back(); }
    Eigen::Index offset(std::size_t i) const { return offsets_.at(i); }

    /// B^T x.
    Eigen::VectorXd apply_transpose(const Eigen::VectorXd& x) const;
    /// B q.
    Eigen::VectorXd apply(const Eigen::VectorXd& q) const;

    Eigen::MatrixXd dense() const;

private:
    Grid grid_;
    std::vector<SubspaceBasis> bases_;
    std::vector<Eigen::Index> offsets_{0};
};

}  // namespace meshreg

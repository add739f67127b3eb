#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include <Eigen/Core>

#include "meshreg/error.hpp"

namespace meshreg {

struct Point2 {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Point2&, const Point2&) = default;
};

/// Square pixel grid over the unit square. Pixel (i, j) is row i, column j,
/// centered at ((j + 0.5) / side, (i + 0.5) / side); row index grows with y.
class Grid {
public:
    explicit Grid(int side) : side_(side) {
        if (side < 2) throw ArgumentError("grid side must be >= 2, got " + std::to_string(side));
    }

    int side() const noexcept { return side_; }
    Eigen::Index size() const noexcept { return Eigen::Index(side_) * side_; }
    double pixel_width() const noexcept { return 1.0 / side_; }

    Eigen::Index index(int row, int col) const noexcept { return Eigen::Index(row) * side_ + col; }
    int row_of(Eigen::Index p) const noexcept { return int(p / side_); }
    int col_of(Eigen::Index p) const noexcept { return int(p % side_); }

    Point2 center(int row, int col) const noexcept {
        return {(col + 0.5) / side_, (row + 0.5) / side_};
    }
    Point2 center(Eigen::Index p) const noexcept { return center(row_of(p), col_of(p)); }

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    int side_;
};

/// Real-valued raster on a Grid, row-major.
class Image {
public:
    explicit Image(Grid grid) : grid_(grid), values_(Eigen::VectorXd::Zero(grid.size())) {}

    Image(Grid grid, Eigen::VectorXd values) : grid_(grid), values_(std::move(values)) {
        if (values_.size() != grid_.size())
            throw ArgumentError("image has " + std::to_string(values_.size()) + " values, grid needs " +
                                std::to_string(grid_.size()));
        if (!values_.allFinite()) throw ArgumentError("image values must be finite");
    }

    static Image constant(Grid grid, double c) {
        return Image(grid, Eigen::VectorXd::Constant(grid.size(), c));
    }

    const Grid& grid() const noexcept { return grid_; }
    int side() const noexcept { return grid_.side(); }
    Eigen::Index size() const noexcept { return values_.size(); }

    const Eigen::VectorXd& values() const noexcept { return values_; }
    Eigen::VectorXd& values() noexcept { return values_; }

    double operator()(int row, int col) const { return values_[grid_.index(row, col)]; }
    double& operator()(int row, int col) { return values_[grid_.index(row, col)]; }

private:
    Grid grid_;
    Eigen::VectorXd values_;
};

inline void require_same_grid(const Grid& a, const Grid& b, const char* what) {
    if (!(a == b))
        throw ArgumentError(std::string(what) + ": grid mismatch (" + std::to_string(a.side()) + " vs " +
                            std::to_string(b.side()) + ")");
}

}  // namespace meshreg

#pragma once

#include <filesystem>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "meshreg/grid.hpp"
#include "meshreg/random.hpp"

namespace meshreg {

class SensorArray {
public:
    /// Arbitrary sensor positions (test harnesses). Positions must lie in
    /// [0,1]^2 and be pairwise distinct.
    explicit SensorArray(std::vector<Point2> positions);

    std::size_t size() const noexcept { return positions_.size(); }
    const std::vector<Point2>& positions() const noexcept { return positions_; }
    const Point2& operator[](std::size_t i) const { return positions_.at(i); }

    /// Unordered pairs (i, j), i < j, in lexicographic order; one per measurement.
    std::vector<std::pair<int, int>> pairs() const;

private:
    std::vector<Point2> positions_;
};

/// n sensors on the circle inscribed in the unit square, at angles 2*pi*i/n.
SensorArray place_sensors(int n);

using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Straight-ray forward operator: entry (r, p) is the length of segment r
/// inside pixel p divided by the segment length, so every row sums to 1.
class RayMatrix {
public:
    RayMatrix(Grid grid, SparseRowMatrix matrix);

    const Grid& grid() const noexcept { return grid_; }
    Eigen::Index rows() const noexcept { return matrix_.rows(); }
    Eigen::Index cols() const noexcept { return matrix_.cols(); }
    const SparseRowMatrix& matrix() const noexcept { return matrix_; }

    /// Copy keeping only rows where keep[r] is true.
    RayMatrix select_rows(const std::vector<bool>& keep) const;

private:
    Grid grid_;
    SparseRowMatrix matrix_;
};

/// Normalized intersection lengths of segment a-b with each pixel, by a
/// parametric traversal of the grid lines it crosses. Travel along a grid line
/// is credited to the pixel with the larger row/column index.
std::vector<std::pair<Eigen::Index, double>> ray_row(const Point2& a, const Point2& b, const Grid& grid);

RayMatrix build_ray_matrix(const SensorArray& sensors, const Grid& grid);

struct Measurement {
    Eigen::VectorXd values;
    /// true where the entry was erased (and values is exactly 0).
    std::vector<bool> erased;

    static Measurement clean(Eigen::VectorXd values) {
        const auto m = std::size_t(values.size());
        return {std::move(values), std::vector<bool>(m, false)};
    }
    Eigen::Index size() const noexcept { return values.size(); }
    std::size_t erased_count() const;
};

Measurement forward(const RayMatrix& a, const Image& x);

inline constexpr double kNoiseless = std::numeric_limits<double>::infinity();

/// Adds i.i.d. N(0, s2) noise with s2 = var(y) * 10^(-snr_db/10), where var is
/// the population variance of y.values. snr_db = +inf returns y unchanged.
/// Erased entries stay exactly zero.
Measurement add_gaussian_noise(const Measurement& y, double snr_db, Seed seed);

/// Zeroes each entry independently with probability p and marks it erased.
Measurement erase(const Measurement& y, double p, Seed seed);

/// Text triplets: header "M N nnz", then one "r c v" line per nonzero.
void save_ray_matrix(const RayMatrix& a, const std::filesystem::path& path);
RayMatrix load_ray_matrix(const std::filesystem::path& path);

/// CSV with header "value,mask" and one row per measurement (mask 1 = erased).
void save_measurement(const Measurement& y, const std::filesystem::path& path);
Measurement load_measurement(const std::filesystem::path& path);

}  // namespace meshreg

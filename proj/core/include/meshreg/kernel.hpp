#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "meshreg/grid.hpp"
#include "meshreg/random.hpp"
#include "meshreg/solvers.hpp"

namespace meshreg {

struct KernelOptions {
    int triangles = 20;
    int subspaces = 5;
    int trials = 500;
    Seed seed{};
    /// 0 uses the hardware concurrency. The result does not depend on it.
    int threads = 0;
    MinNormOptions solver{};

    void validate() const;
};

/// Pixels whose distance to the center rounds to `radius`.
struct RadialBin {
    int radius = 0;
    double mean = 0.0;
    double stddev = 0.0;
    int count = 0;
};

struct KernelEstimate {
    Grid grid;
    /// Average of the minimum-norm reconstructions over all trials.
    Image mean_image;
    /// Filled when the input is a single nonzero pixel.
    std::vector<RadialBin> radial_profile;
    std::optional<Eigen::Index> center;
    int trials = 0;
    int triangles = 0;
    int subspaces = 0;
};

/// Trial t draws mesh l from derive_seed(seed, t, l), so runs that differ
/// only in `triangles` or `subspaces` share their random numbers.
KernelEstimate mc_expected_recon(const Image& x, const KernelOptions& opts);

/// Bins of width one pixel from radius 0 to the farthest pixel.
std::vector<RadialBin> radial_profile(const Image& img, Eigen::Index center);

/// Radius at which the profile first falls to half of its center value,
/// linearly interpolated between bins.
double half_width(const std::vector<RadialBin>& profile);

struct IsotropyOptions {
    int sectors = 16;
    double max_cv = 0.15;
    /// Bins whose mean is below this fraction of the center value are skipped.
    double level = 0.1;
    int min_trials = 1000;
};

struct IsotropyReport {
    double angular_cv = 0.0;
    bool pass = false;
    std::string note;
    /// (radius, coefficient of variation across sectors) of every bin used.
    std::vector<std::pair<int, double>> per_bin_cv;
};

IsotropyReport isotropy_check(const Image& mean, Eigen::Index center, int trials, const IsotropyOptions& opts = {});
IsotropyReport isotropy_check(const KernelEstimate& est, const IsotropyOptions& opts = {});

struct ConsistencyReport {
    /// max |E x_hat - superposition| over the central half, over the peak.
    double max_rel_deviation = 0.0;
    bool within_tolerance = false;
    /// Some support pixel lies outside the central half of the grid.
    bool boundary_caveat = false;
    /// within_tolerance, or boundary_caveat (reported but not failed).
    bool pass = false;
};

/// Compares the expected reconstruction of a sparse image with the sum of
/// shifted copies of a single-pixel kernel, weighted by the pixel values.
ConsistencyReport convolution_consistency(const Image& x_multi, const KernelEstimate& multi,
                                          const KernelEstimate& single_pixel, double tolerance = 0.1);

/// CSV with header "radius,mean,std,n".
void save_radial_csv(const std::vector<RadialBin>& profile, const std::filesystem::path& path);

}  // namespace meshreg

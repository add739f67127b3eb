#include "meshreg/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <numbers>
#include <thread>

#include "meshreg/delaunay.hpp"
#include "meshreg/error.hpp"
#include "meshreg/subspace.hpp"

namespace meshreg {

namespace {

// Fixed chunking keeps the summation order independent of the thread count.
constexpr int kChunk = 32;

std::optional<Eigen::Index> single_pixel(const Image& x) {
    std::optional<Eigen::Index> found;
    for (Eigen::Index p = 0; p < x.size(); ++p) {
        if (x.values()[p] == 0.0) continue;
        if (found) return std::nullopt;
        found = p;
    }
    return found;
}

Eigen::VectorXd run_trial(const Image& x, const KernelOptions& opts, int trial) {
    StackedBasis stack(x.grid());
    for (int l = 0; l < opts.subspaces; ++l)
        stack.add(rasterize(mesh_with_k_triangles(opts.triangles, derive_seed(opts.seed, std::uint64_t(trial),
                                                                              std::uint64_t(l))),
                            x.grid()));
    return minnorm_solve(stack, stack.apply_transpose(x.values()), opts.solver).image.values();
}

}  // namespace

void KernelOptions::validate() const {
    if (triangles < 2) throw ArgumentError("kernel: triangles must be >= 2");
    if (subspaces < 1) throw ArgumentError("kernel: subspaces must be >= 1");
    if (trials < 1) throw ArgumentError("kernel: trials must be >= 1");
}

KernelEstimate mc_expected_recon(const Image& x, const KernelOptions& opts) {
    opts.validate();
    const Grid grid = x.grid();
    const int chunks = (opts.trials + kChunk - 1) / kChunk;
    std::vector<Eigen::VectorXd> sums(std::size_t(chunks), Eigen::VectorXd::Zero(grid.size()));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(chunks));

    const bool zero = x.values().isZero(0.0);
    auto work = [&](int first, int stride) {
        for (int c = first; c < chunks; c += stride) {
            if (zero) continue;
            const int end = std::min(opts.trials, (c + 1) * kChunk);
            for (int t = c * kChunk; t < end; ++t) {
                try {
                    sums[std::size_t(c)] += run_trial(x, opts, t);
                } catch (const NumericalError& e) {
                    errors[std::size_t(c)] = std::make_exception_ptr(
                        NumericalError("kernel trial " + std::to_string(t) + ": " + e.what()));
                    break;
                } catch (...) {
                    errors[std::size_t(c)] = std::current_exception();
                    break;
                }
            }
        }
    };
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const int n_threads = std::clamp(opts.threads > 0 ? opts.threads : int(hw), 1, chunks);
    if (n_threads == 1) {
        work(0, 1);
    } else {
        std::vector<std::jthread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(work, t, n_threads);
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

    Eigen::VectorXd total = Eigen::VectorXd::Zero(grid.size());
    for (const auto& s : sums) total += s;
    KernelEstimate est{grid, Image(grid, total / double(opts.trials)), {}, single_pixel(x),
                       opts.trials, opts.triangles, opts.subspaces};
    if (est.center) est.radial_profile = radial_profile(est.mean_image, *est.center);
    return est;
}

std::vector<RadialBin> radial_profile(const Image& img, Eigen::Index center) {
    const Grid& grid = img.grid();
    if (center < 0 || center >= grid.size()) throw ArgumentError("radial_profile: center outside the grid");
    const int cr = grid.row_of(center), cc = grid.col_of(center);
    std::vector<double> sum, sq;
    std::vector<int> count;
    for (Eigen::Index p = 0; p < grid.size(); ++p) {
        const int r = int(std::lround(std::hypot(grid.row_of(p) - cr, grid.col_of(p) - cc)));
        if (std::size_t(r) >= count.size()) {
            sum.resize(std::size_t(r) + 1, 0.0);
            sq.resize(std::size_t(r) + 1, 0.0);
            count.resize(std::size_t(r) + 1, 0);
        }
        const double v = img.values()[p];
        sum[std::size_t(r)] += v;
        sq[std::size_t(r)] += v * v;
        ++count[std::size_t(r)];
    }
    std::vector<RadialBin> bins;
    for (std::size_t r = 0; r < count.size(); ++r) {
        if (count[r] == 0) continue;
        const double mean = sum[r] / count[r];
        const double var = std::max(0.0, sq[r] / count[r] - mean * mean);
        bins.push_back({int(r), mean, std::sqrt(var), count[r]});
    }
    return bins;
}

double half_width(const std::vector<RadialBin>& profile) {
    if (profile.empty()) throw ArgumentError("half_width: empty profile");
    const double half = 0.5 * profile.front().mean;
    for (std::size_t i = 1; i < profile.size(); ++i) {
        if (profile[i].mean <= half) {
            const auto& a = profile[i - 1];
            const auto& b = profile[i];
            const double frac = (a.mean - half) / (a.mean - b.mean);
            return a.radius + frac * (b.radius - a.radius);
        }
    }
    return profile.back().radius;
}

IsotropyReport isotropy_check(const Image& mean, Eigen::Index center, int trials, const IsotropyOptions& opts) {
    if (opts.sectors < 2) throw ArgumentError("isotropy_check: need at least two sectors");
    const Grid& grid = mean.grid();
    const auto profile = radial_profile(mean, center);
    const int cr = grid.row_of(center), cc = grid.col_of(center);
    const double peak = profile.front().mean;

    const std::size_t bins = std::size_t(profile.back().radius) + 1;
    std::vector<std::vector<double>> sum(bins, std::vector<double>(std::size_t(opts.sectors), 0.0));
    std::vector<std::vector<int>> count(bins, std::vector<int>(std::size_t(opts.sectors), 0));
    for (Eigen::Index p = 0; p < grid.size(); ++p) {
        const int dr = grid.row_of(p) - cr, dc = grid.col_of(p) - cc;
        const int r = int(std::lround(std::hypot(dr, dc)));
        if (r == 0) continue;
        double angle = std::atan2(double(dr), double(dc));
        if (angle < 0) angle += 2 * std::numbers::pi;
        const int s = std::min(opts.sectors - 1, int(angle / (2 * std::numbers::pi) * opts.sectors));
        sum[std::size_t(r)][std::size_t(s)] += mean.values()[p];
        ++count[std::size_t(r)][std::size_t(s)];
    }

    IsotropyReport report;
    const int max_radius = std::min({cr, cc, grid.side() - 1 - cr, grid.side() - 1 - cc});
    double cv_sum = 0.0;
    for (const auto& bin : profile) {
        if (bin.radius == 0 || bin.radius > max_radius) continue;
        if (!(bin.mean >= opts.level * peak)) continue;
        std::vector<double> sector_means;
        for (int s = 0; s < opts.sectors; ++s)
            if (count[std::size_t(bin.radius)][std::size_t(s)] > 0)
                sector_means.push_back(sum[std::size_t(bin.radius)][std::size_t(s)] /
                                       count[std::size_t(bin.radius)][std::size_t(s)]);
        if (sector_means.size() < 2) continue;
        double m = 0.0, v = 0.0;
        for (double x : sector_means) m += x;
        m /= double(sector_means.size());
        for (double x : sector_means) v += (x - m) * (x - m);
        v /= double(sector_means.size());
        const double cv = m != 0.0 ? std::sqrt(v) / std::abs(m) : std::numeric_limits<double>::infinity();
        report.per_bin_cv.emplace_back(bin.radius, cv);
        cv_sum += cv;
    }
    if (report.per_bin_cv.empty()) {
        report.note = "no radial bin above the level threshold";
        return report;
    }
    report.angular_cv = cv_sum / double(report.per_bin_cv.size());
    report.pass = report.angular_cv <= opts.max_cv;
    if (trials < opts.min_trials) {
        report.pass = false;
        report.note = "only " + std::to_string(trials) + " trials; Monte Carlo variance too large for the bound (need " +
                      std::to_string(opts.min_trials) + ")";
    }
    return report;
}

IsotropyReport isotropy_check(const KernelEstimate& est, const IsotropyOptions& opts) {
    if (!est.center) throw ArgumentError("isotropy_check: estimate is not from a single-pixel image");
    return isotropy_check(est.mean_image, *est.center, est.trials, opts);
}

ConsistencyReport convolution_consistency(const Image& x_multi, const KernelEstimate& multi,
                                          const KernelEstimate& single_pixel, double tolerance) {
    require_same_grid(x_multi.grid(), multi.grid, "convolution_consistency");
    require_same_grid(x_multi.grid(), single_pixel.grid, "convolution_consistency");
    if (!single_pixel.center) throw ArgumentError("convolution_consistency: kernel estimate needs a single-pixel input");
    const Grid& grid = x_multi.grid();
    const int side = grid.side();
    const int kr = grid.row_of(*single_pixel.center), kc = grid.col_of(*single_pixel.center);
    const int lo = side / 4, hi = side - side / 4;  // central half: [lo, hi)

    ConsistencyReport report;
    Eigen::VectorXd predicted = Eigen::VectorXd::Zero(grid.size());
    for (Eigen::Index p = 0; p < grid.size(); ++p) {
        const double w = x_multi.values()[p];
        if (w == 0.0) continue;
        const int pr = grid.row_of(p), pc = grid.col_of(p);
        if (pr < lo || pr >= hi || pc < lo || pc >= hi) report.boundary_caveat = true;
        for (int r = 0; r < side; ++r) {
            const int sr = r - pr + kr;
            if (sr < 0 || sr >= side) continue;
            for (int c = 0; c < side; ++c) {
                const int sc = c - pc + kc;
                if (sc < 0 || sc >= side) continue;
                predicted[grid.index(r, c)] += w * single_pixel.mean_image(sr, sc);
            }
        }
    }
    double peak = 0.0, dev = 0.0;
    for (int r = lo; r < hi; ++r)
        for (int c = lo; c < hi; ++c) {
            const Eigen::Index p = grid.index(r, c);
            peak = std::max(peak, std::abs(predicted[p]));
            dev = std::max(dev, std::abs(predicted[p] - multi.mean_image.values()[p]));
        }
    report.max_rel_deviation = peak > 0.0 ? dev / peak : dev;
    report.within_tolerance = report.max_rel_deviation <= tolerance;
    report.pass = report.within_tolerance || report.boundary_caveat;
    return report;
}

void save_radial_csv(const std::vector<RadialBin>& profile, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError(path.string(), "cannot open for writing: " + path.string());
    out.precision(17);
    out << "radius,mean,std,n\n";
    for (const auto& b : profile) out << b.radius << ',' << b.mean << ',' << b.stddev << ',' << b.count << '\n';
    if (!out) throw IoError(path.string(), "write failed: " + path.string());
}

}  // namespace meshreg

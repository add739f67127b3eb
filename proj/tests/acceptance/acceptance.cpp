// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails or overruns its time budget.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "meshreg/delaunay.hpp"
#include "meshreg/estimators.hpp"
#include "meshreg/gaussian_projector.hpp"
#include "meshreg/kernel.hpp"
#include "meshreg/metrics.hpp"
#include "meshreg/phantoms.hpp"
#include "meshreg/solvers.hpp"
#include "meshreg/subspace.hpp"
#include "meshreg/tomography.hpp"
#include "oracles.hpp"

using namespace meshreg;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

constexpr Seed kRoot{20240611};
const Grid kGrid(32);

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); }

// ---------------------------------------------------------------------------
// Shared reconstruction setup for criteria 6-9.

struct Bench {
    RayMatrix a = build_ray_matrix(place_sensors(25), kGrid);
    StackedBasis stack{kGrid};
    int rejected_meshes = 0;
    std::vector<Image> test, validation;

    Bench() {
        // Meshes whose triangles are not all crossed by some ray give a
        // rank-deficient A B; they are redrawn.
        for (std::uint64_t l = 0; stack.subspace_count() < 10; ++l) {
            for (std::uint64_t attempt = 0;; ++attempt) {
                auto basis = rasterize(mesh_with_k_triangles(50, derive_seed(kRoot, 600 + l, attempt)), kGrid);
                try {
                    build_oblique(a, basis);
                } catch (const NumericalError&) {
                    ++rejected_meshes;
                    continue;
                }
                stack.add(std::move(basis));
                break;
            }
        }
        test = shapes(50, derive_seed(kRoot, 2));
        validation = shapes(5, derive_seed(kRoot, 3));
    }

    static std::vector<Image> shapes(int count, Seed seed) {
        ShapesConfig cfg;
        cfg.count = count;
        cfg.side = kGrid.side();
        cfg.seed = seed;
        return gen_shapes(cfg);
    }
};

Bench& bench() {
    static Bench b;
    return b;
}

// Measurements of image j under one corruption, with fixed per-image seeds.
struct Corruption {
    double snr_db = kNoiseless;
    double erasure_p = 0.0;
    std::uint64_t stream = 0;

    Measurement apply(const RayMatrix& a, const Image& x, std::size_t j) const {
        Measurement y = forward(a, x);
        y = add_gaussian_noise(y, snr_db, derive_seed(kRoot, 900 + stream, j));
        return erase(y, erasure_p, derive_seed(kRoot, 950 + stream, j));
    }
};

SolveOptions tv_options(double weight) {
    SolveOptions o;
    o.tv_weight = weight;
    o.max_iters = 1000;
    return o;
}

// Mean output SNR over `images` with the TV weight chosen on the validation set.
double tuned_mean_snr(const std::vector<Image>& validation, const std::vector<Image>& images,
                      const std::function<Image(const Image&, std::size_t, bool, double)>& recon) {
    const auto grid = tv_weight_grid(9);
    const double weight = select_tv_weight(grid, [&](double w) {
        double s = 0.0;
        for (std::size_t j = 0; j < validation.size(); ++j) s += output_snr(validation[j], recon(validation[j], j, true, w));
        return s;
    });
    double s = 0.0;
    for (std::size_t j = 0; j < images.size(); ++j) s += output_snr(images[j], recon(images[j], j, false, weight));
    return s / double(images.size());
}

double direct_tv_snr(const Corruption& c) {
    auto& b = bench();
    return tuned_mean_snr(b.validation, b.test, [&](const Image& x, std::size_t j, bool val, double w) {
        return tv_direct(b.a, c.apply(b.a, x, j + (val ? 1000 : 0)), tv_options(w)).image;
    });
}

// ---------------------------------------------------------------------------

Outcome geometry() {
    int violations = 0, uncovered = 0, misassigned = 0, meshes = 0;
    long double worst_area = 0;
    for (std::uint64_t i = 0; i < 100; ++i) {
        CounterRng rng(derive_seed(kRoot, 100, i));
        std::vector<Point2> pts(30);
        for (auto& p : pts) p = {rng.uniform(), rng.uniform()};
        const TriMesh mesh = delaunay_triangulate(pts);
        violations += oracle::empty_circle_violations(mesh, 1e-9);
        worst_area = std::max(worst_area, std::fabs(oracle::total_area(mesh) - 1.0L));
        const SubspaceBasis basis = rasterize(mesh, kGrid);
        for (Eigen::Index p = 0; p < kGrid.size(); ++p) {
            bool covered = false;
            for (std::size_t t = 0; t < mesh.triangles.size() && !covered; ++t)
                covered = oracle::contains(mesh, t, kGrid.center(p));
            uncovered += !covered;
            misassigned += !oracle::contains(mesh, std::size_t(basis.triangle_of_pixel(p)), kGrid.center(p));
        }
        int total = 0;
        for (int c : basis.pixel_counts()) total += c;
        if (total != kGrid.size()) ++misassigned;
        ++meshes;
    }
    return {violations == 0 && uncovered == 0 && misassigned == 0 && worst_area < 1e-12L,
            fmt("%d meshes, %d circumcircle violations, %d uncovered and %d misassigned pixels, area error %.1Le",
                meshes, violations, uncovered, misassigned, worst_area)};
}

Outcome projector() {
    double idem = 0, adjoint = 0, parseval = 0, constant = 0;
    for (std::uint64_t i = 0; i < 100; ++i) {
        CounterRng rng(derive_seed(kRoot, 200, i));
        const int k = 10 + int(rng() % 71);
        const SubspaceBasis basis = rasterize(mesh_with_k_triangles(k, derive_seed(kRoot, 201, i)), kGrid);
        Eigen::VectorXd xv(kGrid.size()), zv(kGrid.size());
        for (auto& v : xv) v = rng.uniform();
        for (auto& v : zv) v = rng.uniform() - 0.5;
        const Image x(kGrid, xv), z(kGrid, zv);
        const Image px = basis.project(x);
        idem = std::max(idem, (basis.project(px).values() - px.values()).lpNorm<Eigen::Infinity>());
        adjoint = std::max(adjoint, std::abs(px.values().dot(zv) - xv.dot(basis.project(z).values())) / (xv.norm() * zv.norm()));
        parseval = std::max(parseval, std::abs(basis.coeffs(x).squaredNorm() - px.values().squaredNorm()) / xv.squaredNorm());
        const double c = 0.25 + rng.uniform();
        constant = std::max(constant, (basis.project(Image::constant(kGrid, c)).values().array() - c).abs().maxCoeff());
    }
    const double tol = 1e-10;
    return {idem <= tol && adjoint <= tol && parseval <= tol && constant <= tol,
            fmt("max errors: idempotence %.1e, self-adjointness %.1e, Parseval %.1e, constants %.1e", idem, adjoint,
                parseval, constant)};
}

Outcome energy_ratio() {
    const int draws = 2000;
    std::vector<double> ratios;
    std::normal_distribution<double> normal;
    for (std::uint64_t i = 0; i < draws; ++i) {
        const Eigen::MatrixXd p = gaussian_subspace_projector(16, 4, derive_seed(kRoot, 300, i));
        CounterRng rng(derive_seed(kRoot, 301, i));
        Eigen::VectorXd x(16);
        for (auto& v : x) v = normal(rng);
        ratios.push_back((p * x).squaredNorm() / x.squaredNorm());
    }
    const double m = mean(ratios);
    double var = 0;
    for (double r : ratios) var += (r - m) * (r - m);
    const double se = std::sqrt(var / (draws - 1) / draws);
    return {std::abs(m - 0.25) <= 3 * se, fmt("mean ratio %.5f, standard error %.5f, |mean - 0.25| = %.2f SE", m, se,
                                              std::abs(m - 0.25) / se)};
}

Outcome ray_matrix() {
    const SensorArray sensors = place_sensors(25);
    const RayMatrix a = build_ray_matrix(sensors, kGrid);
    const auto pairs = sensors.pairs();
    double worst_sum = 0;
    for (Eigen::Index r = 0; r < a.rows(); ++r) worst_sum = std::max(worst_sum, std::abs(a.matrix().row(r).sum() - 1.0));
    double worst_entry = 0;
    CounterRng rng(derive_seed(kRoot, 400));
    for (int i = 0; i < 50; ++i) {
        const auto r = Eigen::Index(rng() % std::uint64_t(a.rows()));
        const auto [si, sj] = pairs[std::size_t(r)];
        auto ref = oracle::supersample_ray(sensors[std::size_t(si)], sensors[std::size_t(sj)], kGrid);
        for (SparseRowMatrix::InnerIterator it(a.matrix(), r); it; ++it) ref[it.col()] -= it.value();
        for (const auto& [p, d] : ref) worst_entry = std::max(worst_entry, std::abs(d));
    }
    return {a.rows() == 300 && worst_sum <= 1e-9 && worst_entry <= 1e-3,
            fmt("%ld rows, worst row-sum error %.1e, worst entry vs supersampling %.1e", long(a.rows()), worst_sum,
                worst_entry)};
}

Outcome kernel() {
    const std::pair<int, int> center{16, 16};
    const Image x = point_image(kGrid, std::span(&center, 1));
    const int ks[] = {10, 20, 40}, ls[] = {1, 3, 8};
    double hw[3][3];
    std::string table;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            KernelOptions o;
            o.triangles = ks[i];
            o.subspaces = ls[j];
            o.trials = 2000;
            o.seed = derive_seed(kRoot, 500);
            const auto est = mc_expected_recon(x, o);
            hw[i][j] = half_width(est.radial_profile);
            table += fmt(" K%d/L%d=%.3f", ks[i], ls[j], hw[i][j]);
        }
    int violations = 0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j + 1 < 3; ++j) {
            violations += hw[i][j + 1] > hw[i][j];
            violations += hw[j + 1][i] > hw[j][i];
        }

    KernelOptions o;
    o.triangles = 20;
    o.subspaces = 5;
    o.trials = 2000;
    o.seed = derive_seed(kRoot, 501);
    const auto single = mc_expected_recon(x, o);
    const IsotropyReport iso = isotropy_check(single);
    const std::pair<int, int> three[] = {{13, 14}, {17, 19}, {19, 13}};
    Image multi = point_image(kGrid, three);
    multi(17, 19) = 0.7;
    multi(19, 13) = 0.5;
    const auto combo = convolution_consistency(multi, mc_expected_recon(multi, o), single, 0.1);

    const bool pass = violations <= 1 && iso.pass && combo.within_tolerance && !combo.boundary_caveat;
    return {pass, fmt("half-widths%s; %d monotonicity violations; angular CV %.3f; superposition deviation %.3f",
                      table.c_str(), violations, iso.angular_cv, combo.max_rel_deviation)};
}

Outcome oblique() {
    auto& b = bench();
    double consistency = 0, idempotence = 0;
    std::vector<ObliqueOperator> ops;
    for (const auto& basis : b.stack.bases()) {
        ops.push_back(build_oblique(b.a, basis));
        const Eigen::MatrixXd fa = ops.back().matrix() * Eigen::MatrixXd(b.a.matrix());
        for (int k = 0; k < basis.column_count(); ++k) {
            const Eigen::VectorXd col = basis.column(k).values();
            consistency = std::max(consistency, (fa * col - col).norm() / col.norm());
        }
        CounterRng rng(derive_seed(kRoot, 610, ops.size()));
        Eigen::VectorXd q(basis.column_count());
        for (auto& v : q) v = rng.uniform();
        const Eigen::VectorXd xs = basis.synthesize(q).values();
        consistency = std::max(consistency, (fa * xs - xs).norm() / xs.norm());
        idempotence = std::max(idempotence, (fa * fa - fa).norm());
    }
    int dominated = 0;
    std::vector<double> gap;
    for (const auto& x : b.test) {
        const Measurement y = forward(b.a, x);
        double ob = 0, orth = 0;
        for (std::size_t l = 0; l < ops.size(); ++l) {
            ob += (ops[l].estimate(y.values) - x.values()).squaredNorm() / double(kGrid.size());
            orth += (b.stack[l].project(x).values() - x.values()).squaredNorm() / double(kGrid.size());
        }
        dominated += ob >= orth;
        gap.push_back((ob - orth) / double(ops.size()));
    }
    const bool pass = consistency <= 1e-8 && idempotence <= 1e-8 && dominated >= 45 && mean(gap) > 0;
    return {pass, fmt("consistency %.1e, idempotence %.1e, oblique MSE >= orthogonal MSE on %d/50 images, mean gap %.2e "
                      "(%d rank-deficient meshes redrawn)",
                      consistency, idempotence, dominated, mean(gap), b.rejected_meshes)};
}

double recombined_snr(const std::vector<Image>& validation, const std::vector<Image>& images,
                      const std::function<Eigen::VectorXd(const Image&, std::size_t, bool)>& coeffs) {
    auto& b = bench();
    std::vector<Eigen::VectorXd> qv, qt;
    for (std::size_t j = 0; j < validation.size(); ++j) qv.push_back(coeffs(validation[j], j, true));
    for (std::size_t j = 0; j < images.size(); ++j) qt.push_back(coeffs(images[j], j, false));
    return tuned_mean_snr(validation, images, [&](const Image&, std::size_t j, bool val, double w) {
        return solve_reformulated(b.stack, val ? qv[j] : qt[j], tv_options(w)).image;
    });
}

Outcome reconstruction() {
    auto& b = bench();
    const double direct = direct_tv_snr({});
    const double oracle =
        recombined_snr(b.validation, b.test, [&](const Image& x, std::size_t, bool) { return b.stack.apply_transpose(x.values()); });
    return {oracle - direct >= 3.0, fmt("oracle recombination %.2f dB, direct TV %.2f dB, gain %.2f dB", oracle, direct,
                                        oracle - direct)};
}

// Per-mesh affine estimators trained on warm starts of `corruption`.
struct Learned {
    std::vector<TrainReport> reports;

    Eigen::VectorXd coeffs(const Image& warm) const {
        auto& b = bench();
        Eigen::VectorXd q(b.stack.total_columns());
        for (std::size_t l = 0; l < b.stack.subspace_count(); ++l)
            q.segment(b.stack.offset(l), b.stack[l].column_count()) = reports[l].estimator.estimate(b.stack[l], warm);
        return q;
    }
};

Learned train_learned(const Corruption& c, Seed seed) {
    auto& b = bench();
    const auto images = Bench::shapes(500, derive_seed(seed, 1));
    std::vector<TrainingExample> data;
    for (std::size_t j = 0; j < images.size(); ++j)
        data.push_back({images[j], nnls(b.a, c.apply(b.a, images[j], 5000 + j)).image});
    TrainConfig cfg;
    cfg.epochs = 100;
    cfg.seed = derive_seed(seed, 2);
    return {train_ensemble(data, b.stack, cfg, 0)};
}

double learned_snr(const Learned& model, const Corruption& c) {
    auto& b = bench();
    return recombined_snr(b.validation, b.test, [&](const Image& x, std::size_t j, bool val) {
        return model.coeffs(nnls(b.a, c.apply(b.a, x, j + (val ? 1000 : 0))).image);
    });
}

Outcome learning() {
    auto& b = bench();
    const Learned model = train_learned({}, derive_seed(kRoot, 800));
    int monotone = 0, wins = 0;
    for (std::size_t l = 0; l < model.reports.size(); ++l) {
        const auto& loss = model.reports[l].train_loss;
        std::vector<double> running(loss.size());
        std::partial_sum(loss.begin(), loss.end(), running.begin(), [](double a, double v) { return std::min(a, v); });
        monotone += std::is_sorted(running.rbegin(), running.rend()) && running.back() < loss.front();
        const ObliqueOperator op = build_oblique(b.a, b.stack[l]);
        double learned = 0, ob = 0;
        for (const auto& x : b.test) {
            const Measurement y = forward(b.a, x);
            learned += projection_mse(b.stack[l], model.reports[l].estimator.estimate(b.stack[l], nnls(b.a, y).image), x);
            ob += projection_mse(b.stack[l], oblique_coeffs(op, y), x);
        }
        wins += learned < ob;
    }
    const double direct = direct_tv_snr({});
    const double learned = learned_snr(model, {});
    const int meshes = int(model.reports.size());
    const bool pass = monotone == meshes && wins >= int(std::ceil(0.7 * meshes)) && learned > direct;
    return {pass, fmt("loss running minimum decreasing on %d/%d meshes; learned MSE below oblique on %d/%d meshes; "
                      "end-to-end learned %.2f dB vs direct TV %.2f dB",
                      monotone, meshes, wins, meshes, learned, direct)};
}

Outcome robustness() {
    const Corruption clean{}, noisy{10.0, 0.0, 1}, erased{kNoiseless, 0.125, 2};
    const Learned model = train_learned({10.0, 0.0, 3}, derive_seed(kRoot, 810));
    const double d_clean = direct_tv_snr(clean), l_clean = learned_snr(model, clean);
    std::string detail = fmt("clean: learned %.2f dB, direct %.2f dB", l_clean, d_clean);
    bool pass = true;
    for (const auto& [name, c] : {std::pair{"10 dB noise", noisy}, std::pair{"erasure 1/8", erased}}) {
        const double dd = d_clean - direct_tv_snr(c);
        const double dl = l_clean - learned_snr(model, c);
        pass = pass && dd > 0 && dl < 0.5 * dd;
        detail += fmt("; %s: learned loses %.2f dB, direct loses %.2f dB", name, dl, dd);
    }
    return {pass, detail};
}

Outcome metrics() {
    CounterRng rng(derive_seed(kRoot, 1000));
    bool capped = true;
    for (int i = 0; i < 20; ++i) {
        Eigen::VectorXd x(64);
        for (auto& v : x) v = rng.uniform();
        const double a = 0.1 + 5 * rng.uniform(), b = 4 * rng.uniform() - 2;
        capped = capped && output_snr(x, (a * x).array() + b) == kSnrCapDb;
    }
    const Eigen::Vector3d x(1, 2, 3), xhat(1, 1, 2);
    const double closed = output_snr(x, xhat);
    const double searched = oracle::grid_search_snr(x, xhat, -5, 5, -5, 5);

    const RayMatrix a = build_ray_matrix(place_sensors(25), kGrid);
    const Image img = Bench::shapes(1, derive_seed(kRoot, 1001)).front();
    const Measurement y = forward(a, img);
    std::vector<double> snrs;
    for (std::uint64_t s = 0; s < 20; ++s)
        snrs.push_back(input_snr(y.values, add_gaussian_noise(y, 10.0, derive_seed(kRoot, 1002, s)).values));
    // One draw on M=300 rows scatters by about 0.35 dB, so the assessed value
    // is the mean over independent draws; the worst draw is reported alongside.
    const double mean = std::accumulate(snrs.begin(), snrs.end(), 0.0) / double(snrs.size());
    const double worst = *std::max_element(snrs.begin(), snrs.end(), [](double p, double q) {
        return std::abs(p - 10) < std::abs(q - 10);
    });
    const bool pass = capped && std::abs(closed - searched) <= 0.01 && std::abs(mean - 10) <= 0.5;
    return {pass, fmt("affine cap %s; closed form %.4f dB vs grid search %.4f dB; input SNR at 10 dB: mean of 20 %.3f dB "
                      "(worst single draw %.3f dB)",
                      capped ? "hit" : "missed", closed, searched, mean, worst)};
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        double budget_s;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria = {
        {1, "geometry", 10, geometry},
        {2, "projector", 10, projector},
        {3, "gaussian energy ratio", 30, energy_ratio},
        {4, "ray matrix", 60, ray_matrix},
        {5, "equivalent kernel", 600, kernel},
        {6, "oblique projection", 120, oblique},
        {7, "reconstruction direction", 600, reconstruction},
        {8, "learned estimators", 900, learning},
        {9, "corruption robustness", 900, robustness},
        {10, "snr metrics", 10, metrics},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool pass = o.pass && secs <= c.budget_s;
        failures += !pass;
        std::printf("%s criterion %d (%s): %s [%.1f s of %.0f s]\n", pass ? "PASS" : "FAIL", c.id, c.name,
                    o.detail.c_str(), secs, c.budget_s);
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}

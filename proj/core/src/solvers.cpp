#include "meshreg/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "meshreg/random.hpp"

namespace meshreg {

namespace {

// Power iteration can only underestimate the spectral norm.
constexpr double kStepSafety = 1.05;

double power_iteration(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& normal_map, Eigen::Index n,
                       int iters, double tol) {
    CounterRng rng(Seed{0x706f776572ULL});
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = 0.5 + rng.uniform();
    v.normalize();
    double estimate = 0.0;
    for (int it = 0; it < iters; ++it) {
        Eigen::VectorXd w = normal_map(v);
        const double next = v.dot(w);
        const double norm = w.norm();
        if (norm == 0.0) return 0.0;
        v = w / norm;
        const bool done = std::abs(next - estimate) <= tol * std::abs(next);
        estimate = next;
        if (done) break;
    }
    return estimate;
}

void project_box(Eigen::VectorXd& x, const std::optional<Box>& box) {
    if (box) x = x.cwiseMax(box->lo).cwiseMin(box->hi);
}

Eigen::VectorXd box_start(Eigen::Index n, const std::optional<Box>& box) {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    project_box(x, box);
    return x;
}

// Forward differences with a zero difference past the last row/column.
// Output layout: [horizontal (N), vertical (N)].
Eigen::VectorXd gradient(const Eigen::VectorXd& x, int side) {
    const Eigen::Index n = x.size();
    Eigen::VectorXd g = Eigen::VectorXd::Zero(2 * n);
    for (int i = 0; i < side; ++i) {
        for (int j = 0; j < side; ++j) {
            const Eigen::Index p = Eigen::Index(i) * side + j;
            if (j + 1 < side) g[p] = x[p + 1] - x[p];
            if (i + 1 < side) g[n + p] = x[p + side] - x[p];
        }
    }
    return g;
}

Eigen::VectorXd gradient_adjoint(const Eigen::VectorXd& g, int side) {
    const Eigen::Index n = g.size() / 2;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < side; ++i) {
        for (int j = 0; j < side; ++j) {
            const Eigen::Index p = Eigen::Index(i) * side + j;
            if (j + 1 < side) {
                x[p + 1] += g[p];
                x[p] -= g[p];
            }
            if (i + 1 < side) {
                x[p + side] += g[n + p];
                x[p] -= g[n + p];
            }
        }
    }
    return x;
}

bool relative_change_below(double previous, double current, double tol) {
    const double scale = std::max(std::abs(previous), std::numeric_limits<double>::min());
    return std::abs(previous - current) <= tol * scale;
}

Measurement usable_rows(const RayMatrix& a, const Measurement& y, const SolveOptions& opts, RayMatrix& reduced,
                        bool& use_reduced) {
    if (y.size() != a.rows())
        throw ArgumentError("measurement length " + std::to_string(y.size()) + " does not match ray count " +
                            std::to_string(a.rows()));
    use_reduced = opts.drop_erased && y.erased_count() > 0;
    if (!use_reduced) return y;
    std::vector<bool> keep(y.erased.size());
    for (std::size_t r = 0; r < keep.size(); ++r) keep[r] = !y.erased[r];
    reduced = a.select_rows(keep);
    Eigen::VectorXd values(reduced.rows());
    Eigen::Index k = 0;
    for (std::size_t r = 0; r < keep.size(); ++r)
        if (keep[r]) values[k++] = y.values[Eigen::Index(r)];
    return Measurement::clean(std::move(values));
}

}  // namespace

void SolveOptions::validate() const {
    if (max_iters < 1) throw ArgumentError("SolveOptions: max_iters must be >= 1");
    if (!(tol > 0.0)) throw ArgumentError("SolveOptions: tol must be > 0");
    if (box && !(box->lo < box->hi)) throw ArgumentError("SolveOptions: box needs lo < hi");
    if (!(tv_weight >= 0.0) || !std::isfinite(tv_weight)) throw ArgumentError("SolveOptions: tv_weight must be >= 0");
    if (power_iters < 1) throw ArgumentError("SolveOptions: power_iters must be >= 1");
}

double estimate_normal_norm(const LinearOperator& a, int iters, double tol) {
    return power_iteration([&a](const Eigen::VectorXd& v) { return a.adjoint(a.apply(v)); }, a.cols(), iters, tol);
}

double tv_seminorm(const Image& img) { return gradient(img.values(), img.side()).lpNorm<1>(); }

SolveResult projected_least_squares(const LinearOperator& a, const Eigen::VectorXd& y, const Grid& grid,
                                    const SolveOptions& opts, double data_scale) {
    opts.validate();
    if (a.cols() != grid.size()) throw ArgumentError("projected_least_squares: operator/grid size mismatch");
    if (y.size() != a.rows()) throw ArgumentError("projected_least_squares: data length mismatch");
    if (!(data_scale > 0.0)) throw ArgumentError("projected_least_squares: data_scale must be > 0");

    auto objective = [&](const Eigen::VectorXd& x) { return data_scale * (a.apply(x) - y).squaredNorm(); };
    auto gradient_at = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
        return (2.0 * data_scale) * a.adjoint(a.apply(x) - y);
    };

    const double lipschitz = kStepSafety * 2.0 * data_scale * estimate_normal_norm(a, opts.power_iters, opts.power_tol);
    Eigen::VectorXd x = box_start(a.cols(), opts.box);
    double fx = objective(x);

    SolveResult result{Image(grid), fx, 0, false, {}};
    if (fx == 0.0 || lipschitz == 0.0) {
        result.image = Image(grid, x);
        result.converged = true;
        return result;
    }
    const double step = 1.0 / lipschitz;

    Eigen::VectorXd z = x;  // extrapolated point
    double t = 1.0;
    for (int it = 1; it <= opts.max_iters; ++it) {
        Eigen::VectorXd next = z - step * gradient_at(z);
        project_box(next, opts.box);
        double fnext = objective(next);
        if (!std::isfinite(fnext))
            throw NumericalError("projected_least_squares: objective is not finite at iteration " + std::to_string(it));
        if (fnext > fx) {
            // Restart momentum with a plain projected-gradient step from x.
            t = 1.0;
            next = x - step * gradient_at(x);
            project_box(next, opts.box);
            fnext = objective(next);
        }
        const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        z = next + ((t - 1.0) / t_next) * (next - x);
        t = t_next;

        const bool done = relative_change_below(fx, fnext, opts.tol);
        x = std::move(next);
        fx = fnext;
        result.history.push_back(fx);
        result.iterations = it;
        if (done || fx == 0.0) {
            result.converged = true;
            break;
        }
    }
    result.image = Image(grid, x);
    result.objective = fx;
    return result;
}

SolveResult tv_primal_dual(const LinearOperator& a, const Eigen::VectorXd& y, const Grid& grid,
                           const SolveOptions& opts) {
    opts.validate();
    if (a.cols() != grid.size()) throw ArgumentError("tv_primal_dual: operator/grid size mismatch");
    if (y.size() != a.rows()) throw ArgumentError("tv_primal_dual: data length mismatch");
    const int side = grid.side();
    const double lambda = opts.tv_weight;

    auto objective = [&](const Eigen::VectorXd& x) {
        return (a.apply(x) - y).squaredNorm() + lambda * gradient(x, side).lpNorm<1>();
    };

    // ||K||^2 for K = [A; D].
    const double k_norm_sq = power_iteration(
        [&](const Eigen::VectorXd& v) { return Eigen::VectorXd(a.adjoint(a.apply(v)) + gradient_adjoint(gradient(v, side), side)); },
        a.cols(), opts.power_iters, opts.power_tol);
    const double k_norm = std::sqrt(kStepSafety * std::max(k_norm_sq, 1e-12));
    const double tau = 1.0 / k_norm;
    const double sigma = 1.0 / k_norm;

    Eigen::VectorXd x = box_start(a.cols(), opts.box);
    Eigen::VectorXd x_bar = x;
    Eigen::VectorXd dual_data = Eigen::VectorXd::Zero(a.rows());
    Eigen::VectorXd dual_tv = Eigen::VectorXd::Zero(2 * a.cols());

    double fx = objective(x);
    SolveResult result{Image(grid), fx, 0, false, {}};
    Eigen::VectorXd best = x;
    double best_f = fx;
    if (fx == 0.0) {
        result.image = Image(grid, x);
        result.converged = true;
        return result;
    }

    for (int it = 1; it <= opts.max_iters; ++it) {
        // prox of the conjugate of ||u - y||^2, then projection onto the l-inf ball of radius lambda.
        dual_data = (dual_data + sigma * (a.apply(x_bar) - y)) / (1.0 + 0.5 * sigma);
        dual_tv = (dual_tv + sigma * gradient(x_bar, side)).cwiseMax(-lambda).cwiseMin(lambda);

        Eigen::VectorXd next = x - tau * (a.adjoint(dual_data) + gradient_adjoint(dual_tv, side));
        project_box(next, opts.box);
        x_bar = 2.0 * next - x;

        const double fnext = objective(next);
        if (!std::isfinite(fnext))
            throw NumericalError("tv_primal_dual: objective is not finite at iteration " + std::to_string(it));
        const double step_norm = (next - x).norm();
        const bool done = relative_change_below(fx, fnext, opts.tol) &&
                          step_norm <= std::sqrt(opts.tol) * std::max(1.0, next.norm());
        x = std::move(next);
        fx = fnext;
        if (fx < best_f) {
            best_f = fx;
            best = x;
        }
        result.history.push_back(fx);
        result.iterations = it;
        if (done) {
            result.converged = true;
            break;
        }
    }
    if (result.converged) {
        result.image = Image(grid, x);
        result.objective = fx;
    } else {
        result.image = Image(grid, best);
        result.objective = best_f;
    }
    return result;
}

SolveResult nnls(const RayMatrix& a, const Measurement& y, const SolveOptions& opts) {
    RayMatrix reduced = a;
    bool use_reduced = false;
    const Measurement data = usable_rows(a, y, opts, reduced, use_reduced);
    const SparseOperator op(use_reduced ? reduced.matrix() : a.matrix());
    return projected_least_squares(op, data.values, a.grid(), opts, 0.5);
}

SolveResult solve_reformulated(const StackedBasis& b, const Eigen::VectorXd& q, const SolveOptions& opts) {
    if (q.size() != b.total_columns())
        throw ArgumentError("solve_reformulated: expected " + std::to_string(b.total_columns()) +
                            " coefficients, got " + std::to_string(q.size()));
    const StackedAnalysisOperator op(b);
    if (opts.tv_weight == 0.0) return projected_least_squares(op, q, b.grid(), opts, 1.0);
    return tv_primal_dual(op, q, b.grid(), opts);
}

SolveResult tv_direct(const RayMatrix& a, const Measurement& y, const SolveOptions& opts) {
    RayMatrix reduced = a;
    bool use_reduced = false;
    const Measurement data = usable_rows(a, y, opts, reduced, use_reduced);
    const SparseOperator op(use_reduced ? reduced.matrix() : a.matrix());
    if (opts.tv_weight == 0.0) return projected_least_squares(op, data.values, a.grid(), opts, 1.0);
    return tv_primal_dual(op, data.values, a.grid(), opts);
}

MinNormResult minnorm_solve(const StackedBasis& b, const Eigen::VectorXd& q, const MinNormOptions& opts) {
    if (q.size() != b.total_columns())
        throw ArgumentError("minnorm_solve: expected " + std::to_string(b.total_columns()) + " coefficients, got " +
                            std::to_string(q.size()));
    const Eigen::Index n = b.grid().size();
    MinNormResult result{Image(b.grid()), 0.0, 0.0, 0};
    const double q_norm = q.norm();
    if (q_norm == 0.0) return result;

    const int max_iters = opts.max_iters > 0 ? opts.max_iters : int(4 * std::min(n, b.total_columns()) + 50);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd r = q;
    Eigen::VectorXd s = b.apply(r);
    const double s0_norm = s.norm();
    if (s0_norm == 0.0) return result;  // q orthogonal to range(B^T): x = 0
    Eigen::VectorXd p = s;
    double gamma = s.squaredNorm();

    for (int it = 1; it <= max_iters; ++it) {
        const Eigen::VectorXd t = b.apply_transpose(p);
        const double tt = t.squaredNorm();
        if (tt == 0.0) break;
        const double alpha = gamma / tt;
        x += alpha * p;
        r -= alpha * t;
        s = b.apply(r);
        const double gamma_next = s.squaredNorm();
        result.iterations = it;
        result.residual = r.norm() / q_norm;
        result.normal_residual = std::sqrt(gamma_next) / s0_norm;
        if (result.residual <= opts.tol || result.normal_residual <= opts.tol) {
            result.image = Image(b.grid(), std::move(x));
            return result;
        }
        p = s + (gamma_next / gamma) * p;
        gamma = gamma_next;
    }
    throw NumericalError("minnorm_solve: CGLS stagnated after " + std::to_string(result.iterations) +
                         " iterations, residual " + std::to_string(result.residual) + ", normal residual " +
                         std::to_string(result.normal_residual));
}

std::vector<double> tv_weight_grid(int count) {
    if (count < 2) return {1e-4};
    std::vector<double> out;
    for (int i = 0; i < count; ++i) out.push_back(std::pow(10.0, -4.0 + 4.0 * i / (count - 1)));
    return out;
}

double select_tv_weight(std::span<const double> candidates, const std::function<double(double)>& score) {
    if (candidates.empty()) throw ArgumentError("select_tv_weight: no candidates");
    double best = candidates.front();
    double best_score = -std::numeric_limits<double>::infinity();
    for (double c : candidates) {
        const double s = score(c);
        if (s > best_score) {
            best_score = s;
            best = c;
        }
    }
    return best;
}

}  // namespace meshreg

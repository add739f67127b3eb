#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "meshreg/linear_operator.hpp"
#include "meshreg/subspace.hpp"
#include "meshreg/tomography.hpp"

namespace meshreg {

struct Box {
    double lo = 0.0;
    double hi = 1.0;
};

struct SolveOptions {
    int max_iters = 500;
    /// Stop when the relative objective change drops below tol.
    double tol = 1e-8;
    std::optional<Box> box = Box{};
    /// Weight of the anisotropic TV seminorm; 0 disables it.
    double tv_weight = 0.0;
    /// Drop erased measurement rows (true) or fit them to zero (false).
    bool drop_erased = true;
    int power_iters = 20;
    double power_tol = 1e-6;

    void validate() const;
};

struct SolveResult {
    Image image;
    double objective = 0.0;
    int iterations = 0;
    bool converged = false;
    /// Objective after every iteration.
    std::vector<double> history;
};

/// Largest eigenvalue of A^T A by power iteration from a fixed start vector.
double estimate_normal_norm(const LinearOperator& a, int iters = 20, double tol = 1e-6);

/// Anisotropic TV: sum of |horizontal| + |vertical| forward differences.
double tv_seminorm(const Image& img);

/// FISTA with function-value restart for min c*||Ax - y||^2 over the box.
/// Every accepted step decreases the objective, so the history is monotone.
SolveResult projected_least_squares(const LinearOperator& a, const Eigen::VectorXd& y, const Grid& grid,
                                    const SolveOptions& opts, double data_scale = 0.5);

/// Chambolle-Pock for min ||Ax - y||^2 + tv_weight * TV(x) over the box.
/// Returns the final iterate when converged, otherwise the best iterate seen.
SolveResult tv_primal_dual(const LinearOperator& a, const Eigen::VectorXd& y, const Grid& grid,
                           const SolveOptions& opts);

/// Box-constrained non-negative least squares warm start, 1/2 ||Ax - y||^2.
SolveResult nnls(const RayMatrix& a, const Measurement& y, const SolveOptions& opts = {});

/// min ||q - B^T x||^2 + tv_weight * TV(x) over the box. With tv_weight = 0
/// this runs the same accelerated projected gradient as nnls.
SolveResult solve_reformulated(const StackedBasis& b, const Eigen::VectorXd& q, const SolveOptions& opts = {});

/// Direct TV-regularized inversion, min ||Ax - y||^2 + tv_weight * TV(x).
SolveResult tv_direct(const RayMatrix& a, const Measurement& y, const SolveOptions& opts = {});

struct MinNormOptions {
    double tol = 1e-8;
    /// 0 picks 4 * min(rows, cols) + 50.
    int max_iters = 0;
};

struct MinNormResult {
    Image image;
    /// ||B^T x - q|| / ||q||.
    double residual = 0.0;
    /// ||B (B^T x - q)|| / ||B q||.
    double normal_residual = 0.0;
    int iterations = 0;
};

/// x = (B^T)^+ q by CGLS from zero, which stays in range(B) and so converges
/// to the minimum-norm least-squares solution.
MinNormResult minnorm_solve(const StackedBasis& b, const Eigen::VectorXd& q, const MinNormOptions& opts = {});

/// 10^-4 ... 10^0, `count` log-spaced values.
std::vector<double> tv_weight_grid(int count = 5);

/// Candidate with the highest score; ties keep the first.
double select_tv_weight(std::span<const double> candidates, const std::function<double(double)>& score);

}  // namespace meshreg

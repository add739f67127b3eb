#include <cmath>
#include <limits>

#include <Eigen/SVD>

#include <gtest/gtest.h>

#include "meshreg/delaunay.hpp"
#include "meshreg/error.hpp"
#include "meshreg/metrics.hpp"
#include "meshreg/phantoms.hpp"
#include "meshreg/solvers.hpp"
#include "meshreg/tomography.hpp"
#include "oracles.hpp"

using namespace meshreg;

namespace {

RayMatrix identity_operator(const Grid& g) {
    SparseRowMatrix m(g.size(), g.size());
    m.setIdentity();
    return RayMatrix(g, m);
}

Eigen::VectorXd random_vector(Eigen::Index n, Seed seed, double lo = 0.0, double hi = 1.0) {
    CounterRng rng(seed);
    Eigen::VectorXd v(n);
    for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
    return v;
}

StackedBasis random_stack(const Grid& g, int k, int count, std::uint64_t seed) {
    StackedBasis stack(g);
    for (int l = 0; l < count; ++l) stack.add(rasterize(mesh_with_k_triangles(k, Seed{seed + std::uint64_t(l)}), g));
    return stack;
}

bool in_box(const Image& x) { return x.values().minCoeff() >= 0.0 && x.values().maxCoeff() <= 1.0; }

bool running_min_nonincreasing(const std::vector<double>& h) {
    double best = std::numeric_limits<double>::infinity();
    for (double v : h) {
        const double next = std::min(best, v);
        if (next > best) return false;
        best = next;
    }
    return true;
}

}  // namespace

TEST(SolveOptions, ValidationRejectsBadValues) {
    SolveOptions o;
    o.max_iters = 0;
    EXPECT_THROW(o.validate(), ArgumentError);
    o = {};
    o.tol = 0;
    EXPECT_THROW(o.validate(), ArgumentError);
    o = {};
    o.box = Box{1.0, 0.0};
    EXPECT_THROW(o.validate(), ArgumentError);
    o = {};
    o.tv_weight = -1;
    EXPECT_THROW(o.validate(), ArgumentError);
}

TEST(Nnls, ZeroDataGivesZero) {
    const Grid g(8);
    const RayMatrix a = build_ray_matrix(place_sensors(8), g);
    const SolveResult r = nnls(a, Measurement::clean(Eigen::VectorXd::Zero(a.rows())));
    EXPECT_EQ(r.image.values().norm(), 0.0);
}

TEST(Nnls, IdentityHarnessReturnsDataInsideTheBoxAndClipsOutside) {
    const Grid g(8);
    const RayMatrix a = identity_operator(g);
    const Eigen::VectorXd y = random_vector(g.size(), Seed{1});
    EXPECT_LE((nnls(a, Measurement::clean(y)).image.values() - y).cwiseAbs().maxCoeff(), 1e-6);
    const SolveResult clipped = nnls(a, Measurement::clean(Eigen::VectorXd::Constant(g.size(), 2.0)));
    EXPECT_LE((clipped.image.values().array() - 1.0).abs().maxCoeff(), 1e-12);
}

TEST(Nnls, ObjectiveRunningMinimumAndBoxFeasibility) {
    const Grid g(16);
    const RayMatrix a = build_ray_matrix(place_sensors(12), g);
    ShapesConfig cfg;
    cfg.side = 16;
    cfg.seed = Seed{5};
    const Image x = gen_shapes(cfg).front();
    const SolveResult r = nnls(a, forward(a, x));
    EXPECT_TRUE(in_box(r.image));
    EXPECT_TRUE(running_min_nonincreasing(r.history));
    // Accepted FISTA steps with restart keep the recorded objective monotone.
    for (std::size_t i = 1; i < r.history.size(); ++i) EXPECT_LE(r.history[i], r.history[i - 1] * (1 + 1e-12));
}

TEST(Nnls, ErasedRowsAreDroppedNotFitToZero) {
    const Grid g(8);
    const RayMatrix a = build_ray_matrix(place_sensors(10), g);
    // Rows sum to 1, so a constant image is an exact fit of the kept rows.
    const Measurement m = erase(forward(a, Image(g, Eigen::VectorXd::Constant(g.size(), 0.5))), 0.25, Seed{3});
    ASSERT_GT(m.erased_count(), 0u);
    SolveOptions o;
    o.max_iters = 3000;
    o.tol = 1e-14;
    EXPECT_LT(nnls(a, m, o).objective, 1e-8);
    o.drop_erased = false;
    EXPECT_GT(nnls(a, m, o).objective, 1e-3);
}

TEST(SolveReformulated, SingleMeshConsistentSystemIsSolved) {
    const Grid g(16);
    const StackedBasis stack = random_stack(g, 20, 1, 1);
    Eigen::VectorXd q0(stack.total_columns());
    for (int k = 0; k < q0.size(); ++k)
        q0[k] = (0.2 + 0.6 * std::abs(std::sin(k))) * std::sqrt(double(stack[0].pixel_counts()[std::size_t(k)]));
    const Image x0 = stack[0].synthesize(q0);
    SolveOptions o;
    o.max_iters = 2000;
    o.tol = 1e-14;
    const SolveResult r = solve_reformulated(stack, q0, o);
    EXPECT_LE((stack.apply_transpose(r.image.values()) - q0).norm(), 1e-6);
    EXPECT_LE((stack[0].project(r.image).values() - x0.values()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(SolveReformulated, OvercompleteStackRecoversTheImage) {
    // Enough random meshes on an 8x8 grid that B has full row rank.
    const Grid g(8);
    const StackedBasis stack = random_stack(g, 40, 12, 100);
    const Eigen::MatrixXd dense = stack.dense();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(dense);
    ASSERT_GT(svd.singularValues().minCoeff(), 1e-8);
    const Eigen::VectorXd x = random_vector(g.size(), Seed{4});
    SolveOptions o;
    o.max_iters = 5000;
    o.tol = 1e-15;
    const SolveResult r = solve_reformulated(stack, stack.apply_transpose(x), o);
    const Eigen::VectorXd ls = oracle::pinv(dense.transpose()) * stack.apply_transpose(x);
    EXPECT_LE((ls - x).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LE((r.image.values() - x).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(SolveReformulated, ZeroCoefficientsGiveZeroForAnyWeight) {
    const Grid g(16);
    const StackedBasis stack = random_stack(g, 20, 3, 7);
    for (double w : {0.0, 1e-3, 1.0}) {
        SolveOptions o;
        o.tv_weight = w;
        EXPECT_LE(solve_reformulated(stack, Eigen::VectorXd::Zero(stack.total_columns()), o).image.values().norm(), 1e-12);
    }
}

TEST(SolveReformulated, TvSolveStaysInTheBoxAndLowersTheObjective) {
    const Grid g(16);
    const StackedBasis stack = random_stack(g, 20, 4, 9);
    const Image x = gen_checkerboard(16, 4);
    SolveOptions o;
    o.tv_weight = 0.05;
    const SolveResult r = solve_reformulated(stack, stack.apply_transpose(x.values()), o);
    EXPECT_TRUE(in_box(r.image));
    EXPECT_TRUE(running_min_nonincreasing(r.history));
    const double start = stack.apply_transpose(x.values()).squaredNorm();  // objective at x = 0
    EXPECT_LT(r.objective, start);
}

TEST(TvDirect, ZeroWeightMatchesNnls) {
    const Grid g(16);
    const RayMatrix a = build_ray_matrix(place_sensors(10), g);
    const Measurement y = forward(a, gen_checkerboard(16, 2));
    SolveOptions o;
    o.max_iters = 300;
    const SolveResult direct = tv_direct(a, y, o);
    const SolveResult ls = nnls(a, y, o);
    EXPECT_LE((direct.image.values() - ls.image.values()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(TvDirect, ConstantDataGivesConstantImage) {
    const Grid g(16);
    const RayMatrix a = build_ray_matrix(place_sensors(10), g);
    SolveOptions o;
    o.tv_weight = 0.01;
    o.max_iters = 3000;
    const SolveResult r = tv_direct(a, Measurement::clean(Eigen::VectorXd::Constant(a.rows(), 0.4)), o);
    EXPECT_LE((r.image.values().array() - 0.4).abs().maxCoeff(), 1e-3);
}

TEST(TvSeminorm, CheckerboardCountsBlockBoundaries) {
    for (int cells : {1, 2, 4, 8}) EXPECT_DOUBLE_EQ(tv_seminorm(gen_checkerboard(16, cells)), 2.0 * 16 * (cells - 1));
}

TEST(MinNorm, SingleOrthonormalBasisIsSynthesis) {
    const Grid g(16);
    const StackedBasis stack = random_stack(g, 20, 1, 3);
    const Eigen::VectorXd q = random_vector(stack.total_columns(), Seed{2}, -1, 1);
    const MinNormResult r = minnorm_solve(stack, q);
    EXPECT_LE((r.image.values() - stack[0].synthesize(q).values()).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(MinNorm, ConsistentDataIsReproduced) {
    const Grid g(32);
    const StackedBasis stack = random_stack(g, 30, 5, 11);
    const Eigen::VectorXd x = random_vector(g.size(), Seed{6});
    const Eigen::VectorXd q = stack.apply_transpose(x);
    MinNormOptions o;
    o.tol = 1e-12;
    const MinNormResult r = minnorm_solve(stack, q, o);
    EXPECT_LE((stack.apply_transpose(r.image.values()) - q).norm(), 1e-6);
}

TEST(MinNorm, MatchesDenseSvdPseudoinverse) {
    const Grid g(8);
    const StackedBasis stack = random_stack(g, 10, 3, 21);
    const Eigen::VectorXd q = random_vector(stack.total_columns(), Seed{8}, -1, 1);
    const Eigen::VectorXd ref = oracle::pinv(stack.dense().transpose()) * q;
    MinNormOptions o;
    o.tol = 1e-13;
    EXPECT_LE((minnorm_solve(stack, q, o).image.values() - ref).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(MinNorm, IsLinearInTheCoefficients) {
    const Grid g(16);
    const StackedBasis stack = random_stack(g, 15, 4, 31);
    const Eigen::VectorXd q1 = random_vector(stack.total_columns(), Seed{1}, -1, 1);
    const Eigen::VectorXd q2 = random_vector(stack.total_columns(), Seed{2}, -1, 1);
    MinNormOptions o;
    o.tol = 1e-13;
    const Eigen::VectorXd lhs = minnorm_solve(stack, 2.0 * q1 - 0.5 * q2, o).image.values();
    const Eigen::VectorXd rhs =
        2.0 * minnorm_solve(stack, q1, o).image.values() - 0.5 * minnorm_solve(stack, q2, o).image.values();
    EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(MinNorm, LengthMismatchIsAnArgumentError) {
    const StackedBasis stack = random_stack(Grid(8), 10, 2, 1);
    EXPECT_THROW(minnorm_solve(stack, Eigen::VectorXd::Zero(stack.total_columns() + 1)), ArgumentError);
}

TEST(WeightSelection, GridIsLogSpacedAndSelectionPicksTheBest) {
    const auto w = tv_weight_grid(5);
    ASSERT_EQ(w.size(), 5u);
    EXPECT_DOUBLE_EQ(w.front(), 1e-4);
    EXPECT_DOUBLE_EQ(w.back(), 1.0);
    EXPECT_NEAR(w[2], 1e-2, 1e-15);
    EXPECT_DOUBLE_EQ(select_tv_weight(w, [](double v) { return -std::abs(std::log10(v) + 3); }), 1e-3);
}

TEST(PowerIteration, EstimatesTheNormalOperatorNorm) {
    const Grid g(8);
    const RayMatrix a = build_ray_matrix(place_sensors(8), g);
    const Eigen::MatrixXd dense(a.matrix());
    const double exact = Eigen::JacobiSVD<Eigen::MatrixXd>(dense).singularValues()[0];
    const SparseOperator op(a.matrix());
    const double est = estimate_normal_norm(op, 200, 1e-12);
    EXPECT_NEAR(est, exact * exact, 1e-6 * exact * exact);
}

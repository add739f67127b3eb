#include <cmath>
#include <filesystem>
#include <numbers>

#include <gtest/gtest.h>

#include "meshreg/error.hpp"
#include "meshreg/metrics.hpp"
#include "meshreg/tomography.hpp"
#include "oracles.hpp"

using namespace meshreg;

namespace {

double population_variance(const Eigen::VectorXd& v) { return (v.array() - v.mean()).square().mean(); }

Measurement random_measurement(Eigen::Index m, Seed seed) {
    CounterRng rng(seed);
    Eigen::VectorXd v(m);
    for (auto& x : v) x = rng.uniform();
    return Measurement::clean(v);
}

}  // namespace

TEST(Sensors, FourSensorsSitAtTheCompassPoints) {
    const SensorArray s = place_sensors(4);
    const Point2 expected[] = {{1, 0.5}, {0.5, 1}, {0, 0.5}, {0.5, 0}};
    for (int i = 0; i < 4; ++i) {
        EXPECT_NEAR(s[std::size_t(i)].x, expected[i].x, 1e-15);
        EXPECT_NEAR(s[std::size_t(i)].y, expected[i].y, 1e-15);
    }
}

TEST(Sensors, TwentyFiveSensorsGiveThreeHundredPairsOnTheCircle) {
    const SensorArray s = place_sensors(25);
    EXPECT_EQ(s.pairs().size(), 300u);
    EXPECT_EQ(s.pairs().front(), std::make_pair(0, 1));
    EXPECT_EQ(s.pairs().back(), std::make_pair(23, 24));
    for (const auto& p : s.positions()) EXPECT_NEAR(std::hypot(p.x - 0.5, p.y - 0.5), 0.5, 1e-12);
    EXPECT_THROW(place_sensors(1), ArgumentError);
}

TEST(Sensors, CoincidentOrOutsidePositionsAreRejected) {
    EXPECT_THROW(SensorArray({{0.2, 0.2}, {0.2, 0.2}}), ArgumentError);
    EXPECT_THROW(SensorArray({{0.2, 0.2}, {1.2, 0.2}}), ArgumentError);
}

TEST(RayMatrix, SegmentInsideOnePixelIsASingleUnitEntry) {
    const Grid g(2);
    const RayMatrix a = build_ray_matrix(SensorArray({{0.1, 0.1}, {0.3, 0.4}}), g);
    ASSERT_EQ(a.rows(), 1);
    EXPECT_EQ(a.matrix().nonZeros(), 1);
    EXPECT_DOUBLE_EQ(a.matrix().coeff(0, g.index(0, 0)), 1.0);
}

TEST(RayMatrix, TravelAlongAGridLineGoesToTheUpperPixels) {
    const Grid g(2);
    const RayMatrix a = build_ray_matrix(SensorArray({{0, 0.5}, {1, 0.5}}), g);
    EXPECT_NEAR(a.matrix().coeff(0, g.index(1, 0)), 0.5, 1e-15);
    EXPECT_NEAR(a.matrix().coeff(0, g.index(1, 1)), 0.5, 1e-15);
    EXPECT_EQ(a.matrix().coeff(0, g.index(0, 0)), 0.0);
    EXPECT_EQ(a.matrix().coeff(0, g.index(0, 1)), 0.0);
}

TEST(RayMatrix, DiagonalThroughPixelCornersSplitsEvenly) {
    const Grid g(4);
    const auto row = ray_row({0, 0}, {1, 1}, g);
    ASSERT_EQ(row.size(), 4u);
    for (const auto& [p, w] : row) {
        EXPECT_EQ(g.row_of(p), g.col_of(p));
        EXPECT_NEAR(w, 0.25, 1e-15);
    }
}

TEST(RayMatrix, RowsSumToOneAndMatchSupersampling) {
    const Grid g(32);
    const SensorArray s = place_sensors(25);
    const RayMatrix a = build_ray_matrix(s, g);
    EXPECT_EQ(a.rows(), 300);
    const auto pairs = s.pairs();
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        EXPECT_NEAR(a.matrix().row(r).sum(), 1.0, 1e-9);
        for (SparseRowMatrix::InnerIterator it(a.matrix(), r); it; ++it) {
            EXPECT_GE(it.value(), 0.0);
            EXPECT_LE(it.value(), 1.0);
        }
    }
    for (Eigen::Index r = 0; r < a.rows(); r += 13) {
        const auto [i, j] = pairs[std::size_t(r)];
        auto ref = oracle::supersample_ray(s[std::size_t(i)], s[std::size_t(j)], g);
        for (SparseRowMatrix::InnerIterator it(a.matrix(), r); it; ++it) ref[it.col()] -= it.value();
        for (const auto& [p, d] : ref) EXPECT_LE(std::abs(d), 1e-3) << "row " << r << " pixel " << p;
    }
}

TEST(RayMatrix, SelectRowsAndFileRoundTrip) {
    const Grid g(8);
    const RayMatrix a = build_ray_matrix(place_sensors(6), g);
    std::vector<bool> keep(std::size_t(a.rows()), false);
    keep[2] = keep[7] = true;
    const RayMatrix sub = a.select_rows(keep);
    ASSERT_EQ(sub.rows(), 2);
    EXPECT_LE((Eigen::MatrixXd(sub.matrix().row(1)) - Eigen::MatrixXd(a.matrix().row(7))).norm(), 0.0);

    const auto path = std::filesystem::temp_directory_path() / "meshreg_ray_matrix.txt";
    save_ray_matrix(a, path);
    const RayMatrix back = load_ray_matrix(path);
    EXPECT_EQ(back.grid(), g);
    EXPECT_EQ((Eigen::MatrixXd(back.matrix()) - Eigen::MatrixXd(a.matrix())).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Forward, ZeroConstantLinearAndNonnegative) {
    const Grid g(16);
    const RayMatrix a = build_ray_matrix(place_sensors(10), g);
    EXPECT_EQ(forward(a, Image(g)).values.norm(), 0.0);
    const Measurement c = forward(a, Image::constant(g, 0.7));
    EXPECT_LE((c.values.array() - 0.7).abs().maxCoeff(), 1e-12);
    CounterRng rng(Seed{4});
    Eigen::VectorXd x1(g.size()), x2(g.size());
    for (auto& v : x1) v = rng.uniform();
    for (auto& v : x2) v = rng.uniform();
    const Eigen::VectorXd lhs = forward(a, Image(g, 2.0 * x1 - 3.0 * x2)).values;
    const Eigen::VectorXd rhs = 2.0 * forward(a, Image(g, x1)).values - 3.0 * forward(a, Image(g, x2)).values;
    EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_GE(forward(a, Image(g, x1)).values.minCoeff(), 0.0);
    EXPECT_THROW(forward(a, Image(Grid(8))), ArgumentError);
}

TEST(Noise, InfiniteSnrIsIdentity) {
    const Measurement y = random_measurement(50, Seed{1});
    EXPECT_EQ(add_gaussian_noise(y, kNoiseless, Seed{2}).values, y.values);
}

TEST(Noise, VarianceRatioMatchesTheRequestedSnr) {
    const Measurement y = random_measurement(10000, Seed{3});
    const double ratio0 = population_variance(add_gaussian_noise(y, 0.0, Seed{4}).values - y.values) /
                          population_variance(y.values);
    EXPECT_GE(ratio0, 0.9);
    EXPECT_LE(ratio0, 1.1);
    const double ratio10 = population_variance(add_gaussian_noise(y, 10.0, Seed{5}).values - y.values) /
                           population_variance(y.values);
    EXPECT_NEAR(ratio10, 0.1, 0.01);
}

TEST(Noise, ZeroVarianceSignalIsAnError) {
    const Measurement y = Measurement::clean(Eigen::VectorXd::Constant(10, 0.5));
    EXPECT_THROW(add_gaussian_noise(y, 10.0, Seed{1}), ArgumentError);
    EXPECT_NO_THROW(add_gaussian_noise(y, kNoiseless, Seed{1}));
}

TEST(Erase, ExtremesAndMaskBookkeeping) {
    const Measurement y = random_measurement(300, Seed{6});
    const Measurement none = erase(y, 0.0, Seed{1});
    EXPECT_EQ(none.values, y.values);
    EXPECT_EQ(none.erased_count(), 0u);
    const Measurement all = erase(y, 1.0, Seed{1});
    EXPECT_EQ(all.values.norm(), 0.0);
    EXPECT_EQ(all.erased_count(), 300u);
    const Measurement some = erase(add_gaussian_noise(y, 10.0, Seed{2}), 0.3, Seed{3});
    for (Eigen::Index i = 0; i < some.size(); ++i)
        if (some.erased[std::size_t(i)]) EXPECT_EQ(some.values[i], 0.0);
    EXPECT_THROW(erase(y, 1.5, Seed{1}), ArgumentError);
}

TEST(Erase, MeanErasedCountIsBinomialMean) {
    const Measurement y = random_measurement(300, Seed{7});
    double total = 0;
    for (std::uint64_t s = 0; s < 10000; ++s) total += double(erase(y, 0.125, Seed{s}).erased_count());
    EXPECT_NEAR(total / 10000, 37.5, 1.0);
}

TEST(Measurement, CsvRoundTripKeepsValuesAndMask) {
    const Measurement y = erase(random_measurement(40, Seed{8}), 0.25, Seed{9});
    const auto path = std::filesystem::temp_directory_path() / "meshreg_measurement.csv";
    save_measurement(y, path);
    const Measurement back = load_measurement(path);
    EXPECT_EQ(back.values, y.values);
    EXPECT_EQ(back.erased, y.erased);
}

TEST(InputSnr, TenDecibelNoiseMeasuresTenDecibels) {
    const Measurement y = random_measurement(300, Seed{10});
    // A single draw on 300 rows scatters by about 0.35 dB; the mean of 20 by about 0.08 dB.
    double sum = 0.0;
    for (std::uint64_t s = 0; s < 20; ++s) {
        const double snr = input_snr(y.values, add_gaussian_noise(y, 10.0, Seed{s}).values);
        EXPECT_NEAR(snr, 10.0, 1.5);
        sum += snr;
    }
    EXPECT_NEAR(sum / 20, 10.0, 0.5);
}

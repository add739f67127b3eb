#include "meshreg/gaussian_projector.hpp"

#include <random>
#include <string>

#include <Eigen/QR>

#include "meshreg/error.hpp"

namespace meshreg {

Eigen::MatrixXd gaussian_subspace_projector(int n, int k, Seed seed) {
    if (k < 1 || k >= n || n > 256)
        throw ArgumentError("gaussian_subspace_projector: need 1 <= k < n <= 256, got n=" + std::to_string(n) +
                            " k=" + std::to_string(k));
    CounterRng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd w(n, k);
    for (int j = 0; j < k; ++j)
        for (int i = 0; i < n; ++i) w(i, j) = normal(rng);
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(w);
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, k);
    return q * q.transpose();
}

}  // namespace meshreg

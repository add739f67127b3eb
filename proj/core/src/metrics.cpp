#include "meshreg/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace meshreg {

AffineFit fit_affine(const Eigen::VectorXd& x, const Eigen::VectorXd& xhat) {
    if (x.size() != xhat.size() || x.size() == 0) throw ArgumentError("fit_affine: length mismatch");
    const double n = double(x.size());
    const double mx = x.sum() / n;
    const double mh = xhat.sum() / n;
    const Eigen::ArrayXd dx = x.array() - mx;
    const Eigen::ArrayXd dh = xhat.array() - mh;
    const double var_h = (dh * dh).sum();
    AffineFit fit;
    // Constant xhat: only the offset is identifiable.
    fit.scale = var_h > 0.0 ? (dx * dh).sum() / var_h : 0.0;
    fit.offset = mx - fit.scale * mh;
    fit.residual_norm = (x.array() - fit.scale * xhat.array() - fit.offset).matrix().norm();
    return fit;
}

double output_snr(const Eigen::VectorXd& x, const Eigen::VectorXd& xhat) {
    const double x_norm = x.norm();
    if (x_norm == 0.0) throw ArgumentError("output_snr: reference image is zero, SNR undefined");
    const auto fit = fit_affine(x, xhat);
    if (fit.residual_norm <= 1e-13 * x_norm) return kSnrCapDb;
    return std::min(kSnrCapDb, 20.0 * std::log10(x_norm / fit.residual_norm));
}

double output_snr(const Image& x, const Image& xhat) {
    require_same_grid(x.grid(), xhat.grid(), "output_snr");
    return output_snr(x.values(), xhat.values());
}

double input_snr(const Eigen::VectorXd& clean, const Eigen::VectorXd& noisy) {
    if (clean.size() != noisy.size() || clean.size() < 2) throw ArgumentError("input_snr: length mismatch");
    auto variance = [](const Eigen::ArrayXd& v) { return (v - v.mean()).square().mean(); };
    const double noise_var = variance(noisy.array() - clean.array());
    if (noise_var == 0.0) return kSnrCapDb;
    const double signal_var = variance(clean.array());
    if (signal_var == 0.0) throw ArgumentError("input_snr: zero-variance signal");
    return std::min(kSnrCapDb, 10.0 * std::log10(signal_var / noise_var));
}

}  // namespace meshreg

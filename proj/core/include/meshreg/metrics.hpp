#pragma once

#include <Eigen/Core>

#include "meshreg/grid.hpp"

namespace meshreg {

inline constexpr double kSnrCapDb = 300.0;

struct AffineFit {
    double scale = 0.0;
    double offset = 0.0;
    double residual_norm = 0.0;
};

/// Least-squares fit x ~ scale * xhat + offset (closed-form 2x2 normal equations).
AffineFit fit_affine(const Eigen::VectorXd& x, const Eigen::VectorXd& xhat);

/// sup over (a, b) of 20 log10(||x|| / ||x - a xhat - b||), capped at 300 dB.
/// Relative residuals below 1e-13 are rounding noise and count as exact fits.
double output_snr(const Image& x, const Image& xhat);
double output_snr(const Eigen::VectorXd& x, const Eigen::VectorXd& xhat);

/// 10 log10(var(clean) / var(noisy - clean)), population variances; a zero
/// noise vector gives the 300 dB cap.
double input_snr(const Eigen::VectorXd& clean, const Eigen::VectorXd& noisy);

}  // namespace meshreg

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "meshreg/subspace.hpp"
#include "meshreg/tomography.hpp"

namespace meshreg {

/// Exact B^T x: the training target and the performance ceiling.
Eigen::VectorXd oracle_coeffs(const SubspaceBasis& basis, const Image& x);

/// Best consistent linear estimator F = B (A B)^+ of the projection onto
/// span(B). F A x = x on span(B), but F A is oblique, not orthogonal.
class ObliqueOperator {
public:
    /// Dense form; B needs orthonormal columns for coeffs() to be B^T F y.
    ObliqueOperator(const Eigen::MatrixXd& a, Eigen::MatrixXd b);
    ObliqueOperator(const RayMatrix& a, const SubspaceBasis& basis);

    /// F, N x M.
    Eigen::MatrixXd matrix() const { return basis_ * coefficient_map_; }
    /// (A B)^+, K x M.
    const Eigen::MatrixXd& coefficient_map() const noexcept { return coefficient_map_; }
    const Eigen::MatrixXd& basis() const noexcept { return basis_; }

    /// B^T F y.
    Eigen::VectorXd coeffs(const Eigen::VectorXd& y) const;
    /// F y.
    Eigen::VectorXd estimate(const Eigen::VectorXd& y) const;

private:
    Eigen::MatrixXd basis_;
    Eigen::MatrixXd coefficient_map_;
};

ObliqueOperator build_oblique(const RayMatrix& a, const SubspaceBasis& basis);
Eigen::VectorXd oblique_coeffs(const ObliqueOperator& op, const Measurement& y);

/// ||q_hat - B^T x||^2 / N, which equals the per-pixel mean squared error of
/// B q_hat against the orthogonal projection of x.
double projection_mse(const SubspaceBasis& basis, const Eigen::VectorXd& q_hat, const Image& x);

enum class EstimatorKind {
    /// q_hat = W y_warm + b for one specific mesh.
    per_mesh_affine,
    /// Triangle mean predicted from pooled warm-start features by a shared
    /// one-hidden-layer network; works on any mesh.
    shared_pooled,
};

std::string to_string(EstimatorKind kind);
EstimatorKind estimator_kind_from_string(const std::string& s);

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
    int epochs = 100;
    int batch_size = 32;
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    /// Multiplies the learning rate after every epoch.
    double lr_decay = 1.0;
    /// L2 penalty on weights (not biases).
    double weight_decay = 0.0;
    double validation_fraction = 0.1;
    /// Hidden width of the shared-pooled network.
    int hidden = 16;
    Seed seed{};

    void validate() const;
};

/// Pooled per-triangle inputs of the shared estimator: warm-start mean and
/// standard deviation, area relative to the average triangle, and centroid.
inline constexpr int kPooledFeatures = 5;
Eigen::MatrixXd pooled_features(const SubspaceBasis& basis, const Image& warm);

class Estimator {
public:
    /// Untrained per-mesh estimator with all parameters zero.
    static Estimator zeros(const SubspaceBasis& basis);
    /// Shared estimator with small random first-layer weights.
    static Estimator shared(int hidden, Seed seed);

    EstimatorKind kind() const noexcept { return kind_; }
    std::uint64_t basis_hash() const noexcept { return basis_hash_; }
    Eigen::Index input_dim() const noexcept { return input_dim_; }
    Eigen::Index output_dim() const noexcept { return output_dim_; }

    /// Coefficient estimate for `basis`; throws ArgumentError if a per-mesh
    /// estimator is used with a basis it was not trained for.
    Eigen::VectorXd estimate(const SubspaceBasis& basis, const Image& warm) const;

    void save(const std::filesystem::path& path) const;
    static Estimator load(const std::filesystem::path& path);

private:
    friend struct EstimatorTrainer;
    Estimator() = default;

    EstimatorKind kind_ = EstimatorKind::per_mesh_affine;
    std::uint64_t basis_hash_ = 0;
    Eigen::Index input_dim_ = 0;
    Eigen::Index output_dim_ = 0;
    // per_mesh_affine
    Eigen::MatrixXd weights_;
    Eigen::VectorXd bias_;
    // shared_pooled
    Eigen::MatrixXd hidden_weights_;  // hidden x features
    Eigen::VectorXd hidden_bias_;
    Eigen::VectorXd output_weights_;
    double output_bias_ = 0.0;
};

Eigen::VectorXd estimate_coeffs(const Estimator& est, const SubspaceBasis& basis, const Image& warm);

struct TrainingExample {
    Image truth;
    Image warm;
};

struct TrainReport {
    Estimator estimator;
    /// Mean over examples of ||q_hat - B^T x||^2 after each epoch.
    std::vector<double> train_loss;
    std::vector<double> validation_loss;
};

/// Per-mesh affine estimator minimizing the empirical projection risk.
TrainReport train_estimator(std::span<const TrainingExample> data, const SubspaceBasis& basis, const TrainConfig& cfg);

/// Shared-pooled estimator trained over every mesh of the stack.
TrainReport train_estimator(std::span<const TrainingExample> data, const StackedBasis& bases, const TrainConfig& cfg);

/// One per-mesh affine estimator per basis; meshes train on separate threads.
std::vector<TrainReport> train_ensemble(std::span<const TrainingExample> data, const StackedBasis& bases,
                                        const TrainConfig& cfg, int threads = 0);

}  // namespace meshreg

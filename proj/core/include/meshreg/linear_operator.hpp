#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "meshreg/subspace.hpp"
#include "meshreg/tomography.hpp"

namespace meshreg {

/// Matrix-free linear map from images (cols) to data (rows).
class LinearOperator {
public:
    virtual ~LinearOperator() = default;
    virtual Eigen::Index rows() const = 0;
    virtual Eigen::Index cols() const = 0;
    virtual Eigen::VectorXd apply(const Eigen::VectorXd& x) const = 0;
    virtual Eigen::VectorXd adjoint(const Eigen::VectorXd& y) const = 0;
};

class SparseOperator final : public LinearOperator {
public:
    explicit SparseOperator(const SparseRowMatrix& m) : m_(m) {}
    Eigen::Index rows() const override { return m_.rows(); }
    Eigen::Index cols() const override { return m_.cols(); }
    Eigen::VectorXd apply(const Eigen::VectorXd& x) const override { return m_ * x; }
    Eigen::VectorXd adjoint(const Eigen::VectorXd& y) const override { return m_.transpose() * y; }

private:
    const SparseRowMatrix& m_;
};

class DenseOperator final : public LinearOperator {
public:
    explicit DenseOperator(Eigen::MatrixXd m) : m_(std::move(m)) {}
    Eigen::Index rows() const override { return m_.rows(); }
    Eigen::Index cols() const override { return m_.cols(); }
    Eigen::VectorXd apply(const Eigen::VectorXd& x) const override { return m_ * x; }
    Eigen::VectorXd adjoint(const Eigen::VectorXd& y) const override { return m_.transpose() * y; }

private:
    Eigen::MatrixXd m_;
};

/// x -> B^T x for a stacked mesh basis.
class StackedAnalysisOperator final : public LinearOperator {
public:
    explicit StackedAnalysisOperator(const StackedBasis& b) : b_(b) {}
    Eigen::Index rows() const override { return b_.total_columns(); }
    Eigen::Index cols() const override { return b_.grid().size(); }
    Eigen::VectorXd apply(const Eigen::VectorXd& x) const override { return b_.apply_transpose(x); }
    Eigen::VectorXd adjoint(const Eigen::VectorXd& q) const override { return b_.apply(q); }

private:
    const StackedBasis& b_;
};

}  // namespace meshreg

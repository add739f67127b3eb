#include "meshreg/estimators.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <thread>

#include <Eigen/QR>
#include <json.hpp>

namespace meshreg {

Eigen::VectorXd oracle_coeffs(const SubspaceBasis& basis, const Image& x) { return basis.coeffs(x); }

ObliqueOperator::ObliqueOperator(const Eigen::MatrixXd& a, Eigen::MatrixXd b) : basis_(std::move(b)) {
    if (a.cols() != basis_.rows()) throw ArgumentError("ObliqueOperator: A has " + std::to_string(a.cols()) +
                                                       " columns, basis has " + std::to_string(basis_.rows()) + " rows");
    const Eigen::MatrixXd ab = a * basis_;
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(ab);
    if (qr.rank() < ab.cols())
        throw NumericalError("oblique: A*B has rank " + std::to_string(qr.rank()) + " < K=" + std::to_string(ab.cols()));
    coefficient_map_ = Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd>(ab).pseudoInverse();
}

ObliqueOperator::ObliqueOperator(const RayMatrix& a, const SubspaceBasis& basis)
    : ObliqueOperator(Eigen::MatrixXd(a.matrix()), Eigen::MatrixXd(basis.matrix())) {
    require_same_grid(a.grid(), basis.grid(), "build_oblique");
}

Eigen::VectorXd ObliqueOperator::coeffs(const Eigen::VectorXd& y) const {
    return basis_.transpose() * estimate(y);
}

Eigen::VectorXd ObliqueOperator::estimate(const Eigen::VectorXd& y) const {
    if (y.size() != coefficient_map_.cols()) throw ArgumentError("ObliqueOperator: measurement length mismatch");
    return basis_ * (coefficient_map_ * y);
}

ObliqueOperator build_oblique(const RayMatrix& a, const SubspaceBasis& basis) { return ObliqueOperator(a, basis); }

Eigen::VectorXd oblique_coeffs(const ObliqueOperator& op, const Measurement& y) { return op.coeffs(y.values); }

double projection_mse(const SubspaceBasis& basis, const Eigen::VectorXd& q_hat, const Image& x) {
    const Eigen::VectorXd q = basis.coeffs(x);
    if (q_hat.size() != q.size()) throw ArgumentError("projection_mse: coefficient length mismatch");
    return (q_hat - q).squaredNorm() / double(basis.grid().size());
}

std::string to_string(EstimatorKind kind) {
    return kind == EstimatorKind::per_mesh_affine ? "per_mesh_affine" : "shared_pooled";
}

EstimatorKind estimator_kind_from_string(const std::string& s) {
    if (s == "per_mesh_affine" || s == "per-mesh-affine") return EstimatorKind::per_mesh_affine;
    if (s == "shared_pooled" || s == "shared-pooled") return EstimatorKind::shared_pooled;
    throw ArgumentError("unknown estimator kind '" + s + "'");
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ArgumentError("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw ArgumentError("TrainConfig: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ArgumentError("TrainConfig: learning_rate must be > 0");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
        throw ArgumentError("TrainConfig: validation_fraction must be in [0, 1)");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ArgumentError("TrainConfig: lr_decay must be in (0, 1]");
    if (weight_decay < 0.0) throw ArgumentError("TrainConfig: weight_decay must be >= 0");
    if (hidden < 1) throw ArgumentError("TrainConfig: hidden must be >= 1");
}

Eigen::MatrixXd pooled_features(const SubspaceBasis& basis, const Image& warm) {
    require_same_grid(basis.grid(), warm.grid(), "pooled_features");
    const int k = basis.column_count();
    const auto& grid = basis.grid();
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, 4);  // value, value^2, cx, cy
    for (Eigen::Index p = 0; p < grid.size(); ++p) {
        const int c = basis.assignment()[std::size_t(p)];
        const double v = warm.values()[p];
        const Point2 center = grid.center(p);
        sums(c, 0) += v;
        sums(c, 1) += v * v;
        sums(c, 2) += center.x;
        sums(c, 3) += center.y;
    }
    const double mean_count = double(grid.size()) / k;
    Eigen::MatrixXd features(k, kPooledFeatures);
    for (int c = 0; c < k; ++c) {
        const double n = basis.pixel_counts()[std::size_t(c)];
        const double mean = sums(c, 0) / n;
        features(c, 0) = mean;
        features(c, 1) = std::sqrt(std::max(0.0, sums(c, 1) / n - mean * mean));
        features(c, 2) = n / mean_count;
        features(c, 3) = sums(c, 2) / n;
        features(c, 4) = sums(c, 3) / n;
    }
    return features;
}

Estimator Estimator::zeros(const SubspaceBasis& basis) {
    Estimator est;
    est.kind_ = EstimatorKind::per_mesh_affine;
    est.basis_hash_ = basis.hash();
    est.input_dim_ = basis.grid().size();
    est.output_dim_ = basis.column_count();
    est.weights_ = Eigen::MatrixXd::Zero(est.output_dim_, est.input_dim_);
    est.bias_ = Eigen::VectorXd::Zero(est.output_dim_);
    return est;
}

Estimator Estimator::shared(int hidden, Seed seed) {
    if (hidden < 1) throw ArgumentError("Estimator::shared: hidden must be >= 1");
    Estimator est;
    est.kind_ = EstimatorKind::shared_pooled;
    est.input_dim_ = kPooledFeatures;
    est.output_dim_ = 1;
    CounterRng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(double(kPooledFeatures)));
    est.hidden_weights_.resize(hidden, kPooledFeatures);
    for (Eigen::Index i = 0; i < est.hidden_weights_.size(); ++i) est.hidden_weights_.data()[i] = normal(rng);
    est.hidden_bias_ = Eigen::VectorXd::Zero(hidden);
    est.output_weights_ = Eigen::VectorXd::Zero(hidden);
    return est;
}

Eigen::VectorXd Estimator::estimate(const SubspaceBasis& basis, const Image& warm) const {
    require_same_grid(basis.grid(), warm.grid(), "estimate");
    if (kind_ == EstimatorKind::per_mesh_affine) {
        if (basis.hash() != basis_hash_ || basis.column_count() != output_dim_ || basis.grid().size() != input_dim_)
            throw ArgumentError("estimate: per-mesh estimator was trained for a different basis");
        return weights_ * warm.values() + bias_;
    }
    const Eigen::MatrixXd features = pooled_features(basis, warm);
    const Eigen::MatrixXd hidden = ((hidden_weights_ * features.transpose()).colwise() + hidden_bias_).array().tanh();
    const Eigen::VectorXd means = (output_weights_.transpose() * hidden).transpose().array() + output_bias_;
    Eigen::VectorXd q(basis.column_count());
    for (int c = 0; c < basis.column_count(); ++c) q[c] = means[c] * std::sqrt(double(basis.pixel_counts()[std::size_t(c)]));
    return q;
}

Eigen::VectorXd estimate_coeffs(const Estimator& est, const SubspaceBasis& basis, const Image& warm) {
    return est.estimate(basis, warm);
}

namespace {

std::vector<double> flatten(std::initializer_list<const Eigen::MatrixXd*> blocks) {
    std::vector<double> out;
    for (const auto* b : blocks)
        for (Eigen::Index r = 0; r < b->rows(); ++r)
            for (Eigen::Index c = 0; c < b->cols(); ++c) out.push_back((*b)(r, c));
    return out;
}

}  // namespace

void Estimator::save(const std::filesystem::path& path) const {
    nlohmann::ordered_json header;
    header["kind"] = to_string(kind_);
    header["input_dim"] = input_dim_;
    header["output_dim"] = output_dim_;
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(basis_hash_));
    header["basis_hash"] = hash;
    std::vector<double> params;
    if (kind_ == EstimatorKind::per_mesh_affine) {
        const Eigen::MatrixXd b = bias_;
        params = flatten({&weights_, &b});
    } else {
        const Eigen::MatrixXd hb = hidden_bias_, ow = output_weights_;
        const Eigen::MatrixXd ob = Eigen::MatrixXd::Constant(1, 1, output_bias_);
        params = flatten({&hidden_weights_, &hb, &ow, &ob});
        header["hidden"] = hidden_weights_.rows();
    }
    header["params"] = params.size();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path.string(), "cannot open for writing: " + path.string());
    out << header.dump() << '\n';
    for (double v : params) {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
        const unsigned char bytes[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                                        static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
        out.write(reinterpret_cast<const char*>(bytes), 4);
    }
    if (!out) throw IoError(path.string(), "write failed: " + path.string());
}

Estimator Estimator::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string(), "cannot open for reading: " + path.string());
    std::string line;
    std::getline(in, line);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
        throw ParseError("header", "estimator file: header is not valid JSON");
    }
    auto require_int = [&](const char* field) {
        if (!header.contains(field) || !header[field].is_number_integer())
            throw ParseError(field, std::string("estimator file: field '") + field + "' missing or not an integer");
        return header[field].get<long long>();
    };
    if (!header.contains("kind") || !header["kind"].is_string())
        throw ParseError("kind", "estimator file: field 'kind' missing");
    Estimator est;
    try {
        est.kind_ = estimator_kind_from_string(header["kind"].get<std::string>());
    } catch (const ArgumentError&) {
        throw ParseError("kind", "estimator file: unknown kind");
    }
    est.input_dim_ = require_int("input_dim");
    est.output_dim_ = require_int("output_dim");
    const long long param_count = require_int("params");
    if (!header.contains("basis_hash") || !header["basis_hash"].is_string())
        throw ParseError("basis_hash", "estimator file: field 'basis_hash' missing");
    est.basis_hash_ = std::stoull(header["basis_hash"].get<std::string>(), nullptr, 16);

    std::vector<double> params(std::size_t(std::max(0LL, param_count)));
    for (auto& v : params) {
        unsigned char bytes[4];
        if (!in.read(reinterpret_cast<char*>(bytes), 4)) throw ParseError("params", "estimator file: truncated parameters");
        const std::uint32_t bits = std::uint32_t(bytes[0]) | (std::uint32_t(bytes[1]) << 8) |
                                   (std::uint32_t(bytes[2]) << 16) | (std::uint32_t(bytes[3]) << 24);
        v = std::bit_cast<float>(bits);
    }
    std::size_t pos = 0;
    auto take = [&](Eigen::Index rows, Eigen::Index cols) {
        Eigen::MatrixXd m(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = params.at(pos++);
        return m;
    };
    if (est.kind_ == EstimatorKind::per_mesh_affine) {
        if (param_count != est.output_dim_ * (est.input_dim_ + 1))
            throw ParseError("params", "estimator file: parameter count does not match dims");
        est.weights_ = take(est.output_dim_, est.input_dim_);
        est.bias_ = take(est.output_dim_, 1);
    } else {
        const long long hidden = require_int("hidden");
        if (est.input_dim_ != kPooledFeatures || param_count != hidden * (kPooledFeatures + 2) + 1)
            throw ParseError("params", "estimator file: parameter count does not match dims");
        est.hidden_weights_ = take(hidden, kPooledFeatures);
        est.hidden_bias_ = take(hidden, 1);
        est.output_weights_ = take(hidden, 1);
        est.output_bias_ = take(1, 1)(0, 0);
    }
    return est;
}

namespace {

// Adam or plain SGD on one parameter block.
class BlockOptimizer {
public:
    BlockOptimizer(const TrainConfig& cfg, Eigen::Index rows, Eigen::Index cols)
        : cfg_(cfg), m_(Eigen::MatrixXd::Zero(rows, cols)), v_(Eigen::MatrixXd::Zero(rows, cols)) {}

    void step(Eigen::MatrixXd& param, const Eigen::MatrixXd& grad, double lr) {
        if (cfg_.optimizer == OptimizerKind::sgd) {
            param -= lr * grad;
            return;
        }
        ++t_;
        m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
        v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad.cwiseProduct(grad);
        const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
        const double c2 = 1.0 - std::pow(cfg_.beta2, t_);
        param.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + cfg_.epsilon);
    }

private:
    const TrainConfig& cfg_;
    Eigen::MatrixXd m_, v_;
    int t_ = 0;
};

struct Split {
    std::vector<int> train;
    std::vector<int> validation;
};

Split split_examples(std::size_t count, const TrainConfig& cfg, CounterRng& rng) {
    std::vector<int> idx(count);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_val = std::size_t(std::floor(cfg.validation_fraction * double(count)));
    if (n_val >= count) n_val = count - 1;
    Split s;
    s.validation.assign(idx.begin(), idx.begin() + std::ptrdiff_t(n_val));
    s.train.assign(idx.begin() + std::ptrdiff_t(n_val), idx.end());
    return s;
}

void check_loss(double loss, int epoch) {
    if (!std::isfinite(loss)) throw NumericalError("train_estimator: loss is not finite at epoch " + std::to_string(epoch));
}

}  // namespace

struct EstimatorTrainer {
    static TrainReport per_mesh(std::span<const TrainingExample> data, const SubspaceBasis& basis,
                                const TrainConfig& cfg) {
        cfg.validate();
        if (data.empty()) throw ArgumentError("train_estimator: empty dataset");
        const Eigen::Index n = basis.grid().size();
        const Eigen::Index k = basis.column_count();
        const auto j_count = Eigen::Index(data.size());

        // Inputs augmented with a constant row so [W b] trains as one block.
        Eigen::MatrixXd inputs(n + 1, j_count);
        Eigen::MatrixXd targets(k, j_count);
        for (Eigen::Index j = 0; j < j_count; ++j) {
            const auto& ex = data[std::size_t(j)];
            require_same_grid(ex.warm.grid(), basis.grid(), "train_estimator");
            inputs.col(j).head(n) = ex.warm.values();
            inputs(n, j) = 1.0;
            targets.col(j) = basis.coeffs(ex.truth);
        }

        CounterRng rng(cfg.seed);
        const Split split = split_examples(data.size(), cfg, rng);
        Eigen::MatrixXd theta = Eigen::MatrixXd::Zero(k, n + 1);
        BlockOptimizer opt(cfg, k, n + 1);

        auto loss_over = [&](const std::vector<int>& ids) {
            if (ids.empty()) return 0.0;
            double total = 0.0;
            for (int j : ids) total += (theta * inputs.col(j) - targets.col(j)).squaredNorm();
            return total / double(ids.size());
        };

        TrainReport report{Estimator::zeros(basis), {}, {}};
        std::vector<int> order = split.train;
        double lr = cfg.learning_rate;
        for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
            std::shuffle(order.begin(), order.end(), rng);
            for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size)) {
                const std::size_t end = std::min(order.size(), start + std::size_t(cfg.batch_size));
                const auto b = Eigen::Index(end - start);
                Eigen::MatrixXd x(n + 1, b), q(k, b);
                for (Eigen::Index i = 0; i < b; ++i) {
                    x.col(i) = inputs.col(order[start + std::size_t(i)]);
                    q.col(i) = targets.col(order[start + std::size_t(i)]);
                }
                Eigen::MatrixXd grad = (2.0 / double(b)) * (theta * x - q) * x.transpose();
                if (cfg.weight_decay > 0.0) grad.leftCols(n) += 2.0 * cfg.weight_decay * theta.leftCols(n);
                opt.step(theta, grad, lr);
            }
            lr *= cfg.lr_decay;
            const double train_loss = loss_over(split.train);
            check_loss(train_loss, epoch);
            report.train_loss.push_back(train_loss);
            report.validation_loss.push_back(loss_over(split.validation));
        }
        report.estimator.weights_ = theta.leftCols(n);
        report.estimator.bias_ = theta.col(n);
        return report;
    }

    static TrainReport shared(std::span<const TrainingExample> data, const StackedBasis& bases, const TrainConfig& cfg) {
        cfg.validate();
        if (data.empty()) throw ArgumentError("train_estimator: empty dataset");
        if (bases.subspace_count() == 0) throw ArgumentError("train_estimator: empty basis stack");

        // One row block per (example, mesh) pair.
        struct Pair {
            Eigen::MatrixXd features;  // features x K
            Eigen::RowVectorXd target_means;
            Eigen::RowVectorXd counts;
        };
        std::vector<std::vector<Pair>> pairs(data.size());
        for (std::size_t j = 0; j < data.size(); ++j) {
            for (const auto& basis : bases.bases()) {
                Pair p;
                p.features = pooled_features(basis, data[j].warm).transpose();
                const Eigen::VectorXd q = basis.coeffs(data[j].truth);
                p.counts.resize(basis.column_count());
                p.target_means.resize(basis.column_count());
                for (int c = 0; c < basis.column_count(); ++c) {
                    p.counts[c] = basis.pixel_counts()[std::size_t(c)];
                    p.target_means[c] = q[c] / std::sqrt(p.counts[c]);
                }
                pairs[j].push_back(std::move(p));
            }
        }

        CounterRng rng(cfg.seed);
        const Split split = split_examples(data.size(), cfg, rng);
        Estimator est = Estimator::shared(cfg.hidden, derive_seed(cfg.seed, 1));
        Eigen::MatrixXd w1 = est.hidden_weights_;
        Eigen::MatrixXd b1 = est.hidden_bias_;
        Eigen::MatrixXd w2 = est.output_weights_;
        Eigen::MatrixXd b2 = Eigen::MatrixXd::Constant(1, 1, est.output_bias_);
        BlockOptimizer opt_w1(cfg, w1.rows(), w1.cols()), opt_b1(cfg, b1.rows(), 1), opt_w2(cfg, w2.rows(), 1),
            opt_b2(cfg, 1, 1);

        auto pair_loss = [&](const Pair& p) {
            const Eigen::MatrixXd h = ((w1 * p.features).colwise() + b1.col(0)).array().tanh();
            const Eigen::RowVectorXd out = (w2.transpose() * h).array() + b2(0, 0);
            return (p.counts.array() * (out - p.target_means).array().square()).sum();
        };
        auto loss_over = [&](const std::vector<int>& ids) {
            if (ids.empty()) return 0.0;
            double total = 0.0;
            for (int j : ids)
                for (const auto& p : pairs[std::size_t(j)]) total += pair_loss(p);
            return total / double(ids.size() * bases.subspace_count());
        };

        std::vector<std::pair<int, int>> order;
        for (int j : split.train)
            for (int l = 0; l < int(bases.subspace_count()); ++l) order.emplace_back(j, l);

        TrainReport report{est, {}, {}};
        double lr = cfg.learning_rate;
        for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
            std::shuffle(order.begin(), order.end(), rng);
            for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size)) {
                const std::size_t end = std::min(order.size(), start + std::size_t(cfg.batch_size));
                const double scale = 1.0 / double(end - start);
                Eigen::MatrixXd g_w1 = Eigen::MatrixXd::Zero(w1.rows(), w1.cols());
                Eigen::MatrixXd g_b1 = Eigen::MatrixXd::Zero(b1.rows(), 1);
                Eigen::MatrixXd g_w2 = Eigen::MatrixXd::Zero(w2.rows(), 1);
                double g_b2 = 0.0;
                for (std::size_t s = start; s < end; ++s) {
                    const Pair& p = pairs[std::size_t(order[s].first)][std::size_t(order[s].second)];
                    const Eigen::MatrixXd h = ((w1 * p.features).colwise() + b1.col(0)).array().tanh();
                    const Eigen::RowVectorXd out = (w2.transpose() * h).array() + b2(0, 0);
                    const Eigen::RowVectorXd d_out =
                        (2.0 * scale) * (p.counts.array() * (out - p.target_means).array()).matrix();
                    g_w2 += h * d_out.transpose();
                    g_b2 += d_out.sum();
                    const Eigen::MatrixXd d_pre = ((w2.col(0) * d_out).array() * (1.0 - h.array().square())).matrix();
                    g_w1 += d_pre * p.features.transpose();
                    g_b1 += d_pre.rowwise().sum();
                }
                if (cfg.weight_decay > 0.0) {
                    g_w1 += 2.0 * cfg.weight_decay * w1;
                    g_w2 += 2.0 * cfg.weight_decay * w2;
                }
                opt_w1.step(w1, g_w1, lr);
                opt_b1.step(b1, g_b1, lr);
                opt_w2.step(w2, g_w2, lr);
                opt_b2.step(b2, Eigen::MatrixXd::Constant(1, 1, g_b2), lr);
            }
            lr *= cfg.lr_decay;
            const double train_loss = loss_over(split.train);
            check_loss(train_loss, epoch);
            report.train_loss.push_back(train_loss);
            report.validation_loss.push_back(loss_over(split.validation));
        }
        report.estimator.hidden_weights_ = w1;
        report.estimator.hidden_bias_ = b1.col(0);
        report.estimator.output_weights_ = w2.col(0);
        report.estimator.output_bias_ = b2(0, 0);
        return report;
    }
};

TrainReport train_estimator(std::span<const TrainingExample> data, const SubspaceBasis& basis, const TrainConfig& cfg) {
    return EstimatorTrainer::per_mesh(data, basis, cfg);
}

TrainReport train_estimator(std::span<const TrainingExample> data, const StackedBasis& bases, const TrainConfig& cfg) {
    return EstimatorTrainer::shared(data, bases, cfg);
}

std::vector<TrainReport> train_ensemble(std::span<const TrainingExample> data, const StackedBasis& bases,
                                        const TrainConfig& cfg, int threads) {
    const std::size_t count = bases.subspace_count();
    std::vector<std::optional<TrainReport>> slots(count);
    std::vector<std::exception_ptr> errors(count);
    auto work = [&](std::size_t first, std::size_t stride) {
        for (std::size_t l = first; l < count; l += stride) {
            try {
                TrainConfig local = cfg;
                local.seed = derive_seed(cfg.seed, 0x656e73, l);
                slots[l] = EstimatorTrainer::per_mesh(data, bases[l], local);
            } catch (...) {
                errors[l] = std::current_exception();
            }
        }
    };
    const std::size_t n_threads =
        std::max<std::size_t>(1, std::min<std::size_t>(count, threads > 0 ? std::size_t(threads)
                                                                           : std::thread::hardware_concurrency()));
    if (n_threads <= 1) {
        work(0, 1);
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(work, t, n_threads);
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    std::vector<TrainReport> out;
    out.reserve(count);
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
}

}  // namespace meshreg

#include "meshreg/tomography.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

namespace meshreg {

SensorArray::SensorArray(std::vector<Point2> positions) : positions_(std::move(positions)) {
    if (positions_.size() < 2) throw ArgumentError("SensorArray: need at least 2 sensors");
    for (std::size_t i = 0; i < positions_.size(); ++i) {
        const auto& p = positions_[i];
        if (!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0))
            throw ArgumentError("SensorArray: sensor " + std::to_string(i) + " outside the unit square");
        for (std::size_t j = 0; j < i; ++j)
            if (positions_[j] == p)
                throw ArgumentError("SensorArray: sensors " + std::to_string(j) + " and " + std::to_string(i) +
                                    " coincide");
    }
}

std::vector<std::pair<int, int>> SensorArray::pairs() const {
    std::vector<std::pair<int, int>> out;
    const int n = int(positions_.size());
    out.reserve(std::size_t(n) * std::size_t(n - 1) / 2);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) out.emplace_back(i, j);
    return out;
}

SensorArray place_sensors(int n) {
    if (n < 2) throw ArgumentError("place_sensors: need n >= 2, got " + std::to_string(n));
    std::vector<Point2> pos;
    pos.reserve(std::size_t(n));
    for (int i = 0; i < n; ++i) {
        const double theta = 2.0 * std::numbers::pi * i / n;
        pos.push_back({0.5 + 0.5 * std::cos(theta), 0.5 + 0.5 * std::sin(theta)});
    }
    return SensorArray(std::move(pos));
}

RayMatrix::RayMatrix(Grid grid, SparseRowMatrix matrix) : grid_(grid), matrix_(std::move(matrix)) {
    if (matrix_.cols() != grid_.size()) throw ArgumentError("RayMatrix: column count must equal grid size");
    matrix_.makeCompressed();
}

RayMatrix RayMatrix::select_rows(const std::vector<bool>& keep) const {
    if (keep.size() != std::size_t(rows())) throw ArgumentError("select_rows: mask length mismatch");
    std::vector<Eigen::Triplet<double>> entries;
    Eigen::Index out_row = 0;
    for (Eigen::Index r = 0; r < rows(); ++r) {
        if (!keep[std::size_t(r)]) continue;
        for (SparseRowMatrix::InnerIterator it(matrix_, r); it; ++it) entries.emplace_back(out_row, it.col(), it.value());
        ++out_row;
    }
    SparseRowMatrix m(out_row, cols());
    m.setFromTriplets(entries.begin(), entries.end());
    return RayMatrix(grid_, std::move(m));
}

std::vector<std::pair<Eigen::Index, double>> ray_row(const Point2& a, const Point2& b, const Grid& grid) {
    const int side = grid.side();
    const double dx = b.x - a.x;
    const double dy = b.y - a.y;
    if (dx == 0.0 && dy == 0.0) throw ArgumentError("ray_row: coincident endpoints");

    std::vector<double> ts{0.0, 1.0};
    ts.reserve(std::size_t(2 * side + 4));
    auto crossings = [&](double origin, double delta) {
        if (delta == 0.0) return;
        for (int line = 0; line <= side; ++line) {
            const double t = (double(line) / side - origin) / delta;
            if (t > 0.0 && t < 1.0) ts.push_back(t);
        }
    };
    crossings(a.x, dx);
    crossings(a.y, dy);
    std::sort(ts.begin(), ts.end());
    ts.erase(std::unique(ts.begin(), ts.end()), ts.end());

    std::vector<std::pair<Eigen::Index, double>> row;
    row.reserve(ts.size());
    for (std::size_t s = 0; s + 1 < ts.size(); ++s) {
        const double tm = 0.5 * (ts[s] + ts[s + 1]);
        const double x = a.x + tm * dx;
        const double y = a.y + tm * dy;
        const int col = std::clamp(int(std::floor(x * side)), 0, side - 1);
        const int r = std::clamp(int(std::floor(y * side)), 0, side - 1);
        row.emplace_back(grid.index(r, col), ts[s + 1] - ts[s]);
    }
    std::sort(row.begin(), row.end());
    std::vector<std::pair<Eigen::Index, double>> merged;
    for (const auto& [p, len] : row) {
        if (!merged.empty() && merged.back().first == p)
            merged.back().second += len;
        else
            merged.emplace_back(p, len);
    }
    return merged;
}

RayMatrix build_ray_matrix(const SensorArray& sensors, const Grid& grid) {
    const auto pairs = sensors.pairs();
    std::vector<Eigen::Triplet<double>> entries;
    entries.reserve(pairs.size() * std::size_t(2 * grid.side()));
    for (std::size_t r = 0; r < pairs.size(); ++r) {
        const auto [i, j] = pairs[r];
        for (const auto& [p, v] : ray_row(sensors[std::size_t(i)], sensors[std::size_t(j)], grid))
            entries.emplace_back(Eigen::Index(r), p, v);
    }
    SparseRowMatrix m(Eigen::Index(pairs.size()), grid.size());
    m.setFromTriplets(entries.begin(), entries.end());
    return RayMatrix(grid, std::move(m));
}

std::size_t Measurement::erased_count() const { return std::size_t(std::count(erased.begin(), erased.end(), true)); }

Measurement forward(const RayMatrix& a, const Image& x) {
    require_same_grid(a.grid(), x.grid(), "forward");
    return Measurement::clean(a.matrix() * x.values());
}

Measurement add_gaussian_noise(const Measurement& y, double snr_db, Seed seed) {
    if (std::isinf(snr_db) && snr_db > 0) return y;
    if (!std::isfinite(snr_db)) throw ArgumentError("add_gaussian_noise: snr_db must be finite or +inf");
    if (y.size() < 2) throw ArgumentError("add_gaussian_noise: need at least 2 measurements");
    const double mean = y.values.mean();
    const double signal_var = (y.values.array() - mean).square().mean();
    if (!(signal_var > 0.0)) throw ArgumentError("add_gaussian_noise: zero-variance measurements, SNR undefined");
    const double sigma = std::sqrt(signal_var * std::pow(10.0, -snr_db / 10.0));

    CounterRng rng(seed);
    std::normal_distribution<double> normal(0.0, sigma);
    Measurement out = y;
    for (Eigen::Index r = 0; r < out.size(); ++r) {
        const double noise = normal(rng);
        if (!out.erased[std::size_t(r)]) out.values[r] += noise;
    }
    return out;
}

Measurement erase(const Measurement& y, double p, Seed seed) {
    if (!(p >= 0.0 && p <= 1.0)) throw ArgumentError("erase: probability must be in [0, 1]");
    CounterRng rng(seed);
    Measurement out = y;
    for (Eigen::Index r = 0; r < out.size(); ++r) {
        // uniform() < 1 always, so p = 1 erases everything and p = 0 nothing.
        if (rng.uniform() < p) {
            out.values[r] = 0.0;
            out.erased[std::size_t(r)] = true;
        }
    }
    return out;
}

void save_ray_matrix(const RayMatrix& a, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError(path.string(), "cannot open for writing: " + path.string());
    out.precision(17);
    out << a.rows() << ' ' << a.cols() << ' ' << a.matrix().nonZeros() << '\n';
    for (Eigen::Index r = 0; r < a.rows(); ++r)
        for (SparseRowMatrix::InnerIterator it(a.matrix(), r); it; ++it)
            out << r << ' ' << it.col() << ' ' << it.value() << '\n';
}

RayMatrix load_ray_matrix(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path.string(), "cannot open for reading: " + path.string());
    long long m = 0, n = 0, nnz = 0;
    if (!(in >> m >> n >> nnz) || m < 0 || n < 4 || nnz < 0)
        throw ParseError("header", "ray matrix: malformed 'M N nnz' header");
    const auto side = static_cast<long long>(std::llround(std::sqrt(double(n))));
    if (side * side != n) throw ParseError("N", "ray matrix: N is not a square pixel count");
    std::vector<Eigen::Triplet<double>> entries;
    entries.reserve(std::size_t(nnz));
    for (long long k = 0; k < nnz; ++k) {
        long long r = 0, c = 0;
        double v = 0.0;
        if (!(in >> r >> c >> v)) throw ParseError("triplet", "ray matrix: truncated at triplet " + std::to_string(k));
        if (r < 0 || r >= m || c < 0 || c >= n)
            throw ParseError("triplet", "ray matrix: index out of range at triplet " + std::to_string(k));
        entries.emplace_back(Eigen::Index(r), Eigen::Index(c), v);
    }
    SparseRowMatrix mat(m, n);
    mat.setFromTriplets(entries.begin(), entries.end());
    return RayMatrix(Grid(int(side)), std::move(mat));
}

void save_measurement(const Measurement& y, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError(path.string(), "cannot open for writing: " + path.string());
    out.precision(17);
    out << "value,mask\n";
    for (Eigen::Index r = 0; r < y.size(); ++r) out << y.values[r] << ',' << (y.erased[std::size_t(r)] ? 1 : 0) << '\n';
}

Measurement load_measurement(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path.string(), "cannot open for reading: " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "value,mask")
        throw ParseError("header", "measurement CSV: expected header 'value,mask'");
    std::vector<double> values;
    std::vector<bool> erased;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw ParseError("mask", "measurement CSV: missing mask column");
        double v = 0.0;
        try {
            std::size_t used = 0;
            v = std::stod(line.substr(0, comma), &used);
        } catch (const std::exception&) {
            throw ParseError("value", "measurement CSV: bad value '" + line.substr(0, comma) + "'");
        }
        const auto mask = line.substr(comma + 1);
        if (mask != "0" && mask != "1") throw ParseError("mask", "measurement CSV: mask must be 0 or 1");
        values.push_back(v);
        erased.push_back(mask == "1");
    }
    Measurement y{Eigen::Map<Eigen::VectorXd>(values.data(), Eigen::Index(values.size())), std::move(erased)};
    for (Eigen::Index r = 0; r < y.size(); ++r)
        if (y.erased[std::size_t(r)] && y.values[r] != 0.0)
            throw ParseError("value", "measurement CSV: erased entry " + std::to_string(r) + " is not zero");
    return y;
}

}  // namespace meshreg

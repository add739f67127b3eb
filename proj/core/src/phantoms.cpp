#include "meshreg/phantoms.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace meshreg {

bool Shape::contains(const Point2& p) const {
    const double dx = p.x - center.x;
    const double dy = p.y - center.y;
    if (kind == ShapeKind::circle) return dx * dx + dy * dy <= half_u * half_u;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = c * dx + s * dy;
    const double v = -s * dx + c * dy;
    if (kind == ShapeKind::ellipse) return (u * u) / (half_u * half_u) + (v * v) / (half_v * half_v) <= 1.0;
    return std::abs(u) <= half_u && std::abs(v) <= half_v;
}

void ShapesConfig::validate() const {
    if (count < 1) throw ArgumentError("ShapesConfig: count must be >= 1");
    if (side < 2) throw ArgumentError("ShapesConfig: side must be >= 2");
    if (min_shapes < 0 || max_shapes < min_shapes) throw ArgumentError("ShapesConfig: bad shapes-per-image range");
    if (kinds.empty()) throw ArgumentError("ShapesConfig: kinds must be nonempty");
    if (!(0.0 <= intensity_lo && intensity_lo <= intensity_hi && intensity_hi <= 1.0))
        throw ArgumentError("ShapesConfig: intensity range must be a nonempty subset of [0, 1]");
    if (!(0.0 < min_size && min_size <= max_size && max_size <= 0.5))
        throw ArgumentError("ShapesConfig: size range must satisfy 0 < min <= max <= 0.5");
}

Seed image_seed(const ShapesConfig& cfg, int index) { return derive_seed(cfg.seed, 0x5348, std::uint64_t(index)); }

std::vector<Shape> sample_shapes(const ShapesConfig& cfg, int index) {
    cfg.validate();
    CounterRng rng(image_seed(cfg, index));
    auto uniform = [&rng](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };
    const int n = cfg.min_shapes + int(rng() % std::uint64_t(cfg.max_shapes - cfg.min_shapes + 1));
    std::vector<Shape> shapes;
    shapes.reserve(std::size_t(n));
    for (int s = 0; s < n; ++s) {
        Shape shape;
        shape.kind = cfg.kinds[std::size_t(rng() % cfg.kinds.size())];
        shape.center = {uniform(0.15, 0.85), uniform(0.15, 0.85)};
        shape.half_u = uniform(cfg.min_size, cfg.max_size);
        shape.half_v = shape.kind == ShapeKind::circle ? shape.half_u : uniform(cfg.min_size, cfg.max_size);
        shape.angle = uniform(0.0, std::numbers::pi);
        shape.intensity = uniform(cfg.intensity_lo, cfg.intensity_hi);
        shapes.push_back(shape);
    }
    return shapes;
}

Image render_shapes(std::span<const Shape> shapes, const Grid& grid) {
    Image img(grid);
    for (Eigen::Index p = 0; p < grid.size(); ++p) {
        const Point2 c = grid.center(p);
        for (const auto& shape : shapes)
            if (shape.contains(c)) img.values()[p] = shape.intensity;
    }
    return img;
}

std::vector<Image> gen_shapes(const ShapesConfig& cfg) {
    cfg.validate();
    const Grid grid(cfg.side);
    std::vector<Image> images;
    images.reserve(std::size_t(cfg.count));
    for (int i = 0; i < cfg.count; ++i) {
        const auto shapes = sample_shapes(cfg, i);
        images.push_back(render_shapes(shapes, grid));
    }
    return images;
}

Image gen_checkerboard(int side, int cells) {
    const Grid grid(side);
    if (cells < 1 || side % cells != 0)
        throw ArgumentError("gen_checkerboard: cells (" + std::to_string(cells) + ") must divide side (" +
                            std::to_string(side) + ")");
    const int block = side / cells;
    Image img(grid);
    for (int i = 0; i < side; ++i)
        for (int j = 0; j < side; ++j) img(i, j) = double(((i / block) + (j / block)) % 2);
    return img;
}

Image point_image(const Grid& grid, std::span<const std::pair<int, int>> pixels, double value) {
    Image img(grid);
    for (const auto& [r, c] : pixels) {
        if (r < 0 || r >= grid.side() || c < 0 || c >= grid.side()) throw ArgumentError("point_image: pixel outside grid");
        img(r, c) = value;
    }
    return img;
}

}  // namespace meshreg

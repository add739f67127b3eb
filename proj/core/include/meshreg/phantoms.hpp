#pragma once

#include <span>
#include <utility>
#include <vector>

#include "meshreg/grid.hpp"
#include "meshreg/random.hpp"

namespace meshreg {

enum class ShapeKind { ellipse, circle, rectangle };

/// One patch in unit-square coordinates; `angle` rotates ellipses and rectangles.
struct Shape {
    ShapeKind kind = ShapeKind::ellipse;
    Point2 center;
    double half_u = 0.0;  // semi-axis or half-width along the rotated x axis
    double half_v = 0.0;
    double angle = 0.0;
    double intensity = 1.0;

    bool contains(const Point2& p) const;
};

struct ShapesConfig {
    int count = 1;
    int side = 32;
    int min_shapes = 2;
    int max_shapes = 6;
    std::vector<ShapeKind> kinds{ShapeKind::ellipse, ShapeKind::circle, ShapeKind::rectangle};
    double intensity_lo = 0.2;
    double intensity_hi = 1.0;
    double min_size = 0.06;
    double max_size = 0.25;
    Seed seed{};

    void validate() const;
};

/// Seed of image `index`; recorded in dataset manifests.
Seed image_seed(const ShapesConfig& cfg, int index);

/// Shape list of image `index`. Parameters live in unit coordinates, so the
/// same index renders the same scene at any grid side.
std::vector<Shape> sample_shapes(const ShapesConfig& cfg, int index);

/// Later shapes overwrite earlier ones; background is 0.
Image render_shapes(std::span<const Shape> shapes, const Grid& grid);

std::vector<Image> gen_shapes(const ShapesConfig& cfg);

/// cells x cells blocks alternating 0/1, starting with 0 at the origin.
Image gen_checkerboard(int side, int cells);

/// Zero image with the listed (row, col) pixels set to `value`.
Image point_image(const Grid& grid, std::span<const std::pair<int, int>> pixels, double value = 1.0);

}  // namespace meshreg

#pragma once

#include <filesystem>

#include "meshreg/grid.hpp"

namespace meshreg {

enum class ImageFormat {
    /// JSON header line {"side":n,"dtype":"f32le"} then n*n little-endian floats.
    f32_raw,
    /// Binary P5, maxval 65535, values affinely mapped from [min, max]; the
    /// range is kept in a "# meshreg-range <min> <max>" comment line.
    pgm16,
};

void save_image(const Image& img, const std::filesystem::path& path, ImageFormat format = ImageFormat::f32_raw);

/// Format is detected from the leading bytes.
Image load_image(const std::filesystem::path& path);

}  // namespace meshreg

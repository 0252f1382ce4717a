#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cfasl {

/// Writes an 8-bit grayscale PNG. `pixels` is row-major [height x width]
/// with values clamped from [0,1].
void write_png_gray(const std::string& path, const std::vector<double>& pixels,
                    int64_t width, int64_t height);

}  // namespace cfasl

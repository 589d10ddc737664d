#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pen {

/// Minimal deterministic PNG writers (zlib-compressed, fixed settings).
void write_png_gray8(const std::string& path, int width, int height,
                     const std::vector<std::uint8_t>& pixels);
void write_png_rgb8(const std::string& path, int width, int height,
                    const std::vector<std::uint8_t>& rgb);

}  // namespace pen

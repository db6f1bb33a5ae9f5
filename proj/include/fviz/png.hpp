#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fviz {

// Minimal RGB8 PNG writer (stored deflate blocks, no external deps).
// pixels: row-major, 3 bytes per pixel.
void write_png_rgb8(const std::string& path, int width, int height,
                    const std::vector<std::uint8_t>& pixels);

}  // namespace fviz

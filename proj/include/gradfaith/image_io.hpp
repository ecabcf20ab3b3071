#pragma once

#include <filesystem>

#include "gradfaith/gradcam.hpp"

namespace gradfaith {

/// Binary PGM (P5). Values are scaled to [0,1] by the file's maxval;
/// 1- and 2-byte sample widths are accepted on read, writes use maxval 255
/// with round(255 * v). Malformed headers raise FormatError at the failing
/// byte offset.
Grid read_pgm(const std::filesystem::path&);
void write_pgm(const std::filesystem::path&, const Grid& gray);

/// Binary PPM (P6), maxval 255, channels given as [0,1] grids.
void write_ppm(const std::filesystem::path&, const Grid& r, const Grid& g, const Grid& b);

}  // namespace gradfaith

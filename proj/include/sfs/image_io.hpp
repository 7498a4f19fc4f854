#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sfs/geometry.hpp"

namespace sfs::io {

// Normal maps: 3-channel 16-bit PNG, code = round((n+1)/2 * 65535).
// The background sentinel (-1,-1,-1) round-trips as code (0,0,0).
void write_normal_png(const std::string& path, const geom::NormalField& n);
geom::NormalField read_normal_png(const std::string& path);

// Shading images: 8-bit grayscale PNG, code = round(c * 255).
void write_gray_png(const std::string& path, const geom::ShadingImage& img);
geom::ShadingImage read_gray_png(const std::string& path);

// Height fields: "HGT1" magic, u16 height, u16 width (little-endian), then
// float32 little-endian row-major samples.
void write_height_hgt(const std::string& path, const geom::HeightField& h);
geom::HeightField read_height_hgt(const std::string& path);

// Binary PGM (P5), maxval 255.
void write_pgm(const std::string& path, int height, int width,
               const std::vector<uint8_t>& pixels);

}  // namespace sfs::io

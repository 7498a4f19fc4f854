#include "sfs/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>

namespace sfs::io {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw IoError("cannot open " + path);
    return f;
}

void write_png_impl(const std::string& path, int height, int width, int bit_depth,
                    int color_type, const std::vector<std::vector<uint8_t>>& rows) {
    FilePtr f = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng error writing " + path);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int i = 0; i < height; ++i)
        png_write_row(png, const_cast<png_bytep>(rows[i].data()));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

struct PngImage {
    int height = 0, width = 0, bit_depth = 0, channels = 0;
    std::vector<std::vector<uint8_t>> rows;
};

PngImage read_png_impl(const std::string& path) {
    FilePtr f = open_file(path, "rb");
    uint8_t sig[8];
    if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8))
        throw IoError(path + " is not a PNG file");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng error reading " + path);
    }
    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    PngImage img;
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    img.bit_depth = png_get_bit_depth(png, info);
    int color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && img.bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);
    img.bit_depth = png_get_bit_depth(png, info);
    img.channels = png_get_channels(png, info);
    size_t rowbytes = png_get_rowbytes(png, info);
    img.rows.assign(img.height, std::vector<uint8_t>(rowbytes));
    for (int i = 0; i < img.height; ++i) png_read_row(png, img.rows[i].data(), nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

inline uint16_t be16(const uint8_t* p) { return static_cast<uint16_t>(p[0] << 8 | p[1]); }

}  // namespace

void write_normal_png(const std::string& path, const geom::NormalField& n) {
    std::vector<std::vector<uint8_t>> rows(n.height,
                                           std::vector<uint8_t>(static_cast<size_t>(n.width) * 6));
    for (int i = 0; i < n.height; ++i) {
        for (int j = 0; j < n.width; ++j) {
            Vec3 v = n.at(i, j);
            double ch[3] = {v.x, v.y, v.z};
            for (int k = 0; k < 3; ++k) {
                double x = std::clamp(ch[k], -1.0, 1.0);
                auto code = static_cast<uint16_t>(std::lround((x + 1.0) / 2.0 * 65535.0));
                rows[i][static_cast<size_t>(j) * 6 + k * 2] = static_cast<uint8_t>(code >> 8);
                rows[i][static_cast<size_t>(j) * 6 + k * 2 + 1] = static_cast<uint8_t>(code & 0xff);
            }
        }
    }
    write_png_impl(path, n.height, n.width, 16, PNG_COLOR_TYPE_RGB, rows);
}

geom::NormalField read_normal_png(const std::string& path) {
    PngImage img = read_png_impl(path);
    if (img.bit_depth != 16 || img.channels != 3)
        throw IoError(path + ": expected 16-bit 3-channel normal PNG");
    geom::NormalField n(img.height, img.width);
    for (int i = 0; i < img.height; ++i) {
        for (int j = 0; j < img.width; ++j) {
            const uint8_t* px = img.rows[i].data() + static_cast<size_t>(j) * 6;
            Vec3 v{be16(px) / 65535.0 * 2.0 - 1.0, be16(px + 2) / 65535.0 * 2.0 - 1.0,
                   be16(px + 4) / 65535.0 * 2.0 - 1.0};
            n.set(i, j, v);
        }
    }
    return n;
}

void write_gray_png(const std::string& path, const geom::ShadingImage& img) {
    std::vector<std::vector<uint8_t>> rows(img.height, std::vector<uint8_t>(img.width));
    for (int i = 0; i < img.height; ++i)
        for (int j = 0; j < img.width; ++j) {
            double v = std::clamp(img.at(i, j), 0.0, 1.0);
            rows[i][j] = static_cast<uint8_t>(std::lround(v * 255.0));
        }
    write_png_impl(path, img.height, img.width, 8, PNG_COLOR_TYPE_GRAY, rows);
}

geom::ShadingImage read_gray_png(const std::string& path) {
    PngImage img = read_png_impl(path);
    if (img.channels != 1 || img.bit_depth != 8)
        throw ConfigError(path + ": expected an 8-bit grayscale PNG");
    geom::ShadingImage out(img.height, img.width);
    for (int i = 0; i < img.height; ++i)
        for (int j = 0; j < img.width; ++j) out.at(i, j) = img.rows[i][j] / 255.0;
    return out;
}

void write_height_hgt(const std::string& path, const geom::HeightField& h) {
    SFS_CHECK(h.height <= 65535 && h.width <= 65535, "height field too large for HGT1");
    FilePtr f = open_file(path, "wb");
    const char magic[4] = {'H', 'G', 'T', '1'};
    uint8_t dims[4] = {static_cast<uint8_t>(h.height & 0xff), static_cast<uint8_t>(h.height >> 8),
                       static_cast<uint8_t>(h.width & 0xff), static_cast<uint8_t>(h.width >> 8)};
    if (std::fwrite(magic, 1, 4, f.get()) != 4 || std::fwrite(dims, 1, 4, f.get()) != 4)
        throw IoError("short write: " + path);
    std::vector<float> buf(h.data.begin(), h.data.end());
    // float32 little-endian; x86 is little-endian so raw write is the format
    if (std::fwrite(buf.data(), sizeof(float), buf.size(), f.get()) != buf.size())
        throw IoError("short write: " + path);
}

geom::HeightField read_height_hgt(const std::string& path) {
    FilePtr f = open_file(path, "rb");
    char magic[4];
    uint8_t dims[4];
    if (std::fread(magic, 1, 4, f.get()) != 4 || std::memcmp(magic, "HGT1", 4) != 0)
        throw IoError(path + ": bad HGT1 magic");
    if (std::fread(dims, 1, 4, f.get()) != 4) throw IoError(path + ": truncated header");
    int hh = dims[0] | dims[1] << 8;
    int ww = dims[2] | dims[3] << 8;
    geom::HeightField h(hh, ww);
    std::vector<float> buf(static_cast<size_t>(hh) * ww);
    if (std::fread(buf.data(), sizeof(float), buf.size(), f.get()) != buf.size())
        throw IoError(path + ": truncated data");
    std::copy(buf.begin(), buf.end(), h.data.begin());
    return h;
}

void write_pgm(const std::string& path, int height, int width,
               const std::vector<uint8_t>& pixels) {
    SFS_CHECK(pixels.size() == static_cast<size_t>(height) * width, "write_pgm: size mismatch");
    FilePtr f = open_file(path, "wb");
    std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    if (std::fwrite(header.data(), 1, header.size(), f.get()) != header.size() ||
        std::fwrite(pixels.data(), 1, pixels.size(), f.get()) != pixels.size())
        throw IoError("short write: " + path);
}

}  // namespace sfs::io

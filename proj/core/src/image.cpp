// SPDX-License-Identifier: Apache-2.0

#include "cadrads/image.hpp"

#include <png.h>

#include <cstdio>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>

#include "cadrads/error.hpp"

namespace cadrads {

namespace {

bool has_suffix(const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

GrayImage read_png_gray(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw data_error("image-io", "cannot open " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw data_error("image-io", "libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw data_error("image-io", "corrupt PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);

    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
        color == PNG_COLOR_TYPE_PALETTE) {
        png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    }
    png_read_update_info(png, info);

    GrayImage img(static_cast<int>(h), static_cast<int>(w));
    std::vector<png_bytep> rows(h);
    for (png_uint_32 r = 0; r < h; ++r) rows[r] = img.pixels.data() + static_cast<std::size_t>(r) * w;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_png(const std::string& path, int h, int w, int channels, const std::uint8_t* data) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw data_error("image-io", "cannot write " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw data_error("image-io", "libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw data_error("image-io", "PNG write failed: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(h);
    for (int r = 0; r < h; ++r) {
        rows[r] = const_cast<png_bytep>(data + static_cast<std::size_t>(r) * w * channels);
    }
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

GrayImage read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("image-io", "cannot open " + path);
    std::string magic;
    in >> magic;
    if (magic != "P5" && magic != "P2") throw data_error("image-io", "not a PGM file: " + path);

    auto next_int = [&in, &path]() {
        int v;
        // skip whitespace and '#' comment lines
        for (;;) {
            int c = in.peek();
            if (c == '#') {
                std::string line;
                std::getline(in, line);
            } else if (std::isspace(c)) {
                in.get();
            } else {
                break;
            }
        }
        if (!(in >> v)) throw data_error("image-io", "truncated PGM header: " + path);
        return v;
    };
    int w = next_int();
    int h = next_int();
    int maxv = next_int();
    if (w <= 0 || h <= 0 || maxv <= 0 || maxv > 255) {
        throw data_error("image-io", "unsupported PGM header: " + path);
    }
    GrayImage img(h, w);
    if (magic == "P5") {
        in.get();  // single whitespace after maxval
        in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.size()));
        if (in.gcount() != static_cast<std::streamsize>(img.size())) {
            throw data_error("image-io", "truncated PGM data: " + path);
        }
    } else {
        for (auto& px : img.pixels) {
            int v;
            if (!(in >> v)) throw data_error("image-io", "truncated PGM data: " + path);
            px = static_cast<std::uint8_t>(v);
        }
    }
    return img;
}

void write_pgm(const std::string& path, const GrayImage& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("image-io", "cannot write " + path);
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.size()));
    if (!out) throw data_error("image-io", "PGM write failed: " + path);
}

}  // namespace

std::size_t BinaryMask::count() const {
    return static_cast<std::size_t>(std::accumulate(bits.begin(), bits.end(), std::size_t{0}));
}

GrayImage read_gray(const std::string& path) {
    if (has_suffix(path, ".pgm") || has_suffix(path, ".PGM")) return read_pgm(path);
    return read_png_gray(path);
}

void write_gray(const std::string& path, const GrayImage& img) {
    if (img.height <= 0 || img.width <= 0) throw data_error("image-io", "empty image for " + path);
    if (has_suffix(path, ".pgm") || has_suffix(path, ".PGM")) {
        write_pgm(path, img);
    } else {
        write_png(path, img.height, img.width, 1, img.pixels.data());
    }
}

void write_rgb_png(const std::string& path, const RgbImage& img) {
    if (img.height <= 0 || img.width <= 0) throw data_error("image-io", "empty image for " + path);
    write_png(path, img.height, img.width, 3, img.pixels.data());
}

}  // namespace cadrads

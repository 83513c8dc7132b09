// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cadrads {

// 8-bit grayscale image, row-major.
struct GrayImage {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;

    GrayImage() = default;
    GrayImage(int h, int w, std::uint8_t fill = 0)
        : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {}

    std::uint8_t& at(int r, int c) { return pixels[static_cast<std::size_t>(r) * width + c]; }
    std::uint8_t at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * width + c]; }
    std::size_t size() const { return pixels.size(); }

    bool operator==(const GrayImage&) const = default;
};

// Boolean mask with the shape of the image it was derived from.
struct BinaryMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> bits;  // 0/1

    BinaryMask() = default;
    BinaryMask(int h, int w, bool fill = false)
        : height(h), width(w), bits(static_cast<std::size_t>(h) * w, fill ? 1 : 0) {}

    bool get(int r, int c) const { return bits[static_cast<std::size_t>(r) * width + c] != 0; }
    void set(int r, int c, bool v) { bits[static_cast<std::size_t>(r) * width + c] = v ? 1 : 0; }
    std::size_t count() const;

    bool operator==(const BinaryMask&) const = default;
};

// Interleaved RGB, used only for rendered overlays.
struct RgbImage {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;  // 3 per pixel

    RgbImage() = default;
    RgbImage(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0) {}

    void set(int r, int c, std::uint8_t red, std::uint8_t green, std::uint8_t blue) {
        std::size_t i = (static_cast<std::size_t>(r) * width + c) * 3;
        pixels[i] = red;
        pixels[i + 1] = green;
        pixels[i + 2] = blue;
    }
};

// Reads 8-bit grayscale PNG or PGM (P2/P5), chosen by file extension.
GrayImage read_gray(const std::string& path);
void write_gray(const std::string& path, const GrayImage& img);
void write_rgb_png(const std::string& path, const RgbImage& img);

}  // namespace cadrads

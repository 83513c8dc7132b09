// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "cadrads/image.hpp"

namespace cadrads::imaging {

struct ClaheParams {
    double clip_limit = 2.0;
    int tiles_x = 8;
    int tiles_y = 8;
};

struct BBox {
    int row0 = 0, col0 = 0, row1 = 0, col1 = 0;  // half-open [row0,row1) x [col0,col1)
    int height() const { return row1 - row0; }
    int width() const { return col1 - col0; }
    bool operator==(const BBox&) const = default;
};

// Exhaustive sweep over all 256 thresholds maximizing between-class
// variance; smallest threshold wins ties. Returns nullopt for a constant
// image (no split exists).
std::optional<int> otsu_threshold(const GrayImage& img);

// Mask is true where intensity >= Otsu threshold. Constant image -> all false.
BinaryMask binarize(const GrayImage& img);

struct ComponentResult {
    BinaryMask mask;
    bool empty_input = false;  // warning flag: input had no true pixels
};

// Keeps the single largest connected true-component (4- or 8-connectivity).
// Ties break toward the component with the smallest row-major pixel index.
ComponentResult largest_component(const BinaryMask& mask, int connectivity);

// Zeroes every pixel outside the largest 8-connected foreground object.
// Throws PreprocessFailure (Data) if the image has no foreground.
GrayImage remove_artifacts(const GrayImage& img);

// Contrast-limited adaptive histogram equalization over a tiles_x x tiles_y
// grid with bilinear blending of the per-tile mappings; edge pixels clamp
// to the outermost tile centers.
GrayImage clahe(const GrayImage& img, const ClaheParams& p);

struct CropResult {
    GrayImage image;
    BBox bbox;
};

// Tight bounding box of pixels > threshold, expanded by `margin` and
// clamped to the frame. Throws if nothing exceeds the threshold.
CropResult autocrop(const GrayImage& img, int threshold = 0, int margin = 2);

// Half-pixel-center bilinear resampling.
GrayImage resize_bilinear(const GrayImage& img, int out_h, int out_w);

struct PreprocessInfo {
    int otsu_threshold = 0;
    BBox crop_bbox;
    std::vector<std::string> warnings;
    std::array<double, 3> stage_ms{0.0, 0.0, 0.0};  // artifact removal, clahe, crop
};

// Full per-image pipeline: artifact removal -> CLAHE -> background crop.
// The crop threshold is the post-CLAHE background floor (image minimum).
// Resizing is deliberately absent; it happens at sample assembly.
GrayImage preprocess(const GrayImage& img, const ClaheParams& p, PreprocessInfo* info = nullptr);

}  // namespace cadrads::imaging

// SPDX-License-Identifier: Apache-2.0

#include "cadrads/imaging.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <limits>

#include "cadrads/error.hpp"
#include "cadrads/parallel.hpp"

namespace cadrads::imaging {

namespace {

void check_valid(const GrayImage& img, const char* stage) {
    if (img.height < 1 || img.width < 1 ||
        img.pixels.size() != static_cast<std::size_t>(img.height) * img.width) {
        throw data_error(stage, "invalid image shape");
    }
}

double now_ms() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double, std::milli>(clock::now().time_since_epoch()).count();
}

}  // namespace

std::optional<int> otsu_threshold(const GrayImage& img) {
    check_valid(img, "binarize");
    std::array<std::int64_t, 256> hist{};
    for (std::uint8_t p : img.pixels) hist[p]++;

    const double total = static_cast<double>(img.size());
    double sum_all = 0.0;
    for (int v = 0; v < 256; ++v) sum_all += static_cast<double>(v) * hist[v];

    // Classes at threshold t: {p < t} vs {p >= t}.
    double best = -1.0;
    int best_t = -1;
    double w0 = 0.0, sum0 = 0.0;
    for (int t = 1; t < 256; ++t) {
        w0 += hist[t - 1];
        sum0 += static_cast<double>(t - 1) * hist[t - 1];
        const double w1 = total - w0;
        if (w0 == 0.0 || w1 == 0.0) continue;
        const double mu0 = sum0 / w0;
        const double mu1 = (sum_all - sum0) / w1;
        const double between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if (between > best) {
            best = between;
            best_t = t;
        }
    }
    if (best_t < 0) return std::nullopt;  // constant image
    return best_t;
}

BinaryMask binarize(const GrayImage& img) {
    auto t = otsu_threshold(img);
    BinaryMask mask(img.height, img.width, false);
    if (!t) return mask;
    const int thr = *t;
    for (std::size_t i = 0; i < img.size(); ++i) mask.bits[i] = img.pixels[i] >= thr ? 1 : 0;
    return mask;
}

ComponentResult largest_component(const BinaryMask& mask, int connectivity) {
    if (connectivity != 4 && connectivity != 8) {
        throw usage_error("largest-component", "connectivity must be 4 or 8");
    }
    const int h = mask.height, w = mask.width;
    ComponentResult out;
    out.mask = BinaryMask(h, w, false);
    if (mask.count() == 0) {
        out.empty_input = true;
        return out;
    }

    std::vector<std::int32_t> label(mask.bits.size(), -1);
    std::vector<std::size_t> stack;
    std::int32_t next_label = 0;
    std::size_t best_size = 0;
    std::size_t best_anchor = std::numeric_limits<std::size_t>::max();
    std::int32_t best_label = -1;

    static constexpr int dr8[] = {-1, -1, -1, 0, 0, 1, 1, 1};
    static constexpr int dc8[] = {-1, 0, 1, -1, 1, -1, 0, 1};
    static constexpr int dr4[] = {-1, 0, 0, 1};
    static constexpr int dc4[] = {0, -1, 1, 0};
    const int* dr = connectivity == 8 ? dr8 : dr4;
    const int* dc = connectivity == 8 ? dc8 : dc4;
    const int nd = connectivity;

    for (std::size_t seed = 0; seed < mask.bits.size(); ++seed) {
        if (!mask.bits[seed] || label[seed] >= 0) continue;
        const std::int32_t cur = next_label++;
        std::size_t size = 0;
        const std::size_t anchor = seed;  // smallest row-major index: scan order guarantees it
        stack.push_back(seed);
        label[seed] = cur;
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
            ++size;
            const int r = static_cast<int>(i) / w;
            const int c = static_cast<int>(i) % w;
            for (int k = 0; k < nd; ++k) {
                const int nr = r + dr[k], nc = c + dc[k];
                if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
                const std::size_t ni = static_cast<std::size_t>(nr) * w + nc;
                if (mask.bits[ni] && label[ni] < 0) {
                    label[ni] = cur;
                    stack.push_back(ni);
                }
            }
        }
        if (size > best_size || (size == best_size && anchor < best_anchor)) {
            best_size = size;
            best_anchor = anchor;
            best_label = cur;
        }
    }

    for (std::size_t i = 0; i < label.size(); ++i) {
        if (label[i] == best_label) out.mask.bits[i] = 1;
    }
    return out;
}

GrayImage remove_artifacts(const GrayImage& img) {
    check_valid(img, "remove-artifacts");
    auto comp = largest_component(binarize(img), 8);
    if (comp.empty_input) {
        throw data_error("remove-artifacts", "PreprocessFailure: image has no foreground");
    }
    GrayImage out = img;
    for (std::size_t i = 0; i < out.pixels.size(); ++i) {
        if (!comp.mask.bits[i]) out.pixels[i] = 0;
    }
    return out;
}

GrayImage clahe(const GrayImage& img, const ClaheParams& p) {
    check_valid(img, "clahe");
    if (p.clip_limit < 1.0) throw usage_error("clahe", "InvalidParams: clip_limit must be >= 1");
    if (p.tiles_x < 1 || p.tiles_y < 1) throw usage_error("clahe", "InvalidParams: tile counts must be >= 1");
    const int h = img.height, w = img.width;
    const int ty = p.tiles_y, tx = p.tiles_x;
    if (h / ty < 2 || w / tx < 2) {
        throw usage_error("clahe", "InvalidParams: tiles smaller than 2x2 pixels");
    }

    // Tile i spans [i*h/ty, (i+1)*h/ty); sizes may differ by one pixel.
    auto row_start = [&](int i) { return static_cast<int>(static_cast<std::int64_t>(i) * h / ty); };
    auto col_start = [&](int j) { return static_cast<int>(static_cast<std::int64_t>(j) * w / tx); };

    // Per-tile clipped-CDF lookup tables, kept in double until final blend.
    std::vector<std::array<double, 256>> luts(static_cast<std::size_t>(ty) * tx);
    std::vector<double> center_r(ty), center_c(tx);
    for (int i = 0; i < ty; ++i) {
        const int r0 = row_start(i), r1 = row_start(i + 1);
        center_r[i] = 0.5 * (r0 + r1 - 1);
        for (int j = 0; j < tx; ++j) {
            const int c0 = col_start(j), c1 = col_start(j + 1);
            if (i == 0) center_c[j] = 0.5 * (c0 + c1 - 1);

            std::array<double, 256> hist{};
            for (int r = r0; r < r1; ++r) {
                for (int c = c0; c < c1; ++c) hist[img.at(r, c)] += 1.0;
            }
            const double tile_pixels = static_cast<double>(r1 - r0) * (c1 - c0);
            const double limit = p.clip_limit * tile_pixels / 256.0;
            double excess = 0.0;
            for (auto& b : hist) {
                if (b > limit) {
                    excess += b - limit;
                    b = limit;
                }
            }
            const double bonus = excess / 256.0;
            double cum = 0.0;
            auto& lut = luts[static_cast<std::size_t>(i) * tx + j];
            for (int v = 0; v < 256; ++v) {
                cum += hist[v] + bonus;
                lut[v] = cum * 255.0 / tile_pixels;
            }
        }
    }

    GrayImage out(h, w);
    parallel_for(h, [&](std::int64_t rb, std::int64_t re) {
        for (int r = static_cast<int>(rb); r < re; ++r) {
            // bracketing tile rows for this pixel row
            int i1 = 0;
            while (i1 < ty && center_r[i1] < r) ++i1;
            const int i0 = std::max(0, i1 - 1);
            if (i1 >= ty) i1 = ty - 1;
            const double fy = (i0 == i1) ? 0.0
                                         : std::clamp((r - center_r[i0]) / (center_r[i1] - center_r[i0]), 0.0, 1.0);
            for (int c = 0; c < w; ++c) {
                int j1 = 0;
                while (j1 < tx && center_c[j1] < c) ++j1;
                const int j0 = std::max(0, j1 - 1);
                const int j1c = std::min(j1, tx - 1);
                const double fx = (j0 == j1c) ? 0.0
                                              : std::clamp((c - center_c[j0]) / (center_c[j1c] - center_c[j0]), 0.0, 1.0);
                const int v = img.at(r, c);
                const double v00 = luts[static_cast<std::size_t>(i0) * tx + j0][v];
                const double v01 = luts[static_cast<std::size_t>(i0) * tx + j1c][v];
                const double v10 = luts[static_cast<std::size_t>(i1) * tx + j0][v];
                const double v11 = luts[static_cast<std::size_t>(i1) * tx + j1c][v];
                const double top = v00 + fx * (v01 - v00);
                const double bot = v10 + fx * (v11 - v10);
                const double val = top + fy * (bot - top);
                out.at(r, c) = static_cast<std::uint8_t>(std::clamp(std::lround(val), 0l, 255l));
            }
        }
    });
    return out;
}

CropResult autocrop(const GrayImage& img, int threshold, int margin) {
    check_valid(img, "autocrop");
    int rmin = img.height, rmax = -1, cmin = img.width, cmax = -1;
    for (int r = 0; r < img.height; ++r) {
        for (int c = 0; c < img.width; ++c) {
            if (img.at(r, c) > threshold) {
                rmin = std::min(rmin, r);
                rmax = std::max(rmax, r);
                cmin = std::min(cmin, c);
                cmax = std::max(cmax, c);
            }
        }
    }
    if (rmax < 0) throw data_error("autocrop", "AllBackground: no pixel above threshold");

    BBox box;
    box.row0 = std::max(0, rmin - margin);
    box.col0 = std::max(0, cmin - margin);
    box.row1 = std::min(img.height, rmax + margin + 1);
    box.col1 = std::min(img.width, cmax + margin + 1);

    CropResult res;
    res.bbox = box;
    res.image = GrayImage(box.height(), box.width());
    for (int r = 0; r < box.height(); ++r) {
        std::memcpy(res.image.pixels.data() + static_cast<std::size_t>(r) * box.width(),
                    img.pixels.data() + static_cast<std::size_t>(box.row0 + r) * img.width + box.col0,
                    static_cast<std::size_t>(box.width()));
    }
    return res;
}

GrayImage resize_bilinear(const GrayImage& img, int out_h, int out_w) {
    check_valid(img, "resize");
    if (out_h < 1 || out_w < 1) throw usage_error("resize", "output shape must be positive");
    if (out_h == img.height && out_w == img.width) return img;

    GrayImage out(out_h, out_w);
    const double sy = static_cast<double>(img.height) / out_h;
    const double sx = static_cast<double>(img.width) / out_w;
    parallel_for(out_h, [&](std::int64_t rb, std::int64_t re) {
        for (int r = static_cast<int>(rb); r < re; ++r) {
            const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
            const int y0 = static_cast<int>(fy);
            const int y1 = std::min(y0 + 1, img.height - 1);
            const double wy = fy - y0;
            for (int c = 0; c < out_w; ++c) {
                const double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
                const int x0 = static_cast<int>(fx);
                const int x1 = std::min(x0 + 1, img.width - 1);
                const double wx = fx - x0;
                const double top = img.at(y0, x0) + wx * (img.at(y0, x1) - img.at(y0, x0));
                const double bot = img.at(y1, x0) + wx * (img.at(y1, x1) - img.at(y1, x0));
                out.at(r, c) = static_cast<std::uint8_t>(std::clamp(std::lround(top + wy * (bot - top)), 0l, 255l));
            }
        }
    });
    return out;
}

GrayImage preprocess(const GrayImage& img, const ClaheParams& p, PreprocessInfo* info) {
    check_valid(img, "preprocess");
    PreprocessInfo local;
    auto thr = otsu_threshold(img);
    local.otsu_threshold = thr.value_or(0);

    double t0 = now_ms();
    GrayImage cleaned;
    try {
        cleaned = remove_artifacts(img);
    } catch (const Error& e) {
        throw data_error("preprocess", std::string("PreprocessFailure(stage=remove_artifacts): ") + e.what());
    }
    local.stage_ms[0] = now_ms() - t0;

    t0 = now_ms();
    GrayImage enhanced;
    try {
        enhanced = clahe(cleaned, p);
    } catch (const Error& e) {
        throw Error(e.code(), "preprocess", std::string("PreprocessFailure(stage=clahe): ") + e.what());
    }
    local.stage_ms[1] = now_ms() - t0;

    t0 = now_ms();
    CropResult cropped;
    try {
        // CLAHE's clip redistribution lifts pure black a few levels, so the
        // background floor after equalization is the image minimum, not 0.
        const int floor = *std::min_element(enhanced.pixels.begin(), enhanced.pixels.end());
        cropped = autocrop(enhanced, floor, 2);
    } catch (const Error& e) {
        throw data_error("preprocess", std::string("PreprocessFailure(stage=autocrop): ") + e.what());
    }
    local.stage_ms[2] = now_ms() - t0;
    local.crop_bbox = cropped.bbox;

    if (info) {
        info->otsu_threshold = local.otsu_threshold;
        info->crop_bbox = local.crop_bbox;
        info->stage_ms = local.stage_ms;
        // warnings list currently reserved for callers stacking their own
        info->warnings.clear();
    }
    return std::move(cropped.image);
}

}  // namespace cadrads::imaging

// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cadrads/image.hpp"
#include "cadrads/manifest.hpp"
#include "cadrads/rng.hpp"
#include "cadrads/split.hpp"

namespace cadrads::data {

constexpr int kCanonicalSize = 224;

// Looks up the preprocessed image for a manifest entry.
using ImageProvider = std::function<GrayImage(const VesselImage&)>;

// Provider reading "<patient>_<vessel>_v<view>.png" from a directory.
ImageProvider directory_provider(const std::string& dir);

std::string image_key(const VesselImage& im);

// Healthy-mean images at the canonical 224x224 resolution, one per
// (vessel, view). Used to fill channels with no acquired image.
struct ImputationTemplates {
    std::map<std::pair<int, int>, GrayImage> by_key;  // (vessel, view)

    const GrayImage& get(Vessel v, int view) const;
    bool complete() const { return by_key.size() == kNumVessels * kNumViews; }
};

// Pixel-wise mean over preprocessed-then-resized images of the healthy
// (CAD-RADS 0) patients of the TRAINING side only.
ImputationTemplates compute_imputation_templates(const Manifest& manifest,
                                                 const SplitAssignment& split,
                                                 const ImageProvider& provider);

ImputationTemplates load_templates(const std::string& dir);
void save_templates(const std::string& dir, const ImputationTemplates& t);

// One three-channel model input: (LAD, LCX, RCA) at a shared view index.
struct StackedSample {
    std::string patient_id;
    int view = 0;
    int side = 0;  // sample edge length S; data is 3 x S x S
    std::vector<float> data;  // [0,1], channel-major
    int label_binary = 0;
    int label_multi = 0;
    std::array<bool, 3> imputed{false, false, false};

    float& at(int ch, int r, int c) { return data[(static_cast<std::size_t>(ch) * side + r) * side + c]; }
    float at(int ch, int r, int c) const { return data[(static_cast<std::size_t>(ch) * side + r) * side + c]; }
};

enum class Side { Train, Test };

// Emits one sample per (patient, view) at which any vessel has a real
// image; missing channels come from the templates. sample_size defaults
// to the canonical 224 and is reduced only for small-model runs.
std::vector<StackedSample> assemble_samples(const Manifest& manifest,
                                            const ImputationTemplates& templates,
                                            const SplitAssignment& split, Side side,
                                            const ImageProvider& provider,
                                            int sample_size = kCanonicalSize);

// Random horizontal/vertical flips (p=0.5 each) and rotation uniform in
// [-max_rot_deg, +max_rot_deg], identical across the three channels.
StackedSample augment(const StackedSample& sample, Rng& rng, double max_rot_deg = 10.0);

}  // namespace cadrads::data

// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cadrads/image.hpp"
#include "cadrads/manifest.hpp"
#include "cadrads/rng.hpp"

namespace cadrads::synth {

struct SynthConfig {
    int n_patients = 24;
    std::array<double, 6> cadrads_distribution{0.3, 0.1, 0.1, 0.2, 0.2, 0.1};
    int image_size = 160;
    int vessel_width = 18;
    int noise_level = 30;
    int views_per_vessel = 8;
    std::uint64_t seed = 7;

    void validate() const;
};

struct LesionInfo {
    int row_begin = 0;
    int row_end = 0;
    double severity = 0.0;
};

struct VesselTruth {
    double max_severity = 0.0;
    std::vector<LesionInfo> lesions;
};

struct GroundTruth {
    // patient id -> (cadrads, per-vessel truth)
    std::map<std::string, std::pair<int, std::array<VesselTruth, 3>>> patients;
};

// Max-severity bands: 0 -> 0; (0,0.25) -> 1; [0.25,0.5) -> 2;
// [0.5,0.7) -> 3; [0.7,1) -> 4; 1.0 -> 5.
int severity_to_cadrads(const std::vector<double>& max_severity_per_vessel);
int severity_band(double severity);

// Bright vertical tube with sinusoidal centerline jitter keyed to the view
// angle, speckled background, one or two width-shrinking lesions, and an
// occasional bright annotation glyph near a corner.
GrayImage generate_vessel_image(double severity, int width, int size, int view_angle, Rng& rng,
                                int noise_level = 30, std::vector<LesionInfo>* lesions = nullptr);

struct GeneratedDataset {
    data::Manifest manifest;
    GroundTruth truth;
};

// Writes PNGs under <out_dir>/images plus manifest.json and
// ground_truth.json. Regenerating with the same config is byte-identical.
GeneratedDataset generate_dataset(const SynthConfig& config, const std::string& out_dir);

}  // namespace cadrads::synth

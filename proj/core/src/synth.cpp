// SPDX-License-Identifier: Apache-2.0

#include "cadrads/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "cadrads/error.hpp"
#include "cadrads/samples.hpp"

namespace cadrads::synth {

namespace fs = std::filesystem;
using nlohmann::json;

void SynthConfig::validate() const {
    if (n_patients < 1) throw usage_error("synth", "n_patients must be positive");
    double s = 0.0;
    for (double p : cadrads_distribution) {
        if (p < 0.0) throw usage_error("synth", "distribution entries must be nonnegative");
        s += p;
    }
    if (std::abs(s - 1.0) > 1e-9) throw usage_error("synth", "cadrads_distribution must sum to 1");
    if (image_size < 32) throw usage_error("synth", "image_size must be >= 32");
    if (vessel_width < 3 || vessel_width >= image_size / 2) {
        throw usage_error("synth", "vessel_width must be in [3, image_size/2)");
    }
    if (noise_level < 0 || noise_level > 100) throw usage_error("synth", "noise_level must be in [0,100]");
    if (views_per_vessel < 1 || views_per_vessel > data::kNumViews) {
        throw usage_error("synth", "views_per_vessel must be in [1,8]");
    }
}

int severity_band(double s) {
    if (s < 0.0 || s > 1.0) throw data_error("synth", "severity out of [0,1]");
    if (s == 0.0) return 0;
    if (s < 0.25) return 1;
    if (s < 0.5) return 2;
    if (s < 0.7) return 3;
    if (s < 1.0) return 4;
    return 5;
}

int severity_to_cadrads(const std::vector<double>& max_severity_per_vessel) {
    double worst = 0.0;
    for (double s : max_severity_per_vessel) worst = std::max(worst, s);
    return severity_band(worst);
}

GrayImage generate_vessel_image(double severity, int width, int size, int view_angle, Rng& rng,
                                int noise_level, std::vector<LesionInfo>* lesions_out) {
    if (severity < 0.0 || severity > 1.0) throw data_error("synth", "severity out of [0,1]");

    GrayImage img(size, size);
    // speckled dark background
    for (auto& p : img.pixels) {
        p = static_cast<std::uint8_t>(rng.index(static_cast<std::uint64_t>(noise_level) + 1));
    }

    // lesion layout: one or two narrowed segments along the tube
    std::vector<LesionInfo> lesions;
    if (severity > 0.0) {
        const int n_lesions = 1 + static_cast<int>(rng.index(2));
        const int seg = size / (2 * n_lesions + 1);
        for (int l = 0; l < n_lesions; ++l) {
            LesionInfo li;
            const int base = (2 * l + 1) * seg;
            li.row_begin = base + static_cast<int>(rng.index(static_cast<std::uint64_t>(seg / 2 + 1)));
            li.row_end = li.row_begin + std::max(6, seg / 2);
            li.row_end = std::min(li.row_end, size - 1);
            li.severity = severity;
            lesions.push_back(li);
        }
    }

    const double jitter_amp = size / 16.0;
    const double phase = view_angle * (M_PI / 4.0);
    const double freq = 2.0 * M_PI * 1.5 / size;
    const double half = width / 2.0;

    for (int r = 0; r < size; ++r) {
        // raised-cosine narrowing inside lesions, full severity at the core
        double shrink = 0.0;
        for (const auto& li : lesions) {
            if (r >= li.row_begin && r <= li.row_end) {
                const double span = li.row_end - li.row_begin;
                const double u = span > 0 ? (r - li.row_begin) / span : 0.5;
                const double profile = 0.5 * (1.0 - std::cos(2.0 * M_PI * u));  // 0..1..0
                shrink = std::max(shrink, li.severity * profile);
            }
        }
        const double local_half = half * (1.0 - shrink);
        const double cx = size / 2.0 + jitter_amp * std::sin(freq * r + phase);
        for (int c = 0; c < size; ++c) {
            const double d = std::abs(c - cx);
            if (local_half >= 0.5 && d <= local_half) {
                // bright tube with a soft edge and mild texture
                const double edge = std::min(1.0, (local_half - d) / 1.5 + 0.35);
                const int tex = static_cast<int>(rng.index(24));
                img.at(r, c) = static_cast<std::uint8_t>(
                    std::clamp(static_cast<int>(edge * (195 + tex)), 0, 255));
            }
        }
    }

    // occasional bright annotation glyph near a corner: a small cross of
    // strokes well separated from the tube
    if (rng.bernoulli(0.3)) {
        const int gs = std::max(6, size / 16);
        const bool top = rng.bernoulli(0.5);
        const int r0 = top ? 2 : size - gs - 2;
        const int c0 = rng.bernoulli(0.5) ? 2 : size - gs - 2;
        for (int i = 0; i < gs; ++i) {
            img.at(r0 + gs / 2, c0 + i) = 230;
            img.at(r0 + i, c0 + gs / 2) = 230;
        }
    }

    if (lesions_out) *lesions_out = lesions;
    return img;
}

namespace {

std::string patient_name(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "p%04d", i);
    return buf;
}

int sample_cadrads(const std::array<double, 6>& dist, Rng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (int c = 0; c < 6; ++c) {
        acc += dist[static_cast<std::size_t>(c)];
        if (u < acc) return c;
    }
    return 5;
}

// Severity drawn inside the band for the score, away from the boundaries
// so that resized images stay separable.
double severity_in_band(int cadrads, Rng& rng) {
    switch (cadrads) {
        case 0: return 0.0;
        case 1: return rng.uniform(0.05, 0.22);
        case 2: return rng.uniform(0.27, 0.47);
        case 3: return rng.uniform(0.53, 0.67);
        case 4: return rng.uniform(0.73, 0.97);
        default: return 1.0;
    }
}

}  // namespace

GeneratedDataset generate_dataset(const SynthConfig& config, const std::string& out_dir) {
    config.validate();
    const fs::path root(out_dir);
    const fs::path img_dir = root / "images";
    std::error_code ec;
    fs::create_directories(img_dir, ec);
    if (ec) throw data_error("synth", "IOFailure: cannot create " + img_dir.string());

    GeneratedDataset out;
    const Rng base(config.seed);

    for (int i = 0; i < config.n_patients; ++i) {
        const std::string pid = patient_name(i);
        Rng prng = base.sub("patient", static_cast<std::uint64_t>(i));
        const int cadrads = sample_cadrads(config.cadrads_distribution, prng);

        std::array<VesselTruth, 3> vessels;
        std::array<bool, 3> diseased{false, false, false};
        if (cadrads > 0) {
            const double target = severity_in_band(cadrads, prng);
            const int n_diseased = 1 + static_cast<int>(prng.index(3));
            std::vector<int> order{0, 1, 2};
            prng.shuffle(order);
            for (int d = 0; d < n_diseased; ++d) {
                const int v = order[static_cast<std::size_t>(d)];
                diseased[static_cast<std::size_t>(v)] = true;
                // first diseased vessel carries the score-defining severity
                vessels[static_cast<std::size_t>(v)].max_severity =
                    d == 0 ? target : prng.uniform(0.05, std::max(0.06, target * 0.9));
            }
        }

        out.truth.patients[pid] = {cadrads, vessels};
        out.manifest.patients.push_back({pid, cadrads});

        for (int v = 0; v < data::kNumVessels; ++v) {
            const bool emit = cadrads == 0 || diseased[static_cast<std::size_t>(v)];
            if (!emit) continue;
            for (int view = 0; view < config.views_per_vessel; ++view) {
                Rng irng = base.sub("image_" + pid, static_cast<std::uint64_t>(v),
                                    static_cast<std::uint64_t>(view));
                std::vector<LesionInfo> lesions;
                GrayImage img = generate_vessel_image(vessels[static_cast<std::size_t>(v)].max_severity,
                                                      config.vessel_width, config.image_size, view, irng,
                                                      config.noise_level, &lesions);
                if (view == 0) out.truth.patients[pid].second[static_cast<std::size_t>(v)].lesions = lesions;

                data::VesselImage vi;
                vi.patient_id = pid;
                vi.vessel = static_cast<data::Vessel>(v);
                vi.view = view;
                vi.path = "images/" + data::image_key(vi) + ".png";
                write_gray((root / vi.path).string(), img);
                out.manifest.images.push_back(vi);
            }
        }
    }

    out.manifest.validate();
    data::save_manifest((root / "manifest.json").string(), out.manifest);

    json truth;
    for (const auto& [pid, entry] : out.truth.patients) {
        json vessels = json::array();
        for (int v = 0; v < 3; ++v) {
            const auto& vt = entry.second[static_cast<std::size_t>(v)];
            json lesions = json::array();
            for (const auto& li : vt.lesions) {
                lesions.push_back({{"row_begin", li.row_begin}, {"row_end", li.row_end}, {"severity", li.severity}});
            }
            vessels.push_back({{"vessel", data::vessel_name(static_cast<data::Vessel>(v))},
                               {"max_severity", vt.max_severity},
                               {"lesions", lesions}});
        }
        truth[pid] = {{"cadrads", entry.first}, {"vessels", vessels}};
    }
    std::ofstream tf(root / "ground_truth.json");
    if (!tf) throw data_error("synth", "IOFailure: cannot write ground_truth.json");
    tf << truth.dump(2) << "\n";
    return out;
}

}  // namespace cadrads::synth

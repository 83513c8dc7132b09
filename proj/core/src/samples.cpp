// SPDX-License-Identifier: Apache-2.0

#include "cadrads/samples.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "cadrads/error.hpp"
#include "cadrads/imaging.hpp"

namespace cadrads::data {

namespace fs = std::filesystem;
using nlohmann::json;

std::string image_key(const VesselImage& im) {
    return im.patient_id + "_" + vessel_name(im.vessel) + "_v" + std::to_string(im.view);
}

ImageProvider directory_provider(const std::string& dir) {
    return [dir](const VesselImage& im) {
        const fs::path p = fs::path(dir) / (image_key(im) + ".png");
        if (!fs::exists(p)) {
            throw data_error("samples", "MissingFile: " + p.string());
        }
        return read_gray(p.string());
    };
}

const GrayImage& ImputationTemplates::get(Vessel v, int view) const {
    auto it = by_key.find({static_cast<int>(v), view});
    if (it == by_key.end()) {
        throw data_error("samples", std::string("missing imputation template for ") + vessel_name(v) +
                                        " view " + std::to_string(view));
    }
    return it->second;
}

ImputationTemplates compute_imputation_templates(const Manifest& manifest,
                                                 const SplitAssignment& split,
                                                 const ImageProvider& provider) {
    bool any_healthy_train = false;
    std::set<std::string> healthy;
    for (const auto& p : manifest.patients) {
        if (p.cadrads == 0 && split.is_train(p.patient_id)) {
            healthy.insert(p.patient_id);
            any_healthy_train = true;
        }
    }
    if (!any_healthy_train) {
        throw data_error("templates", "NoHealthyTraining: no CAD-RADS 0 patient in the training split");
    }

    std::map<std::pair<int, int>, std::vector<double>> sums;
    std::map<std::pair<int, int>, int> counts;
    const std::size_t n = static_cast<std::size_t>(kCanonicalSize) * kCanonicalSize;
    for (const auto& im : manifest.images) {
        if (!healthy.count(im.patient_id)) continue;
        GrayImage resized = imaging::resize_bilinear(provider(im), kCanonicalSize, kCanonicalSize);
        auto key = std::make_pair(static_cast<int>(im.vessel), im.view);
        auto& acc = sums[key];
        if (acc.empty()) acc.assign(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) acc[i] += resized.pixels[i];
        counts[key]++;
    }

    ImputationTemplates out;
    for (int v = 0; v < kNumVessels; ++v) {
        for (int view = 0; view < kNumViews; ++view) {
            auto key = std::make_pair(v, view);
            auto it = sums.find(key);
            if (it == sums.end()) {
                throw data_error("templates", std::string("NoHealthyTraining: no healthy training image for ") +
                                                  vessel_name(static_cast<Vessel>(v)) + " view " +
                                                  std::to_string(view));
            }
            GrayImage tmpl(kCanonicalSize, kCanonicalSize);
            const double cnt = counts[key];
            for (std::size_t i = 0; i < n; ++i) {
                tmpl.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(it->second[i] / cnt), 0l, 255l));
            }
            out.by_key.emplace(key, std::move(tmpl));
        }
    }
    return out;
}

ImputationTemplates load_templates(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "index.json");
    if (!in) throw data_error("templates", "cannot open " + dir + "/index.json");
    json j;
    in >> j;
    ImputationTemplates t;
    for (const auto& e : j.at("templates")) {
        const Vessel v = vessel_from_name(e.at("vessel").get<std::string>());
        const int view = e.at("view").get<int>();
        const std::string file = e.at("file").get<std::string>();
        t.by_key[{static_cast<int>(v), view}] = read_gray((fs::path(dir) / file).string());
    }
    if (!t.complete()) throw data_error("templates", "template store incomplete in " + dir);
    return t;
}

void save_templates(const std::string& dir, const ImputationTemplates& t) {
    fs::create_directories(dir);
    json idx;
    idx["templates"] = json::array();
    for (const auto& [key, img] : t.by_key) {
        const auto v = static_cast<Vessel>(key.first);
        std::string file = std::string("template_") + vessel_name(v) + "_v" + std::to_string(key.second) + ".png";
        write_gray((fs::path(dir) / file).string(), img);
        idx["templates"].push_back({{"vessel", vessel_name(v)}, {"view", key.second}, {"file", file}});
    }
    std::ofstream out(fs::path(dir) / "index.json");
    out << idx.dump(2) << "\n";
}

namespace {

void fill_channel(StackedSample& s, int ch, const GrayImage& img) {
    if (img.height != s.side || img.width != s.side) {
        throw data_error("samples", "ShapeMismatch: channel image is not sample-sized");
    }
    const std::size_t n = static_cast<std::size_t>(s.side) * s.side;
    float* dst = s.data.data() + static_cast<std::size_t>(ch) * n;
    for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<float>(img.pixels[i]) / 255.0f;
}

}  // namespace

std::vector<StackedSample> assemble_samples(const Manifest& manifest,
                                            const ImputationTemplates& templates,
                                            const SplitAssignment& split, Side side,
                                            const ImageProvider& provider, int sample_size) {
    if (!templates.complete()) throw data_error("samples", "imputation templates incomplete");

    // (patient, view) -> available images, in manifest order
    std::map<std::string, std::array<const VesselImage*, kNumVessels * kNumViews>> have;
    for (const auto& im : manifest.images) {
        auto& slots = have[im.patient_id];
        slots[static_cast<std::size_t>(im.vessel) * kNumViews + im.view] = &im;
    }

    std::vector<StackedSample> out;
    for (const auto& p : manifest.patients) {
        const bool in_side = side == Side::Test ? split.is_test(p.patient_id) : split.is_train(p.patient_id);
        if (!in_side) continue;
        auto it = have.find(p.patient_id);
        if (it == have.end()) continue;
        const auto& slots = it->second;
        for (int view = 0; view < kNumViews; ++view) {
            bool any_real = false;
            for (int v = 0; v < kNumVessels; ++v) {
                if (slots[static_cast<std::size_t>(v) * kNumViews + view]) any_real = true;
            }
            if (!any_real) continue;

            StackedSample s;
            s.patient_id = p.patient_id;
            s.view = view;
            s.side = sample_size;
            s.data.assign(static_cast<std::size_t>(3) * sample_size * sample_size, 0.0f);
            s.label_binary = map_labels(p.cadrads, Task::Binary);
            s.label_multi = map_labels(p.cadrads, Task::Multi);
            for (int v = 0; v < kNumVessels; ++v) {
                const VesselImage* im = slots[static_cast<std::size_t>(v) * kNumViews + view];
                if (im) {
                    GrayImage g = imaging::resize_bilinear(provider(*im), sample_size, sample_size);
                    fill_channel(s, v, g);
                } else {
                    const GrayImage& tmpl = templates.get(static_cast<Vessel>(v), view);
                    fill_channel(s, v, imaging::resize_bilinear(tmpl, sample_size, sample_size));
                    s.imputed[v] = true;
                }
            }
            out.push_back(std::move(s));
        }
    }
    return out;
}

StackedSample augment(const StackedSample& sample, Rng& rng, double max_rot_deg) {
    // Draw order is fixed so the stream advances identically on every path.
    const bool hflip = rng.bernoulli(0.5);
    const bool vflip = rng.bernoulli(0.5);
    const double angle = rng.uniform(-max_rot_deg, max_rot_deg);

    const int S = sample.side;
    StackedSample out = sample;

    if (hflip) {
        for (int ch = 0; ch < 3; ++ch) {
            for (int r = 0; r < S; ++r) {
                for (int c = 0; c < S / 2; ++c) {
                    std::swap(out.at(ch, r, c), out.at(ch, r, S - 1 - c));
                }
            }
        }
    }
    if (vflip) {
        for (int ch = 0; ch < 3; ++ch) {
            for (int r = 0; r < S / 2; ++r) {
                for (int c = 0; c < S; ++c) {
                    std::swap(out.at(ch, r, c), out.at(ch, S - 1 - r, c));
                }
            }
        }
    }
    if (angle != 0.0) {
        const double rad = angle * M_PI / 180.0;
        const double cs = std::cos(rad), sn = std::sin(rad);
        const double cy = (S - 1) / 2.0, cx = (S - 1) / 2.0;
        StackedSample rotated = out;
        for (int ch = 0; ch < 3; ++ch) {
            for (int r = 0; r < S; ++r) {
                for (int c = 0; c < S; ++c) {
                    // inverse map: sample the source at the back-rotated position
                    const double dy = r - cy, dx = c - cx;
                    double sy = cy + (cs * dy + sn * dx);
                    double sx = cx + (-sn * dy + cs * dx);
                    // tiny numerical overshoot at the frame must not zero a
                    // border pixel (identity rotations stay identities)
                    constexpr double edge_eps = 1e-6;
                    if (sy > -edge_eps && sy < 0.0) sy = 0.0;
                    if (sx > -edge_eps && sx < 0.0) sx = 0.0;
                    if (sy > S - 1 && sy < S - 1 + edge_eps) sy = S - 1;
                    if (sx > S - 1 && sx < S - 1 + edge_eps) sx = S - 1;
                    float val = 0.0f;
                    if (sy >= 0.0 && sy <= S - 1 && sx >= 0.0 && sx <= S - 1) {
                        const int y0 = static_cast<int>(sy);
                        const int x0 = static_cast<int>(sx);
                        const int y1 = std::min(y0 + 1, S - 1);
                        const int x1 = std::min(x0 + 1, S - 1);
                        const double fy = sy - y0, fx = sx - x0;
                        const double top = out.at(ch, y0, x0) + fx * (out.at(ch, y0, x1) - out.at(ch, y0, x0));
                        const double bot = out.at(ch, y1, x0) + fx * (out.at(ch, y1, x1) - out.at(ch, y1, x0));
                        val = static_cast<float>(top + fy * (bot - top));
                    }
                    rotated.at(ch, r, c) = val;
                }
            }
        }
        out = std::move(rotated);
    }
    return out;
}

}  // namespace cadrads::data

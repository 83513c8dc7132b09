// SPDX-License-Identifier: Apache-2.0

#include "cadrads/split.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "cadrads/error.hpp"
#include "cadrads/rng.hpp"

namespace cadrads::data {

using nlohmann::json;

SplitAssignment stratified_patient_split(const Manifest& manifest, double test_fraction,
                                         int folds, std::uint64_t seed) {
    if (test_fraction < 0.0 || test_fraction >= 1.0) {
        throw usage_error("split", "test fraction must be in [0,1)");
    }
    if (folds < 2) throw usage_error("split", "need at least 2 folds");
    if (manifest.patients.empty()) throw data_error("split", "manifest has no patients");

    std::array<std::vector<std::string>, 6> strata;
    for (const auto& p : manifest.patients) strata[p.cadrads].push_back(p.patient_id);

    SplitAssignment out;
    out.seed = seed;
    out.folds = folds;

    Rng rng(Rng::sub_seed(seed, "split"));
    int train_total = 0;
    for (int s = 0; s < 6; ++s) {
        auto& ids = strata[s];
        if (ids.empty()) continue;
        std::sort(ids.begin(), ids.end());  // manifest order must not matter
        rng.shuffle(ids);
        const int n_test = static_cast<int>(std::lround(test_fraction * static_cast<double>(ids.size())));
        if (n_test == static_cast<int>(ids.size())) {
            throw data_error("split", "InsufficientStratum: CAD-RADS " + std::to_string(s) +
                                          " has no training patients after the test split");
        }
        for (int i = 0; i < n_test; ++i) out.test.insert(ids[i]);
        // Round-robin deal keeps folds balanced within one patient per
        // stratum; the staggered start spreads the remainders.
        int fold = s % folds;
        for (std::size_t i = n_test; i < ids.size(); ++i) {
            out.fold_of[ids[i]] = fold;
            fold = (fold + 1) % folds;
            ++train_total;
        }
    }
    if (train_total < folds) {
        throw data_error("split", "InsufficientStratum: only " + std::to_string(train_total) +
                                      " training patients for " + std::to_string(folds) + " folds");
    }
    return out;
}

SplitAssignment load_split(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("split", "cannot open " + path);
    json j;
    try {
        in >> j;
        SplitAssignment s;
        s.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& id : j.at("test")) s.test.insert(id.get<std::string>());
        int max_fold = 0;
        for (auto it = j.at("folds").begin(); it != j.at("folds").end(); ++it) {
            const int f = it.value().get<int>();
            s.fold_of[it.key()] = f;
            max_fold = std::max(max_fold, f);
        }
        s.folds = max_fold + 1;
        return s;
    } catch (const json::exception& e) {
        throw data_error("split", "split schema error in " + path + ": " + e.what());
    }
}

void save_split(const std::string& path, const SplitAssignment& s) {
    json j;
    j["seed"] = s.seed;
    j["test"] = json::array();
    for (const auto& id : s.test) j["test"].push_back(id);
    j["folds"] = json::object();
    for (const auto& [id, f] : s.fold_of) j["folds"][id] = f;
    std::ofstream out(path);
    if (!out) throw data_error("split", "cannot write " + path);
    out << j.dump(2) << "\n";
}

}  // namespace cadrads::data

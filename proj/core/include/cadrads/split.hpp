// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>

#include "cadrads/manifest.hpp"

namespace cadrads::data {

struct SplitAssignment {
    std::uint64_t seed = 0;
    int folds = 10;
    std::set<std::string> test;          // patient ids
    std::map<std::string, int> fold_of;  // train patient id -> fold in [0,folds)

    bool is_test(const std::string& id) const { return test.count(id) > 0; }
    bool is_train(const std::string& id) const { return fold_of.count(id) > 0; }
};

// Patient-wise 80/20 split stratified by CAD-RADS, plus K balanced folds
// within the training side. Per-stratum test counts are round(f * n);
// folds are dealt round-robin per stratum after a seeded shuffle.
SplitAssignment stratified_patient_split(const Manifest& manifest, double test_fraction,
                                         int folds, std::uint64_t seed);

SplitAssignment load_split(const std::string& path);
void save_split(const std::string& path, const SplitAssignment& s);

}  // namespace cadrads::data

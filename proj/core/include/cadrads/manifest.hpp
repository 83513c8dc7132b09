// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

namespace cadrads::data {

enum class Vessel : int { LAD = 0, LCX = 1, RCA = 2 };

constexpr int kNumVessels = 3;
constexpr int kNumViews = 8;

const char* vessel_name(Vessel v);
Vessel vessel_from_name(const std::string& name);

struct PatientRecord {
    std::string patient_id;
    int cadrads = 0;  // 0..5
};

struct VesselImage {
    std::string patient_id;
    Vessel vessel = Vessel::LAD;
    int view = 0;  // 0..7, 45-degree offsets
    std::string path;
};

struct Manifest {
    std::vector<PatientRecord> patients;
    std::vector<VesselImage> images;

    const PatientRecord* find_patient(const std::string& id) const;
    // Throws on duplicate patients, unknown patient references, bad
    // CAD-RADS values, out-of-range views, or duplicate (patient,vessel,view).
    void validate() const;
};

enum class Task { Binary, Multi };

Task task_from_name(const std::string& name);
const char* task_name(Task t);
int num_classes(Task t);

// Binary: {0,1,2}->0, {3,4,5}->1. Multi: {0}->0, {1,2,3}->1, {4,5}->2.
int map_labels(int cadrads, Task task);

Manifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const Manifest& m);

}  // namespace cadrads::data

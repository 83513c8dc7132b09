// SPDX-License-Identifier: Apache-2.0

#include "cadrads/manifest.hpp"

#include <fstream>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "cadrads/error.hpp"

namespace cadrads::data {

using nlohmann::json;

const char* vessel_name(Vessel v) {
    switch (v) {
        case Vessel::LAD: return "LAD";
        case Vessel::LCX: return "LCX";
        case Vessel::RCA: return "RCA";
    }
    return "?";
}

Vessel vessel_from_name(const std::string& name) {
    if (name == "LAD") return Vessel::LAD;
    if (name == "LCX") return Vessel::LCX;
    if (name == "RCA") return Vessel::RCA;
    throw data_error("manifest", "unknown vessel name: " + name);
}

Task task_from_name(const std::string& name) {
    if (name == "binary") return Task::Binary;
    if (name == "multi") return Task::Multi;
    throw usage_error("config", "unknown task: " + name + " (expected binary|multi)");
}

const char* task_name(Task t) { return t == Task::Binary ? "binary" : "multi"; }

int num_classes(Task t) { return t == Task::Binary ? 2 : 3; }

int map_labels(int cadrads, Task task) {
    if (cadrads < 0 || cadrads > 5) {
        throw data_error("labels", "OutOfRange: CAD-RADS must be in [0,5], got " + std::to_string(cadrads));
    }
    if (task == Task::Binary) return cadrads >= 3 ? 1 : 0;
    if (cadrads == 0) return 0;
    return cadrads <= 3 ? 1 : 2;
}

const PatientRecord* Manifest::find_patient(const std::string& id) const {
    for (const auto& p : patients) {
        if (p.patient_id == id) return &p;
    }
    return nullptr;
}

void Manifest::validate() const {
    std::unordered_map<std::string, int> by_id;
    for (const auto& p : patients) {
        if (p.cadrads < 0 || p.cadrads > 5) {
            throw data_error("manifest", "patient " + p.patient_id + " has CAD-RADS out of [0,5]");
        }
        if (!by_id.emplace(p.patient_id, p.cadrads).second) {
            throw data_error("manifest", "duplicate patient id: " + p.patient_id);
        }
    }
    std::set<std::tuple<std::string, int, int>> seen;
    for (const auto& im : images) {
        if (!by_id.count(im.patient_id)) {
            throw data_error("manifest", "image references unknown patient: " + im.patient_id);
        }
        if (im.view < 0 || im.view >= kNumViews) {
            throw data_error("manifest", "view index out of [0,8) for patient " + im.patient_id);
        }
        if (!seen.emplace(im.patient_id, static_cast<int>(im.vessel), im.view).second) {
            throw data_error("manifest", "duplicate (patient,vessel,view): " + im.patient_id + "/" +
                                             vessel_name(im.vessel) + "/v" + std::to_string(im.view));
        }
    }
}

Manifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("manifest", "cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw data_error("manifest", "malformed JSON in " + path + ": " + e.what());
    }
    Manifest m;
    try {
        for (const auto& jp : j.at("patients")) {
            m.patients.push_back({jp.at("id").get<std::string>(), jp.at("cadrads").get<int>()});
        }
        for (const auto& ji : j.at("images")) {
            VesselImage im;
            im.patient_id = ji.at("id").get<std::string>();
            im.vessel = vessel_from_name(ji.at("vessel").get<std::string>());
            im.view = ji.at("view").get<int>();
            im.path = ji.at("path").get<std::string>();
            m.images.push_back(std::move(im));
        }
    } catch (const json::exception& e) {
        throw data_error("manifest", "manifest schema error in " + path + ": " + e.what());
    }
    m.validate();
    return m;
}

void save_manifest(const std::string& path, const Manifest& m) {
    json j;
    j["patients"] = json::array();
    for (const auto& p : m.patients) {
        j["patients"].push_back({{"id", p.patient_id}, {"cadrads", p.cadrads}});
    }
    j["images"] = json::array();
    for (const auto& im : m.images) {
        j["images"].push_back({{"id", im.patient_id},
                               {"vessel", vessel_name(im.vessel)},
                               {"view", im.view},
                               {"path", im.path}});
    }
    std::ofstream out(path);
    if (!out) throw data_error("manifest", "cannot write " + path);
    out << j.dump(2) << "\n";
}

}  // namespace cadrads::data

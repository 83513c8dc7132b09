// SPDX-License-Identifier: Apache-2.0

#include "cadrads/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "cadrads/error.hpp"

namespace cadrads::nn {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'C', 'A', 'D', 'C'};
constexpr std::uint32_t kVersion = 1;

json config_to_json(const ModelConfig& c) {
    json j;
    j["arch"] = c.arch;
    j["in_channels"] = c.in_channels;
    j["num_classes"] = c.num_classes;
    j["input_size"] = c.input_size;
    j["stem_channels"] = c.stem_channels;
    j["stage_blocks"] = c.stage_blocks;
    j["stage_channels"] = c.stage_channels;
    j["window_size"] = c.window_size;
    j["grid_size"] = c.grid_size;
    j["mbconv_expansion"] = c.mbconv_expansion;
    j["se_reduction"] = c.se_reduction;
    j["head_dim"] = c.head_dim;
    j["mlp_ratio"] = c.mlp_ratio;
    j["dropout_rate"] = c.dropout_rate;
    return j;
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.arch = j.at("arch").get<std::string>();
    c.in_channels = j.at("in_channels").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    c.input_size = j.at("input_size").get<int>();
    c.stem_channels = j.at("stem_channels").get<int>();
    c.stage_blocks = j.at("stage_blocks").get<std::vector<int>>();
    c.stage_channels = j.at("stage_channels").get<std::vector<int>>();
    c.window_size = j.at("window_size").get<int>();
    c.grid_size = j.at("grid_size").get<int>();
    c.mbconv_expansion = j.at("mbconv_expansion").get<int>();
    c.se_reduction = j.at("se_reduction").get<double>();
    c.head_dim = j.at("head_dim").get<int>();
    c.mlp_ratio = j.at("mlp_ratio").get<int>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    return c;
}

void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw data_error("checkpoint", "truncated checkpoint: " + path);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const std::string& path, Network<float>& net, data::Task task) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("checkpoint", "cannot write " + path);
    out.write(kMagic, 4);
    put_u32(out, kVersion);

    json header = config_to_json(net.config());
    header["task"] = data::task_name(task);
    const std::string hs = header.dump();
    put_u32(out, static_cast<std::uint32_t>(hs.size()));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));

    const auto& params = net.params();
    put_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        put_u32(out, static_cast<std::uint32_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        put_u32(out, static_cast<std::uint32_t>(p.value->shape.size()));
        for (int d : p.value->shape) put_u32(out, static_cast<std::uint32_t>(d));
        out.write(reinterpret_cast<const char*>(p.value->v.data()),
                  static_cast<std::streamsize>(p.value->v.size() * sizeof(float)));
    }
    if (!out) throw data_error("checkpoint", "write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("checkpoint", "cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw data_error("checkpoint", "not a checkpoint file: " + path);
    }
    const std::uint32_t version = get_u32(in, path);
    if (version != kVersion) {
        throw data_error("checkpoint", "unsupported checkpoint version " + std::to_string(version));
    }
    const std::uint32_t hlen = get_u32(in, path);
    std::string hs(hlen, '\0');
    in.read(hs.data(), hlen);
    if (!in) throw data_error("checkpoint", "truncated checkpoint: " + path);

    LoadedCheckpoint out;
    try {
        json header = json::parse(hs);
        out.config = config_from_json(header);
        out.task = data::task_from_name(header.at("task").get<std::string>());
    } catch (const json::exception& e) {
        throw data_error("checkpoint", std::string("bad checkpoint header: ") + e.what());
    }
    out.network = build_network<float>(out.config);

    auto& params = out.network->params();
    const std::uint32_t count = get_u32(in, path);
    if (count != params.size()) {
        throw data_error("checkpoint", "checkpoint parameter count mismatch in " + path);
    }
    for (auto& p : params) {
        const std::uint32_t nlen = get_u32(in, path);
        std::string name(nlen, '\0');
        in.read(name.data(), nlen);
        if (name != p.name) {
            throw data_error("checkpoint", "parameter order mismatch: expected " + p.name + ", got " + name);
        }
        const std::uint32_t nd = get_u32(in, path);
        std::vector<int> dims(nd);
        for (auto& d : dims) d = static_cast<int>(get_u32(in, path));
        if (dims != p.value->shape) {
            throw data_error("checkpoint", "shape mismatch for parameter " + name);
        }
        in.read(reinterpret_cast<char*>(p.value->v.data()),
                static_cast<std::streamsize>(p.value->v.size() * sizeof(float)));
        if (!in) throw data_error("checkpoint", "truncated checkpoint: " + path);
    }
    return out;
}

}  // namespace cadrads::nn

// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <string>

#include "cadrads/manifest.hpp"
#include "cadrads/model.hpp"

namespace cadrads::nn {

// Binary container, little-endian:
//   magic "CADC" | u32 version | u32 json_len | config+task JSON |
//   u32 blob_count | per blob: u32 name_len, name, u32 ndims, u32 dims[],
//   float32 values (row-major).
// Saving a just-loaded checkpoint reproduces the file byte for byte.

struct LoadedCheckpoint {
    ModelConfig config;
    data::Task task = data::Task::Binary;
    std::unique_ptr<Network<float>> network;
};

void save_checkpoint(const std::string& path, Network<float>& net, data::Task task);
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace cadrads::nn

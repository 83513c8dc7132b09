// SPDX-License-Identifier: Apache-2.0

#include "cadrads/model.hpp"

#include "cadrads/error.hpp"

namespace cadrads::nn {

void ModelConfig::validate() const {
    if (arch != "maxvit" && arch != "cnn") throw usage_error("model", "unknown arch: " + arch);
    if (num_classes < 2) throw usage_error("model", "num_classes must be >= 2");
    if (in_channels < 1) throw usage_error("model", "in_channels must be >= 1");
    if (input_size < 2) throw usage_error("model", "input_size must be >= 2");
    if (arch == "cnn") return;

    if (stage_blocks.size() != stage_channels.size() || stage_blocks.empty()) {
        throw usage_error("model", "stage_blocks and stage_channels must align and be non-empty");
    }
    if (input_size % 2 != 0) {
        throw usage_error("model", "DivisibilityError: input_size must be even for the stem");
    }
    int side = input_size / 2;  // after stem
    for (std::size_t s = 0; s < stage_blocks.size(); ++s) {
        if (stage_blocks[s] < 1) throw usage_error("model", "every stage needs at least one block");
        if (side % 2 != 0) {
            throw usage_error("model", "DivisibilityError: stage " + std::to_string(s) +
                                           " cannot halve an odd feature side " + std::to_string(side));
        }
        side /= 2;
        if (side % window_size != 0) {
            throw usage_error("model", "DivisibilityError: stage " + std::to_string(s) + " side " +
                                           std::to_string(side) + " not divisible by window " +
                                           std::to_string(window_size));
        }
        if (side % grid_size != 0) {
            throw usage_error("model", "DivisibilityError: stage " + std::to_string(s) + " side " +
                                           std::to_string(side) + " not divisible by grid " +
                                           std::to_string(grid_size));
        }
        if (stage_channels[s] % head_dim != 0) {
            throw usage_error("model", "DivisibilityError: stage " + std::to_string(s) + " channels " +
                                           std::to_string(stage_channels[s]) + " not divisible by head_dim " +
                                           std::to_string(head_dim));
        }
    }
}

ModelConfig tiny_config(int num_classes) {
    ModelConfig c;
    c.arch = "maxvit";
    c.num_classes = num_classes;
    c.input_size = 224;
    c.stem_channels = 64;
    c.stage_blocks = {2, 2, 5, 2};
    c.stage_channels = {64, 128, 256, 512};
    c.head_dim = 32;
    return c;
}

ModelConfig nano_config(int num_classes) {
    ModelConfig c;
    c.arch = "maxvit";
    c.num_classes = num_classes;
    c.input_size = 56;
    c.stem_channels = 16;
    c.stage_blocks = {1, 1};
    c.stage_channels = {16, 32};
    c.head_dim = 8;
    return c;
}

ModelConfig baseline_cnn_config(int num_classes, int input_size) {
    ModelConfig c;
    c.arch = "cnn";
    c.num_classes = num_classes;
    c.input_size = input_size;
    return c;
}

}  // namespace cadrads::nn

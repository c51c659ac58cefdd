#pragma once

#include <string>

#include "trajvae/cohort.hpp"
#include "trajvae/model.hpp"

namespace trajvae {

// A self-contained trained model: everything needed to run inference on a
// compatible cohort.
struct Checkpoint {
    FeatureSchema schema;
    ModelConfig config;
    ScalerStats scaler;
    ModelParameters params;
    std::string meta;  // config hash + seed of the producing run
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace trajvae

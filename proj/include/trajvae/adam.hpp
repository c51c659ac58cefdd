#pragma once

#include <cstdint>
#include <vector>

#include "trajvae/tensor.hpp"

namespace trajvae {

// Bias-corrected Adam over a flat list of parameter tensors.
struct AdamState {
    std::int64_t step = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void init(const std::vector<const Tensor*>& params) {
        step = 0;
        m.clear();
        v.clear();
        for (const Tensor* p : params) {
            m.push_back(Tensor::zeros(p->shape));
            v.push_back(Tensor::zeros(p->shape));
        }
    }
};

// Applies one Adam update in place. Rejects non-finite gradients.
void adam_step(AdamState& state, const std::vector<Tensor*>& params,
               const std::vector<const Tensor*>& grads);

}  // namespace trajvae

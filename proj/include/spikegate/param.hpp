#pragma once

#include <string>
#include <vector>

#include "spikegate/tensor.hpp"

namespace spikegate {

/// Named view of one parameter tensor and its gradient. `trainable == false`
/// marks persistent state (BatchNorm running statistics) that checkpoints
/// must carry but optimizers must skip.
struct ParamRef {
    std::string name;
    Tensor* value = nullptr;
    Tensor* grad = nullptr;  // null for non-trainable state
    bool trainable = true;
};

inline void zero_grads(std::vector<ParamRef>& params) {
    for (ParamRef& p : params)
        if (p.grad) p.grad->fill(0.0);
}

inline std::size_t count_scalars(const std::vector<ParamRef>& params, bool trainable_only = true) {
    std::size_t n = 0;
    for (const ParamRef& p : params)
        if (!trainable_only || p.trainable) n += p.value->size();
    return n;
}

}  // namespace spikegate

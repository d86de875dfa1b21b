#pragma once

#include <string>
#include <vector>

#include "mga/tensor.hpp"

namespace mga {

// A named trainable tensor plus its SGD momentum buffer.
struct Parameter {
    std::string name;
    Tensor tensor;
    std::vector<double> momentum;
};

struct SgdConfig {
    double lr = 1e-2;
    double momentum = 0.9;
    double weight_decay = 5e-4;
};

// buf <- momentum*buf + grad + weight_decay*value; value <- value - lr*buf.
// Parameters whose gradient buffer was never allocated are skipped, momentum
// included. Gradients are cleared afterwards.
void sgd_step(const std::vector<Parameter*>& params, const SgdConfig& cfg);

}  // namespace mga

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mga/gradcheck.hpp"

namespace mga {

struct OpCheckOutcome {
    std::string op;
    double max_rel_err = 0.0;
    std::size_t checked = 0;
};

// Finite-difference sweep over the whole operator set: `trials` random input
// draws per op (uniform in [-2,2], kinks and domain edges excluded where the
// op is not differentiable), every element checked. Deterministic in `seed`.
std::vector<OpCheckOutcome> run_op_gradchecks(int trials, std::uint64_t seed,
                                              double step = 1e-5);

// Same sweep over the attention/fusion blocks, differentiating through inputs
// and block parameters alike.
std::vector<OpCheckOutcome> run_module_gradchecks(int trials, std::uint64_t seed,
                                                  double step = 1e-5);

}  // namespace mga

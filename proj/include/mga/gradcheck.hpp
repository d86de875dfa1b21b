#pragma once

#include <functional>
#include <vector>

#include "mga/rng.hpp"
#include "mga/tensor.hpp"

namespace mga {

// |a - b| / max(|a|, |b|, 1)
double rel_err(double a, double b);

// Central difference of a scalar functional with respect to one value slot.
// The slot is restored afterwards.
double finite_diff(const std::function<double()>& eval, double& slot, double step = 1e-5);

struct GradReport {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
};

// Compares analytic gradients against central differences. `forward` must
// rebuild the graph from the current values of `inputs` on every call and
// return a scalar. With max_per_tensor < 0 every element is checked; otherwise
// that many randomly drawn elements per tensor (rng required).
GradReport check_gradients(const std::function<Tensor()>& forward, std::vector<Tensor> inputs,
                           double step = 1e-5, int max_per_tensor = -1, Rng* rng = nullptr);

}  // namespace mga

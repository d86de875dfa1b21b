#include "mga/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mga/error.hpp"

namespace mga {

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0});
}

double finite_diff(const std::function<double()>& eval, double& slot, double step) {
    const double saved = slot;
    slot = saved + step;
    const double hi = eval();
    slot = saved - step;
    const double lo = eval();
    slot = saved;
    return (hi - lo) / (2.0 * step);
}

GradReport check_gradients(const std::function<Tensor()>& forward, std::vector<Tensor> inputs,
                           double step, int max_per_tensor, Rng* rng) {
    if (max_per_tensor >= 0 && rng == nullptr)
        throw ValidationError("sampled gradient check needs a generator");

    for (auto& in : inputs) {
        in.set_requires_grad(true);
        in.zero_grad();
    }
    Tensor loss = forward();
    loss.backward();

    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (auto& in : inputs) {
        auto g = in.grad();
        analytic.emplace_back(g.begin(), g.end());
    }

    auto eval = [&]() {
        NoGradGuard off;
        return forward().value();
    };

    GradReport report;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        auto values = inputs[t].data();
        const std::size_t n = values.size();
        std::vector<std::size_t> picks;
        if (max_per_tensor < 0 || static_cast<std::size_t>(max_per_tensor) >= n) {
            picks.resize(n);
            for (std::size_t i = 0; i < n; ++i) picks[i] = i;
        } else {
            for (int i = 0; i < max_per_tensor; ++i)
                picks.push_back(static_cast<std::size_t>(
                    rng->uniform_int(0, static_cast<int>(n) - 1)));
        }
        for (std::size_t idx : picks) {
            const double fd = finite_diff(eval, values[idx], step);
            report.max_rel_err = std::max(report.max_rel_err, rel_err(analytic[t][idx], fd));
            ++report.checked;
        }
    }
    return report;
}

}  // namespace mga

#include "mga/optim.hpp"

namespace mga {

void sgd_step(const std::vector<Parameter*>& params, const SgdConfig& cfg) {
    for (Parameter* p : params) {
        if (!p->tensor.has_grad()) continue;
        auto value = p->tensor.data();
        auto grad = p->tensor.grad();
        if (p->momentum.size() != value.size()) p->momentum.assign(value.size(), 0.0);
        for (std::size_t i = 0; i < value.size(); ++i) {
            p->momentum[i] =
                cfg.momentum * p->momentum[i] + grad[i] + cfg.weight_decay * value[i];
            value[i] -= cfg.lr * p->momentum[i];
        }
        p->tensor.zero_grad();
    }
}

}  // namespace mga

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace mga {

struct TensorImpl;

// Dense double-precision tensor in batch/channel/height/width layout.
// Every differentiable op records a reverse-mode node; calling backward() on a
// scalar result fills the grad slots of all reachable tensors that require
// gradients. A graph is single-use: backward consumes it.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor from_data(std::vector<int> shape, std::vector<double> values,
                            bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int>& shape() const;
    int ndim() const;
    int dim(int axis) const;
    std::int64_t numel() const;

    std::span<const double> data() const;
    std::span<double> data();
    double value() const;  // single-element tensors only
    double at4(int n, int c, int h, int w) const;

    bool requires_grad() const;
    void set_requires_grad(bool enabled);
    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> grad();
    void zero_grad();

    // Reverse pass from this scalar. Throws DimensionError if not scalar and
    // StateError if the graph was already consumed.
    void backward() const;

    // Deep copy of the values, detached from any graph.
    Tensor detached() const;
    // Copy with the same shape and a new buffer layout.
    Tensor reshaped(std::vector<int> new_shape) const;

    // Graph introspection for tests: the recorded inputs of this node.
    std::vector<Tensor> parents() const;

    std::shared_ptr<TensorImpl> impl() const { return impl_; }
    bool same_node(const Tensor& other) const { return impl_ == other.impl_; }

    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<TensorImpl> impl_;
};

// Disables graph construction while alive (inference / data preparation).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

// ---- operator set ------------------------------------------------------

// input [N,Cin,H,W] * weight [Cout,Cin,kh,kw] (+ optional bias [Cout]).
Tensor conv2d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias,
              int stride = 1, int padding = 0, int dilation = 1);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softmax(const Tensor& x, int axis);

Tensor global_avg_pool(const Tensor& x);          // [N,C,H,W] -> [N,C,1,1]
Tensor avg_pool(const Tensor& x, int factor);     // non-overlapping factor x factor mean

// Elementwise with restricted broadcast on b: same shape, [N,1,H,W] or [H,W]
// (across channels), or [N,C,1,1] (across spatial positions).
Tensor elem_mul(const Tensor& a, const Tensor& b);
Tensor elem_add(const Tensor& a, const Tensor& b);

Tensor concat(const std::vector<Tensor>& xs, int axis = 1);
Tensor bilinear_upsample(const Tensor& x, int factor);  // align-corners-false
Tensor broadcast_hw(const Tensor& x, int h, int w);     // [N,C,1,1] -> [N,C,h,w]

// Normalizes each channel over N*H*W to zero mean / unit variance, then applies
// per-channel affine scale/shift. channel_norm_frozen uses the supplied
// statistics instead of batch statistics.
Tensor channel_norm(const Tensor& x, const Tensor& scale, const Tensor& shift,
                    double eps = 1e-5);
Tensor channel_norm_frozen(const Tensor& x, const Tensor& scale, const Tensor& shift,
                           std::span<const double> mean, std::span<const double> var,
                           double eps = 1e-5);

// Per-channel batch statistics (population variance), used to maintain the
// frozen-mode running estimates.
void channel_stats(const Tensor& x, std::vector<double>& mean, std::vector<double>& var);

// Mean over all elements of -[t*log p + (1-t)*log(1-p)], p clamped to
// [1e-7, 1-1e-7]. Rejects non-finite predictions and targets outside [0,1].
Tensor bce_loss(const Tensor& pred, const Tensor& target);

Tensor sum(const Tensor& x);              // -> scalar tensor
Tensor scale(const Tensor& x, double factor);

}  // namespace mga

#include "mga/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "mga/error.hpp"

namespace mga {

struct TensorImpl {
    std::vector<int> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;

    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(TensorImpl&)> backward_fn;
    bool consumed = false;

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

namespace {

thread_local bool g_grad_enabled = true;

std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

std::shared_ptr<TensorImpl> make_impl(std::vector<int> shape) {
    for (int d : shape) {
        if (d <= 0) throw DimensionError("non-positive extent in shape " + shape_str(shape));
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->data.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0);
    impl->shape = std::move(shape);
    return impl;
}

// Registers the backward closure if grads are enabled and any input needs one.
void attach(const std::shared_ptr<TensorImpl>& out,
            std::vector<std::shared_ptr<TensorImpl>> inputs,
            std::function<void(TensorImpl&)> fn) {
    if (!g_grad_enabled) return;
    bool any = false;
    for (const auto& in : inputs)
        if (in && in->requires_grad) any = true;
    if (!any) return;
    out->requires_grad = true;
    for (auto& in : inputs)
        if (in && in->requires_grad) out->parents.push_back(in);
    out->backward_fn = std::move(fn);
}

void require_defined(const Tensor& t, const char* what) {
    if (!t.defined()) throw StateError(std::string("undefined tensor passed as ") + what);
}

void require_4d(const Tensor& t, const char* what) {
    require_defined(t, what);
    if (t.ndim() != 4)
        throw DimensionError(std::string(what) + " must be 4-D, got " + shape_str(t.shape()));
}

// ---- small dense matrix kernels (double precision, no external BLAS) ----

// C[m x n] += A[m x k] * B[k x n]
void gemm_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        double* crow = c + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        double* crow = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + static_cast<std::size_t>(j) * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// C[m x n] += A[k x m]^T * B[k x n]
void gemm_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int p = 0; p < k; ++p) {
        const double* arow = a + static_cast<std::size_t>(p) * m;
        const double* brow = b + static_cast<std::size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const double av = arow[i];
            double* crow = c + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

struct ConvGeom {
    int cin, h, w, cout, kh, kw;
    int stride, pad, dil;
    int oh, ow;
    bool unit_kernel;  // 1x1/stride 1/pad 0: column matrix equals the input
    int k() const { return cin * kh * kw; }
    int opix() const { return oh * ow; }
};

// Column matrix layout: col[(ci*kh + r)*kw + s][oh*ow + ...] row-major.
void im2col(const double* x, const ConvGeom& g, double* col) {
    for (int ci = 0; ci < g.cin; ++ci) {
        const double* xc = x + static_cast<std::size_t>(ci) * g.h * g.w;
        for (int r = 0; r < g.kh; ++r) {
            for (int s = 0; s < g.kw; ++s) {
                double* dst = col + static_cast<std::size_t>((ci * g.kh + r) * g.kw + s) * g.opix();
                for (int oh = 0; oh < g.oh; ++oh) {
                    const int ih = oh * g.stride - g.pad + r * g.dil;
                    if (ih < 0 || ih >= g.h) {
                        std::fill(dst, dst + g.ow, 0.0);
                        dst += g.ow;
                        continue;
                    }
                    const double* xrow = xc + static_cast<std::size_t>(ih) * g.w;
                    for (int ow = 0; ow < g.ow; ++ow) {
                        const int iw = ow * g.stride - g.pad + s * g.dil;
                        dst[ow] = (iw >= 0 && iw < g.w) ? xrow[iw] : 0.0;
                    }
                    dst += g.ow;
                }
            }
        }
    }
}

void col2im_acc(const double* col, const ConvGeom& g, double* dx) {
    for (int ci = 0; ci < g.cin; ++ci) {
        double* xc = dx + static_cast<std::size_t>(ci) * g.h * g.w;
        for (int r = 0; r < g.kh; ++r) {
            for (int s = 0; s < g.kw; ++s) {
                const double* src =
                    col + static_cast<std::size_t>((ci * g.kh + r) * g.kw + s) * g.opix();
                for (int oh = 0; oh < g.oh; ++oh) {
                    const int ih = oh * g.stride - g.pad + r * g.dil;
                    if (ih < 0 || ih >= g.h) {
                        src += g.ow;
                        continue;
                    }
                    double* xrow = xc + static_cast<std::size_t>(ih) * g.w;
                    for (int ow = 0; ow < g.ow; ++ow) {
                        const int iw = ow * g.stride - g.pad + s * g.dil;
                        if (iw >= 0 && iw < g.w) xrow[iw] += src[ow];
                    }
                    src += g.ow;
                }
            }
        }
    }
}

constexpr double kBceEps = 1e-7;

enum class Broadcast { Same, ChannelMap, ChannelMap2d, SpatialVec };

Broadcast classify_broadcast(const std::vector<int>& a, const std::vector<int>& b) {
    if (a == b) return Broadcast::Same;
    if (a.size() == 4 && b.size() == 4 && b[0] == a[0] && b[1] == 1 && b[2] == a[2] &&
        b[3] == a[3])
        return Broadcast::ChannelMap;
    if (a.size() == 4 && b.size() == 2 && b[0] == a[2] && b[1] == a[3])
        return Broadcast::ChannelMap2d;
    if (a.size() == 4 && b.size() == 4 && b[0] == a[0] && b[1] == a[1] && b[2] == 1 && b[3] == 1)
        return Broadcast::SpatialVec;
    throw DimensionError("incompatible elementwise shapes " + shape_str(a) + " vs " +
                         shape_str(b));
}

// Index of the b element paired with a's flat index i.
struct BroadcastIndexer {
    Broadcast kind;
    int c, h, w;
    std::size_t operator()(std::size_t i) const {
        switch (kind) {
            case Broadcast::Same:
                return i;
            case Broadcast::ChannelMap: {
                const std::size_t hw = static_cast<std::size_t>(h) * w;
                const std::size_t n = i / (hw * c);
                return n * hw + i % hw;
            }
            case Broadcast::ChannelMap2d:
                return i % (static_cast<std::size_t>(h) * w);
            case Broadcast::SpatialVec:
                return i / (static_cast<std::size_t>(h) * w);
        }
        return i;
    }
};

}  // namespace

// ---- Tensor basics -------------------------------------------------------

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    auto impl = make_impl(std::move(shape));
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    auto impl = make_impl(std::move(shape));
    std::fill(impl->data.begin(), impl->data.end(), value);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
    auto impl = make_impl(std::move(shape));
    if (static_cast<std::int64_t>(values.size()) != impl->numel())
        throw DimensionError("value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(impl->shape));
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

const std::vector<int>& Tensor::shape() const { return impl_->shape; }
int Tensor::ndim() const { return static_cast<int>(impl_->shape.size()); }
int Tensor::dim(int axis) const { return impl_->shape.at(static_cast<std::size_t>(axis)); }
std::int64_t Tensor::numel() const { return impl_->numel(); }

std::span<const double> Tensor::data() const { return impl_->data; }
std::span<double> Tensor::data() { return impl_->data; }

double Tensor::value() const {
    if (impl_->data.size() != 1)
        throw DimensionError("value() requires a single-element tensor, got " +
                             shape_str(impl_->shape));
    return impl_->data[0];
}

double Tensor::at4(int n, int c, int h, int w) const {
    const auto& s = impl_->shape;
    if (s.size() != 4) throw DimensionError("at4 requires a 4-D tensor");
    return impl_->data[static_cast<std::size_t>(((n * s[1] + c) * s[2] + h)) * s[3] + w];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool enabled) {
    impl_->requires_grad = enabled;
    if (!enabled) impl_->grad.clear();
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
    if (impl_->grad.empty())
        throw StateError("gradient not populated; run backward() first");
    return impl_->grad;
}

std::span<double> Tensor::grad() {
    impl_->ensure_grad();
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (impl_) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detached() const {
    auto impl = make_impl(impl_->shape);
    impl->data = impl_->data;
    return Tensor(std::move(impl));
}

Tensor Tensor::reshaped(std::vector<int> new_shape) const {
    if (shape_numel(new_shape) != impl_->numel())
        throw DimensionError("reshape " + shape_str(impl_->shape) + " -> " +
                             shape_str(new_shape) + " changes element count");
    auto impl = make_impl(std::move(new_shape));
    impl->data = impl_->data;
    return Tensor(std::move(impl));
}

std::vector<Tensor> Tensor::parents() const {
    std::vector<Tensor> out;
    if (!impl_) return out;
    out.reserve(impl_->parents.size());
    for (const auto& p : impl_->parents) out.emplace_back(p);
    return out;
}

void Tensor::backward() const {
    if (!impl_) throw StateError("backward on an undefined tensor");
    if (impl_->data.size() != 1)
        throw DimensionError("backward requires a scalar loss, got " + shape_str(impl_->shape));
    if (impl_->consumed) throw StateError("backward already ran on this graph");

    // Post-order DFS over recorded inputs; reverse order runs outputs first.
    std::vector<std::shared_ptr<TensorImpl>> order;
    std::unordered_set<TensorImpl*> seen;
    std::vector<std::pair<std::shared_ptr<TensorImpl>, std::size_t>> stack;
    seen.insert(impl_.get());
    stack.emplace_back(impl_, 0);
    while (!stack.empty()) {
        auto node = stack.back().first;
        const std::size_t next = stack.back().second;
        if (next < node->parents.size()) {
            ++stack.back().second;
            auto parent = node->parents[next];
            if (parent->consumed)
                throw StateError("graph shares a node whose backward already ran");
            if (seen.insert(parent.get()).second) stack.emplace_back(std::move(parent), 0);
        } else {
            order.push_back(std::move(node));
            stack.pop_back();
        }
    }

    impl_->ensure_grad();
    impl_->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* node = it->get();
        if (!node->backward_fn) continue;
        node->consumed = true;
        node->ensure_grad();
        auto fn = std::move(node->backward_fn);
        node->backward_fn = nullptr;
        fn(*node);
    }
    for (auto& node : order) node->parents.clear();
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

// ---- operators -----------------------------------------------------------

Tensor conv2d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias,
              int stride, int padding, int dilation) {
    require_4d(input, "conv2d input");
    require_4d(weight, "conv2d weight");
    if (stride < 1 || padding < 0 || dilation < 1)
        throw ValidationError("conv2d requires stride>=1, padding>=0, dilation>=1");

    ConvGeom g;
    const auto& is = input.shape();
    const auto& ws = weight.shape();
    g.cin = is[1];
    g.h = is[2];
    g.w = is[3];
    g.cout = ws[0];
    g.kh = ws[2];
    g.kw = ws[3];
    g.stride = stride;
    g.pad = padding;
    g.dil = dilation;
    if (ws[1] != g.cin)
        throw DimensionError("conv2d channel mismatch: input " + shape_str(is) + " vs weight " +
                             shape_str(ws));
    if (bias && (bias->ndim() != 1 || bias->dim(0) != g.cout))
        throw DimensionError("conv2d bias must be [" + std::to_string(g.cout) + "]");
    const int ext_h = dilation * (g.kh - 1) + 1;
    const int ext_w = dilation * (g.kw - 1) + 1;
    if (ext_h > g.h + 2 * padding || ext_w > g.w + 2 * padding)
        throw ValidationError("conv2d kernel extent exceeds padded input");
    g.oh = (g.h + 2 * padding - ext_h) / stride + 1;
    g.ow = (g.w + 2 * padding - ext_w) / stride + 1;
    g.unit_kernel = (g.kh == 1 && g.kw == 1 && stride == 1 && padding == 0);

    const int n = is[0];
    auto out = make_impl({n, g.cout, g.oh, g.ow});

    const std::size_t in_stride = static_cast<std::size_t>(g.cin) * g.h * g.w;
    const std::size_t out_stride = static_cast<std::size_t>(g.cout) * g.opix();
    const double* x = input.data().data();
    const double* wt = weight.data().data();
    double* y = out->data.data();

    // Saved column matrices feed the weight gradient in the backward pass.
    auto cols = std::make_shared<std::vector<double>>();
    if (!g.unit_kernel)
        cols->resize(static_cast<std::size_t>(n) * g.k() * g.opix());

    for (int b = 0; b < n; ++b) {
        const double* xb = x + b * in_stride;
        const double* col = xb;
        if (!g.unit_kernel) {
            double* colbuf = cols->data() + static_cast<std::size_t>(b) * g.k() * g.opix();
            im2col(xb, g, colbuf);
            col = colbuf;
        }
        double* yb = y + b * out_stride;
        if (bias) {
            const double* bv = bias->data().data();
            for (int co = 0; co < g.cout; ++co)
                std::fill(yb + static_cast<std::size_t>(co) * g.opix(),
                          yb + static_cast<std::size_t>(co + 1) * g.opix(), bv[co]);
        }
        gemm_acc(wt, col, yb, g.cout, g.k(), g.opix());
    }

    auto in_impl = input.impl();
    auto w_impl = weight.impl();
    auto b_impl = bias ? bias->impl() : nullptr;
    std::vector<std::shared_ptr<TensorImpl>> parents = {in_impl, w_impl};
    if (b_impl) parents.push_back(b_impl);
    attach(out, parents, [in_impl, w_impl, b_impl, g, n, cols, in_stride, out_stride](
                             TensorImpl& self) {
        const double* dy = self.grad.data();
        std::vector<double> dcol;
        if (in_impl->requires_grad && !g.unit_kernel)
            dcol.resize(static_cast<std::size_t>(g.k()) * g.opix());
        if (in_impl->requires_grad) in_impl->ensure_grad();
        if (w_impl->requires_grad) w_impl->ensure_grad();
        if (b_impl && b_impl->requires_grad) b_impl->ensure_grad();
        for (int b = 0; b < n; ++b) {
            const double* dyb = dy + b * out_stride;
            const double* col = g.unit_kernel
                                    ? in_impl->data.data() + b * in_stride
                                    : cols->data() + static_cast<std::size_t>(b) * g.k() * g.opix();
            if (w_impl->requires_grad)
                gemm_nt_acc(dyb, col, w_impl->grad.data(), g.cout, g.opix(), g.k());
            if (b_impl && b_impl->requires_grad) {
                for (int co = 0; co < g.cout; ++co) {
                    double acc = 0.0;
                    const double* row = dyb + static_cast<std::size_t>(co) * g.opix();
                    for (int p = 0; p < g.opix(); ++p) acc += row[p];
                    b_impl->grad[co] += acc;
                }
            }
            if (in_impl->requires_grad) {
                if (g.unit_kernel) {
                    gemm_tn_acc(w_impl->data.data(), dyb, in_impl->grad.data() + b * in_stride,
                                g.k(), g.cout, g.opix());
                } else {
                    std::fill(dcol.begin(), dcol.end(), 0.0);
                    gemm_tn_acc(w_impl->data.data(), dyb, dcol.data(), g.k(), g.cout, g.opix());
                    col2im_acc(dcol.data(), g, in_impl->grad.data() + b * in_stride);
                }
            }
        }
    });
    return Tensor(std::move(out));
}

Tensor relu(const Tensor& x) {
    require_defined(x, "relu input");
    auto out = make_impl(x.shape());
    const auto xd = x.data();
    for (std::size_t i = 0; i < xd.size(); ++i) out->data[i] = xd[i] > 0.0 ? xd[i] : 0.0;
    auto x_impl = x.impl();
    attach(out, {x_impl}, [x_impl](TensorImpl& self) {
        if (!x_impl->requires_grad) return;
        x_impl->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (x_impl->data[i] > 0.0) x_impl->grad[i] += self.grad[i];
    });
    return Tensor(std::move(out));
}

Tensor sigmoid(const Tensor& x) {
    require_defined(x, "sigmoid input");
    auto out = make_impl(x.shape());
    const auto xd = x.data();
    // Saturated values are nudged to the nearest representable interior double
    // so outputs stay strictly inside (0,1) as documented.
    const double hi = std::nextafter(1.0, 0.0);
    const double lo = std::numeric_limits<double>::denorm_min();
    for (std::size_t i = 0; i < xd.size(); ++i)
        out->data[i] = std::clamp(1.0 / (1.0 + std::exp(-xd[i])), lo, hi);
    auto x_impl = x.impl();
    auto y = out;  // closure reads its own outputs
    attach(out, {x_impl}, [x_impl, y](TensorImpl& self) {
        if (!x_impl->requires_grad) return;
        x_impl->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double v = y->data[i];
            x_impl->grad[i] += self.grad[i] * v * (1.0 - v);
        }
    });
    return Tensor(std::move(out));
}

Tensor softmax(const Tensor& x, int axis) {
    require_defined(x, "softmax input");
    const auto& s = x.shape();
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw DimensionError("softmax axis " + std::to_string(axis) + " invalid for " +
                             shape_str(s));
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t extent = s[axis];

    auto out = make_impl(s);
    const double* xd = x.data().data();
    double* yd = out->data.data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * extent * inner + in;
            double mx = xd[base];
            for (std::size_t e = 1; e < extent; ++e)
                mx = std::max(mx, xd[base + e * inner]);
            double total = 0.0;
            for (std::size_t e = 0; e < extent; ++e) {
                const double v = std::exp(xd[base + e * inner] - mx);
                yd[base + e * inner] = v;
                total += v;
            }
            for (std::size_t e = 0; e < extent; ++e) yd[base + e * inner] /= total;
        }
    }
    auto x_impl = x.impl();
    auto y = out;
    attach(out, {x_impl}, [x_impl, y, outer, inner, extent](TensorImpl& self) {
        if (!x_impl->requires_grad) return;
        x_impl->ensure_grad();
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * extent * inner + in;
                double dot = 0.0;
                for (std::size_t e = 0; e < extent; ++e)
                    dot += self.grad[base + e * inner] * y->data[base + e * inner];
                for (std::size_t e = 0; e < extent; ++e) {
                    const std::size_t i = base + e * inner;
                    x_impl->grad[i] += y->data[i] * (self.grad[i] - dot);
                }
            }
        }
    });
    return Tensor(std::move(out));
}

Tensor global_avg_pool(const Tensor& x) {
    require_4d(x, "global_avg_pool input");
    const auto& s = x.shape();
    const int n = s[0], c = s[1];
    const std::size_t hw = static_cast<std::size_t>(s[2]) * s[3];
    auto out = make_impl({n, c, 1, 1});
    const double* xd = x.data().data();
    for (int i = 0; i < n * c; ++i) {
        double acc = 0.0;
        const double* slice = xd + i * hw;
        for (std::size_t p = 0; p < hw; ++p) acc += slice[p];
        out->data[i] = acc / static_cast<double>(hw);
    }
    auto x_impl = x.impl();
    attach(out, {x_impl}, [x_impl, n, c, hw](TensorImpl& self) {
        if (!x_impl->requires_grad) return;
        x_impl->ensure_grad();
        const double inv = 1.0 / static_cast<double>(hw);
        for (int i = 0; i < n * c; ++i) {
            const double gv = self.grad[i] * inv;
            double* slice = x_impl->grad.data() + i * hw;
            for (std::size_t p = 0; p < hw; ++p) slice[p] += gv;
        }
    });
    return Tensor(std::move(out));
}

Tensor avg_pool(const Tensor& x, int factor) {
    require_4d(x, "avg_pool input");
    if (factor < 1) throw ValidationError("avg_pool factor must be >= 1");
    const auto& s = x.shape();
    if (s[2] % factor != 0 || s[3] % factor != 0)
        throw DimensionError("avg_pool factor " + std::to_string(factor) +
                             " does not divide spatial extents of " + shape_str(s));
    const int n = s[0], c = s[1], h = s[2], w = s[3];
    const int oh = h / factor, ow = w / factor;
    auto out = make_impl({n, c, oh, ow});
    const double* xd = x.data().data();
    double* yd = out->data.data();
    const double inv = 1.0 / (static_cast<double>(factor) * factor);
    for (int nc = 0; nc < n * c; ++nc) {
        const double* xs = xd + static_cast<std::size_t>(nc) * h * w;
        double* ys = yd + static_cast<std::size_t>(nc) * oh * ow;
        for (int i = 0; i < oh; ++i) {
            for (int j = 0; j < ow; ++j) {
                double acc = 0.0;
                for (int a = 0; a < factor; ++a)
                    for (int b = 0; b < factor; ++b)
                        acc += xs[static_cast<std::size_t>(i * factor + a) * w + j * factor + b];
                ys[static_cast<std::size_t>(i) * ow + j] = acc * inv;
            }
        }
    }
    auto x_impl = x.impl();
    attach(out, {x_impl}, [x_impl, n, c, h, w, oh, ow, factor, inv](TensorImpl& self) {
        if (!x_impl->requires_grad) return;
        x_impl->ensure_grad();
        for (int nc = 0; nc < n * c; ++nc) {
            double* xs = x_impl->grad.data() + static_cast<std::size_t>(nc) * h * w;
            const double* ys = self.grad.data() + static_cast<std::size_t>(nc) * oh * ow;
            for (int i = 0; i < oh; ++i)
                for (int j = 0; j < ow; ++j) {
                    const double gv = ys[static_cast<std::size_t>(i) * ow + j] * inv;
                    for (int a = 0; a < factor; ++a)
                        for (int b = 0; b < factor; ++b)
                            xs[static_cast<std::size_t>(i * factor + a) * w + j * factor + b] += gv;
                }
        }
    });
    return Tensor(std::move(out));
}

namespace {

Tensor elem_binary(const Tensor& a, const Tensor& b, bool multiply) {
    require_defined(a, "elementwise lhs");
    require_defined(b, "elementwise rhs");
    const Broadcast kind = classify_broadcast(a.shape(), b.shape());
    BroadcastIndexer bi{kind, 0, 0, 0};
    if (a.ndim() == 4) {
        bi.c = a.dim(1);
        bi.h = a.dim(2);
        bi.w = a.dim(3);
    }
    auto out = make_impl(a.shape());
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    for (std::size_t i = 0; i < out->data.size(); ++i) {
        const double bv = bd[bi(i)];
        out->data[i] = multiply ? ad[i] * bv : ad[i] + bv;
    }
    auto a_impl = a.impl();
    auto b_impl = b.impl();
    attach(out, {a_impl, b_impl}, [a_impl, b_impl, bi, multiply](TensorImpl& self) {
        if (a_impl->requires_grad) {
            a_impl->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                a_impl->grad[i] += multiply ? self.grad[i] * b_impl->data[bi(i)] : self.grad[i];
        }
        if (b_impl->requires_grad) {
            b_impl->ensure_grad();
            // Broadcast dimensions reduce-sum into b's grad.
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                b_impl->grad[bi(i)] += multiply ? self.grad[i] * a_impl->data[i] : self.grad[i];
        }
    });
    return Tensor(std::move(out));
}

}  // namespace

Tensor elem_mul(const Tensor& a, const Tensor& b) { return elem_binary(a, b, true); }
Tensor elem_add(const Tensor& a, const Tensor& b) { return elem_binary(a, b, false); }

Tensor concat(const std::vector<Tensor>& xs, int axis) {
    if (xs.empty()) throw ValidationError("concat requires at least one tensor");
    const auto& first = xs.front().shape();
    if (axis < 0 || axis >= static_cast<int>(first.size()))
        throw DimensionError("concat axis " + std::to_string(axis) + " invalid for " +
                             shape_str(first));
    int total = 0;
    for (const auto& t : xs) {
        require_defined(t, "concat input");
        const auto& s = t.shape();
        if (s.size() != first.size())
            throw DimensionError("concat rank mismatch " + shape_str(first) + " vs " +
                                 shape_str(s));
        for (std::size_t i = 0; i < s.size(); ++i)
            if (static_cast<int>(i) != axis && s[i] != first[i])
                throw DimensionError("concat extent mismatch " + shape_str(first) + " vs " +
                                     shape_str(s));
        total += s[axis];
    }
    std::vector<int> out_shape = first;
    out_shape[axis] = total;
    auto out = make_impl(out_shape);

    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= first[i];
    for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];

    std::size_t offset = 0;
    std::vector<std::size_t> offsets;
    for (const auto& t : xs) {
        offsets.push_back(offset);
        const std::size_t block = static_cast<std::size_t>(t.shape()[axis]) * inner;
        const double* src = t.data().data();
        for (std::size_t o = 0; o < outer; ++o)
            std::memcpy(out->data.data() + o * static_cast<std::size_t>(total) * inner + offset,
                        src + o * block, block * sizeof(double));
        offset += block;
    }

    std::vector<std::shared_ptr<TensorImpl>> impls;
    for (const auto& t : xs) impls.push_back(t.impl());
    attach(out, impls, [impls, offsets, outer, inner, total](TensorImpl& self) {
        for (std::size_t k = 0; k < impls.size(); ++k) {
            auto& in = impls[k];
            if (!in->requires_grad) continue;
            in->ensure_grad();
            const std::size_t block = in->data.size() / outer;
            for (std::size_t o = 0; o < outer; ++o) {
                const double* g =
                    self.grad.data() + o * static_cast<std::size_t>(total) * inner + offsets[k];
                double* dst = in->grad.data() + o * block;
                for (std::size_t i = 0; i < block; ++i) dst[i] += g[i];
            }
        }
    });
    return Tensor(std::move(out));
}

Tensor bilinear_upsample(const Tensor& x, int factor) {
    require_4d(x, "bilinear_upsample input");
    if (factor < 1) throw ValidationError("bilinear_upsample factor must be >= 1");
    const auto& s = x.shape();
    const int n = s[0], c = s[1], h = s[2], w = s[3];
    const int oh = h * factor, ow = w * factor;
    auto out = make_impl({n, c, oh, ow});

    // Per output coordinate: source index pair and interpolation weight.
    struct Lerp {
        int i0, i1;
        double t;
    };
    auto build = [factor](int out_extent, int in_extent) {
        std::vector<Lerp> v(out_extent);
        for (int o = 0; o < out_extent; ++o) {
            double src = (o + 0.5) / factor - 0.5;
            if (src < 0.0) src = 0.0;
            int i0 = std::min(static_cast<int>(src), in_extent - 1);
            v[o] = {i0, std::min(i0 + 1, in_extent - 1), src - i0};
        }
        return v;
    };
    const auto ly = build(oh, h);
    const auto lx = build(ow, w);

    const double* xd = x.data().data();
    double* yd = out->data.data();
    for (int nc = 0; nc < n * c; ++nc) {
        const double* xs = xd + static_cast<std::size_t>(nc) * h * w;
        double* ys = yd + static_cast<std::size_t>(nc) * oh * ow;
        for (int i = 0; i < oh; ++i) {
            const auto& ry = ly[i];
            for (int j = 0; j < ow; ++j) {
                const auto& rx = lx[j];
                const double v00 = xs[static_cast<std::size_t>(ry.i0) * w + rx.i0];
                const double v01 = xs[static_cast<std::size_t>(ry.i0) * w + rx.i1];
                const double v10 = xs[static_cast<std::size_t>(ry.i1) * w + rx.i0];
                const double v11 = xs[static_cast<std::size_t>(ry.i1) * w + rx.i1];
                ys[static_cast<std::size_t>(i) * ow + j] =
                    (1.0 - ry.t) * ((1.0 - rx.t) * v00 + rx.t * v01) +
                    ry.t * ((1.0 - rx.t) * v10 + rx.t * v11);
            }
        }
    }
    auto x_impl = x.impl();
    attach(out, {x_impl}, [x_impl, ly, lx, n, c, h, w, oh, ow](TensorImpl& self) {
        if (!x_impl->requires_grad) return;
        x_impl->ensure_grad();
        for (int nc = 0; nc < n * c; ++nc) {
            double* xs = x_impl->grad.data() + static_cast<std::size_t>(nc) * h * w;
            const double* ys = self.grad.data() + static_cast<std::size_t>(nc) * oh * ow;
            for (int i = 0; i < oh; ++i) {
                const auto& ry = ly[i];
                for (int j = 0; j < ow; ++j) {
                    const auto& rx = lx[j];
                    const double g = ys[static_cast<std::size_t>(i) * ow + j];
                    xs[static_cast<std::size_t>(ry.i0) * w + rx.i0] +=
                        g * (1.0 - ry.t) * (1.0 - rx.t);
                    xs[static_cast<std::size_t>(ry.i0) * w + rx.i1] += g * (1.0 - ry.t) * rx.t;
                    xs[static_cast<std::size_t>(ry.i1) * w + rx.i0] += g * ry.t * (1.0 - rx.t);
                    xs[static_cast<std::size_t>(ry.i1) * w + rx.i1] += g * ry.t * rx.t;
                }
            }
        }
    });
    return Tensor(std::move(out));
}

Tensor broadcast_hw(const Tensor& x, int h, int w) {
    require_4d(x, "broadcast_hw input");
    const auto& s = x.shape();
    if (s[2] != 1 || s[3] != 1)
        throw DimensionError("broadcast_hw expects [N,C,1,1], got " + shape_str(s));
    if (h < 1 || w < 1) throw ValidationError("broadcast_hw target extents must be positive");
    const int n = s[0], c = s[1];
    auto out = make_impl({n, c, h, w});
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int i = 0; i < n * c; ++i)
        std::fill(out->data.begin() + i * hw, out->data.begin() + (i + 1) * hw, x.data()[i]);
    auto x_impl = x.impl();
    attach(out, {x_impl}, [x_impl, n, c, hw](TensorImpl& self) {
        if (!x_impl->requires_grad) return;
        x_impl->ensure_grad();
        for (int i = 0; i < n * c; ++i) {
            double acc = 0.0;
            const double* g = self.grad.data() + i * hw;
            for (std::size_t p = 0; p < hw; ++p) acc += g[p];
            x_impl->grad[i] += acc;
        }
    });
    return Tensor(std::move(out));
}

void channel_stats(const Tensor& x, std::vector<double>& mean, std::vector<double>& var) {
    require_4d(x, "channel_stats input");
    const auto& s = x.shape();
    const int n = s[0], c = s[1];
    const std::size_t hw = static_cast<std::size_t>(s[2]) * s[3];
    const double count = static_cast<double>(n) * hw;
    mean.assign(c, 0.0);
    var.assign(c, 0.0);
    const double* xd = x.data().data();
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
            const double* slice = xd + (static_cast<std::size_t>(b) * c + ch) * hw;
            double acc = 0.0;
            for (std::size_t p = 0; p < hw; ++p) acc += slice[p];
            mean[ch] += acc;
        }
    for (int ch = 0; ch < c; ++ch) mean[ch] /= count;
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
            const double* slice = xd + (static_cast<std::size_t>(b) * c + ch) * hw;
            double acc = 0.0;
            for (std::size_t p = 0; p < hw; ++p) {
                const double d = slice[p] - mean[ch];
                acc += d * d;
            }
            var[ch] += acc;
        }
    for (int ch = 0; ch < c; ++ch) var[ch] /= count;
}

namespace {

void check_affine(const Tensor& x, const Tensor& scale, const Tensor& shift) {
    require_4d(x, "channel_norm input");
    const int c = x.dim(1);
    if (scale.ndim() != 1 || scale.dim(0) != c || shift.ndim() != 1 || shift.dim(0) != c)
        throw DimensionError("channel_norm scale/shift must be [" + std::to_string(c) + "]");
}

}  // namespace

Tensor channel_norm(const Tensor& x, const Tensor& scale, const Tensor& shift, double eps) {
    check_affine(x, scale, shift);
    const auto& s = x.shape();
    const int n = s[0], c = s[1];
    const std::size_t hw = static_cast<std::size_t>(s[2]) * s[3];
    const double count = static_cast<double>(n) * hw;

    auto mean = std::make_shared<std::vector<double>>();
    auto var = std::make_shared<std::vector<double>>();
    channel_stats(x, *mean, *var);

    auto out = make_impl(s);
    const double* xd = x.data().data();
    const double* gm = scale.data().data();
    const double* bt = shift.data().data();
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
            const double inv = 1.0 / std::sqrt((*var)[ch] + eps);
            const double* xs = xd + (static_cast<std::size_t>(b) * c + ch) * hw;
            double* ys = out->data.data() + (static_cast<std::size_t>(b) * c + ch) * hw;
            for (std::size_t p = 0; p < hw; ++p)
                ys[p] = (xs[p] - (*mean)[ch]) * inv * gm[ch] + bt[ch];
        }

    auto x_impl = x.impl();
    auto g_impl = scale.impl();
    auto b_impl = shift.impl();
    attach(out, {x_impl, g_impl, b_impl},
           [x_impl, g_impl, b_impl, mean, var, n, c, hw, count, eps](TensorImpl& self) {
               for (int ch = 0; ch < c; ++ch) {
                   const double inv = 1.0 / std::sqrt((*var)[ch] + eps);
                   double sum_g = 0.0, sum_gx = 0.0;
                   for (int b = 0; b < n; ++b) {
                       const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * hw;
                       for (std::size_t p = 0; p < hw; ++p) {
                           const double xhat = (x_impl->data[base + p] - (*mean)[ch]) * inv;
                           sum_g += self.grad[base + p];
                           sum_gx += self.grad[base + p] * xhat;
                       }
                   }
                   if (g_impl->requires_grad) {
                       g_impl->ensure_grad();
                       g_impl->grad[ch] += sum_gx;
                   }
                   if (b_impl->requires_grad) {
                       b_impl->ensure_grad();
                       b_impl->grad[ch] += sum_g;
                   }
                   if (x_impl->requires_grad) {
                       x_impl->ensure_grad();
                       const double k = g_impl->data[ch] * inv;
                       const double mg = sum_g / count;
                       const double mgx = sum_gx / count;
                       for (int b = 0; b < n; ++b) {
                           const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * hw;
                           for (std::size_t p = 0; p < hw; ++p) {
                               const double xhat = (x_impl->data[base + p] - (*mean)[ch]) * inv;
                               x_impl->grad[base + p] +=
                                   k * (self.grad[base + p] - mg - xhat * mgx);
                           }
                       }
                   }
               }
           });
    return Tensor(std::move(out));
}

Tensor channel_norm_frozen(const Tensor& x, const Tensor& scale, const Tensor& shift,
                           std::span<const double> mean, std::span<const double> var,
                           double eps) {
    check_affine(x, scale, shift);
    const auto& s = x.shape();
    const int n = s[0], c = s[1];
    if (static_cast<int>(mean.size()) != c || static_cast<int>(var.size()) != c)
        throw DimensionError("channel_norm_frozen statistics must have one entry per channel");
    const std::size_t hw = static_cast<std::size_t>(s[2]) * s[3];

    auto out = make_impl(s);
    std::vector<double> inv(c);
    for (int ch = 0; ch < c; ++ch) inv[ch] = 1.0 / std::sqrt(var[ch] + eps);
    std::vector<double> mu(mean.begin(), mean.end());

    const double* xd = x.data().data();
    const double* gm = scale.data().data();
    const double* bt = shift.data().data();
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
            const double* xs = xd + (static_cast<std::size_t>(b) * c + ch) * hw;
            double* ys = out->data.data() + (static_cast<std::size_t>(b) * c + ch) * hw;
            for (std::size_t p = 0; p < hw; ++p)
                ys[p] = (xs[p] - mu[ch]) * inv[ch] * gm[ch] + bt[ch];
        }

    auto x_impl = x.impl();
    auto g_impl = scale.impl();
    auto b_impl = shift.impl();
    attach(out, {x_impl, g_impl, b_impl},
           [x_impl, g_impl, b_impl, inv, mu, n, c, hw](TensorImpl& self) {
               for (int ch = 0; ch < c; ++ch) {
                   double sum_g = 0.0, sum_gx = 0.0;
                   for (int b = 0; b < n; ++b) {
                       const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * hw;
                       for (std::size_t p = 0; p < hw; ++p) {
                           const double xhat = (x_impl->data[base + p] - mu[ch]) * inv[ch];
                           sum_g += self.grad[base + p];
                           sum_gx += self.grad[base + p] * xhat;
                       }
                   }
                   if (g_impl->requires_grad) {
                       g_impl->ensure_grad();
                       g_impl->grad[ch] += sum_gx;
                   }
                   if (b_impl->requires_grad) {
                       b_impl->ensure_grad();
                       b_impl->grad[ch] += sum_g;
                   }
                   if (x_impl->requires_grad) {
                       x_impl->ensure_grad();
                       const double k = g_impl->data[ch] * inv[ch];
                       for (int b = 0; b < n; ++b) {
                           const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * hw;
                           for (std::size_t p = 0; p < hw; ++p)
                               x_impl->grad[base + p] += k * self.grad[base + p];
                       }
                   }
               }
           });
    return Tensor(std::move(out));
}

Tensor bce_loss(const Tensor& pred, const Tensor& target) {
    require_defined(pred, "bce_loss prediction");
    require_defined(target, "bce_loss target");
    if (pred.shape() != target.shape())
        throw DimensionError("bce_loss shape mismatch " + shape_str(pred.shape()) + " vs " +
                             shape_str(target.shape()));
    const double* pd = pred.data().data();
    const double* td = target.data().data();
    const std::size_t m = pred.data().size();
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        if (!std::isfinite(pd[i]))
            throw ValidationError("non-finite prediction reached bce_loss");
        if (!(td[i] >= 0.0 && td[i] <= 1.0))
            throw ValidationError("bce_loss target outside [0,1]");
        const double p = std::clamp(pd[i], kBceEps, 1.0 - kBceEps);
        total += -(td[i] * std::log(p) + (1.0 - td[i]) * std::log(1.0 - p));
    }
    auto out = make_impl({1});
    out->data[0] = total / static_cast<double>(m);

    auto p_impl = pred.impl();
    auto t_impl = target.impl();
    attach(out, {p_impl, t_impl}, [p_impl, t_impl, m](TensorImpl& self) {
        const double g = self.grad[0] / static_cast<double>(m);
        if (p_impl->requires_grad) {
            p_impl->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                const double p = p_impl->data[i];
                if (p <= kBceEps || p >= 1.0 - kBceEps) continue;  // clamped region is flat
                p_impl->grad[i] += g * (-t_impl->data[i] / p +
                                        (1.0 - t_impl->data[i]) / (1.0 - p));
            }
        }
        if (t_impl->requires_grad) {
            t_impl->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                const double p = std::clamp(p_impl->data[i], kBceEps, 1.0 - kBceEps);
                t_impl->grad[i] += g * (std::log(1.0 - p) - std::log(p));
            }
        }
    });
    return Tensor(std::move(out));
}

Tensor sum(const Tensor& x) {
    require_defined(x, "sum input");
    double total = 0.0;
    for (double v : x.data()) total += v;
    auto out = make_impl({1});
    out->data[0] = total;
    auto x_impl = x.impl();
    attach(out, {x_impl}, [x_impl](TensorImpl& self) {
        if (!x_impl->requires_grad) return;
        x_impl->ensure_grad();
        for (double& g : x_impl->grad) g += self.grad[0];
    });
    return Tensor(std::move(out));
}

Tensor scale(const Tensor& x, double factor) {
    require_defined(x, "scale input");
    auto out = make_impl(x.shape());
    const auto xd = x.data();
    for (std::size_t i = 0; i < xd.size(); ++i) out->data[i] = xd[i] * factor;
    auto x_impl = x.impl();
    attach(out, {x_impl}, [x_impl, factor](TensorImpl& self) {
        if (!x_impl->requires_grad) return;
        x_impl->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            x_impl->grad[i] += self.grad[i] * factor;
    });
    return Tensor(std::move(out));
}

}  // namespace mga

#include "mga/attention.hpp"

#include <cmath>
#include <sstream>

#include "mga/error.hpp"

namespace mga {

namespace {

Parameter conv1x1_weight(const std::string& name, int cout, int cin, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin));
    std::vector<double> v(static_cast<std::size_t>(cout) * cin);
    for (auto& x : v) x = rng.uniform(-bound, bound);
    return {name, Tensor::from_data({cout, cin, 1, 1}, std::move(v), true), {}};
}

Parameter zero_bias(const std::string& name, int cout) {
    return {name, Tensor::zeros({cout}, true), {}};
}

void check_spatial_pair(const Tensor& f_a, const Tensor& motion, const char* op) {
    if (f_a.ndim() != 4 || motion.ndim() != 4)
        throw DimensionError(std::string(op) + " expects 4-D inputs");
    if (f_a.dim(0) != motion.dim(0) || f_a.dim(2) != motion.dim(2) ||
        f_a.dim(3) != motion.dim(3)) {
        std::ostringstream os;
        os << op << " batch/spatial mismatch: appearance [" << f_a.dim(0) << "," << f_a.dim(1)
           << "," << f_a.dim(2) << "," << f_a.dim(3) << "] vs motion [" << motion.dim(0) << ","
           << motion.dim(1) << "," << motion.dim(2) << "," << motion.dim(3) << "]";
        throw DimensionError(os.str());
    }
}

Tensor conv1x1(const Tensor& x, const Parameter& w, const Parameter& b) {
    return conv2d(x, w.tensor, b.tensor, 1, 0, 1);
}

}  // namespace

const char* attention_kind_name(AttentionKind kind) {
    switch (kind) {
        case AttentionKind::None: return "none";
        case AttentionKind::MgaM: return "mga-m";
        case AttentionKind::MgaT: return "mga-t";
        case AttentionKind::MgaTm: return "mga-tm";
        case AttentionKind::MgaTmc: return "mga-tmc";
        case AttentionKind::Concat: return "concat";
        case AttentionKind::Mul: return "mul";
        case AttentionKind::Add: return "add";
    }
    return "?";
}

AttentionKind attention_kind_from_name(const std::string& name) {
    for (AttentionKind k :
         {AttentionKind::None, AttentionKind::MgaM, AttentionKind::MgaT, AttentionKind::MgaTm,
          AttentionKind::MgaTmc, AttentionKind::Concat, AttentionKind::Mul, AttentionKind::Add})
        if (name == attention_kind_name(k)) return k;
    throw ValidationError("unknown attention kind '" + name + "'");
}

AttentionParams make_attention_params(AttentionKind kind, int c, int c_motion, Rng& rng,
                                      const std::string& prefix) {
    if (c < 1 || c_motion < 1)
        throw ValidationError("attention site needs positive channel counts");
    AttentionParams p;
    const bool map_input = (c_motion == 1);
    switch (kind) {
        case AttentionKind::None:
        case AttentionKind::MgaM:
            break;
        case AttentionKind::MgaT:
            p.g_weight = conv1x1_weight(prefix + ".g.weight", c, c_motion, rng);
            p.g_bias = zero_bias(prefix + ".g.bias", c);
            break;
        case AttentionKind::MgaTm:
            p.h_weight = conv1x1_weight(prefix + ".h.weight", 1, c_motion, rng);
            p.h_bias = zero_bias(prefix + ".h.bias", 1);
            break;
        case AttentionKind::MgaTmc:
            p.h_weight = conv1x1_weight(prefix + ".h.weight", 1, c_motion, rng);
            p.h_bias = zero_bias(prefix + ".h.bias", 1);
            p.hp_weight = conv1x1_weight(prefix + ".hp.weight", c, c, rng);
            p.hp_bias = zero_bias(prefix + ".hp.bias", c);
            break;
        case AttentionKind::Concat:
            p.fuse_weight = conv1x1_weight(prefix + ".fuse.weight", c, c + c_motion, rng);
            p.fuse_bias = zero_bias(prefix + ".fuse.bias", c);
            break;
        case AttentionKind::Mul:
        case AttentionKind::Add:
            if (!map_input) {
                p.g_weight = conv1x1_weight(prefix + ".g.weight", c, c_motion, rng);
                p.g_bias = zero_bias(prefix + ".g.bias", c);
            }
            break;
    }
    return p;
}

std::vector<Parameter*> attention_parameters(AttentionParams& params) {
    std::vector<Parameter*> out;
    for (Parameter* p : {&params.g_weight, &params.g_bias, &params.h_weight, &params.h_bias,
                         &params.hp_weight, &params.hp_bias, &params.fuse_weight,
                         &params.fuse_bias})
        if (p->tensor.defined()) out.push_back(p);
    return out;
}

Tensor mga_m(const Tensor& f_a, const Tensor& p_m) {
    check_spatial_pair(f_a, p_m, "mga_m");
    if (p_m.dim(1) != 1)
        throw DimensionError("mga_m expects a single-channel map, got " +
                             std::to_string(p_m.dim(1)) + " channels");
    for (double v : p_m.data())
        if (!(v >= 0.0 && v <= 1.0))
            throw ValidationError("mga_m map value " + std::to_string(v) +
                                  " outside [0,1]; expected a sigmoid output");
    return elem_add(elem_mul(f_a, p_m), f_a);
}

Tensor mga_t(const Tensor& f_a, const Tensor& f_m, const AttentionParams& params) {
    check_spatial_pair(f_a, f_m, "mga_t");
    return elem_add(elem_mul(f_a, conv1x1(f_m, params.g_weight, params.g_bias)), f_a);
}

Tensor mga_tm(const Tensor& f_a, const Tensor& f_m, const AttentionParams& params) {
    check_spatial_pair(f_a, f_m, "mga_tm");
    Tensor map = sigmoid(conv1x1(f_m, params.h_weight, params.h_bias));
    return elem_add(elem_mul(f_a, map), f_a);
}

Tensor mga_tmc(const Tensor& f_a, const Tensor& f_m, const AttentionParams& params) {
    check_spatial_pair(f_a, f_m, "mga_tmc");
    Tensor map = sigmoid(conv1x1(f_m, params.h_weight, params.h_bias));
    Tensor fp = elem_mul(f_a, map);
    Tensor pooled = global_avg_pool(fp);
    Tensor logits = conv1x1(pooled, params.hp_weight, params.hp_bias);
    // Softmax over channels rescaled so the weights have mean 1.
    Tensor w = scale(softmax(logits, 1), static_cast<double>(f_a.dim(1)));
    return elem_add(elem_mul(fp, w), f_a);
}

Tensor fuse_concat(const Tensor& f_a, const Tensor& motion, const AttentionParams& params) {
    check_spatial_pair(f_a, motion, "fuse_concat");
    return conv1x1(concat({f_a, motion}, 1), params.fuse_weight, params.fuse_bias);
}

Tensor fuse_mul(const Tensor& f_a, const Tensor& motion, const AttentionParams& params) {
    check_spatial_pair(f_a, motion, "fuse_mul");
    if (motion.dim(1) == 1) return elem_mul(f_a, motion);
    return elem_mul(f_a, conv1x1(motion, params.g_weight, params.g_bias));
}

Tensor fuse_add(const Tensor& f_a, const Tensor& motion, const AttentionParams& params) {
    check_spatial_pair(f_a, motion, "fuse_add");
    if (motion.dim(1) == 1) return elem_add(f_a, motion);
    return elem_add(f_a, conv1x1(motion, params.g_weight, params.g_bias));
}

Tensor apply_attention(AttentionKind kind, const Tensor& f_a, const Tensor& motion,
                       const AttentionParams& params) {
    switch (kind) {
        case AttentionKind::None: return f_a;
        case AttentionKind::MgaM: return mga_m(f_a, motion);
        case AttentionKind::MgaT: return mga_t(f_a, motion, params);
        case AttentionKind::MgaTm: return mga_tm(f_a, motion, params);
        case AttentionKind::MgaTmc: return mga_tmc(f_a, motion, params);
        case AttentionKind::Concat: return fuse_concat(f_a, motion, params);
        case AttentionKind::Mul: return fuse_mul(f_a, motion, params);
        case AttentionKind::Add: return fuse_add(f_a, motion, params);
    }
    throw ValidationError("unhandled attention kind");
}

}  // namespace mga

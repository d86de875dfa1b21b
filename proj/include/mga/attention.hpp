#pragma once

#include <string>
#include <vector>

#include "mga/optim.hpp"
#include "mga/rng.hpp"
#include "mga/tensor.hpp"

namespace mga {

// Motion-appearance fusion variant at one attention site. Sites that see the
// motion saliency map (decoder side) admit only the map-input variants
// {MgaM, Mul, Add, Concat}; encoder sites take the motion feature tensor.
enum class AttentionKind { None, MgaM, MgaT, MgaTm, MgaTmc, Concat, Mul, Add };

const char* attention_kind_name(AttentionKind kind);
AttentionKind attention_kind_from_name(const std::string& name);

// Learnable slots for one site; only the slots the variant uses are defined.
//   g:  1x1 conv C'->C  (MgaT; Mul/Add alignment for tensor inputs)
//   h:  1x1 conv C'->1  (MgaTm, MgaTmc)
//   hp: 1x1 conv C->C on the pooled vector (MgaTmc)
//   fuse: 1x1 conv (C+Cm)->C (Concat)
struct AttentionParams {
    Parameter g_weight, g_bias;
    Parameter h_weight, h_bias;
    Parameter hp_weight, hp_bias;
    Parameter fuse_weight, fuse_bias;
};

// Initializes the slots `kind` needs for a site with C appearance channels and
// a motion input of c_motion channels (1 for the map-input decoder site).
// Weights are uniform in ±1/sqrt(fan_in), biases zero.
AttentionParams make_attention_params(AttentionKind kind, int c, int c_motion, Rng& rng,
                                      const std::string& prefix);

// Defined slots, in declaration order.
std::vector<Parameter*> attention_parameters(AttentionParams& params);

// f_a (+ f_a * attention). P_m must be a [N,1,H,W] probability map; values
// outside [0,1] signal a wiring bug and are rejected.
Tensor mga_m(const Tensor& f_a, const Tensor& p_m);
Tensor mga_t(const Tensor& f_a, const Tensor& f_m, const AttentionParams& params);
Tensor mga_tm(const Tensor& f_a, const Tensor& f_m, const AttentionParams& params);
Tensor mga_tmc(const Tensor& f_a, const Tensor& f_m, const AttentionParams& params);

// Baseline fusions (no residual). A 1-channel motion input is broadcast as a
// map; otherwise Mul/Add first align channels through the g conv.
Tensor fuse_concat(const Tensor& f_a, const Tensor& motion, const AttentionParams& params);
Tensor fuse_mul(const Tensor& f_a, const Tensor& motion, const AttentionParams& params);
Tensor fuse_add(const Tensor& f_a, const Tensor& motion, const AttentionParams& params);

// Dispatch on kind; None returns f_a untouched.
Tensor apply_attention(AttentionKind kind, const Tensor& f_a, const Tensor& motion,
                       const AttentionParams& params);

}  // namespace mga

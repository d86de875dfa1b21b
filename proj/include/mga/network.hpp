#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mga/attention.hpp"
#include "mga/optim.hpp"
#include "mga/rng.hpp"
#include "mga/tensor.hpp"

namespace mga {

// Widths, depths and fusion plan for the dual-branch network. Defaults are the
// toy scale; reference() carries the full-scale numbers for fidelity checks.
struct NetworkSpec {
    std::vector<int> appearance_blocks{1, 1, 2, 1};
    std::vector<int> appearance_channels{16, 32, 64, 64};
    std::vector<int> motion_blocks{1, 1, 1, 1};
    std::vector<int> motion_channels{8, 16, 32, 32};
    std::vector<int> stage_strides{2, 2, 1, 1};  // fixed; with the stride-2 head => /8
    std::vector<int> aspp_dilations{2, 4, 6};
    AttentionKind encoder_attention = AttentionKind::MgaTmc;  // sites 0-4
    AttentionKind decoder_attention = AttentionKind::MgaM;    // site 5
    int decoder_low_channels = 8;
    int decoder_mid_channels = 32;

    static NetworkSpec reference();

    // Throws ValidationError naming the violated invariant.
    void validate() const;

    int appearance_head_channels() const { return appearance_channels[0] / 4; }
    int motion_head_channels() const { return motion_channels[0]; }
};

struct Conv2dLayer {
    Parameter weight, bias;  // bias slot undefined when the conv is norm-followed
    int stride = 1, pad = 0, dil = 1;
    Tensor forward(const Tensor& x) const;
};

// Per-sample channel normalization with learnable affine. Batch size is one
// throughout this project, so statistics are always the sample's own; there is
// no train/eval statistics split (see channel_norm_frozen for the stored-stats
// primitive).
struct NormLayer {
    Parameter scale, shift;
    Tensor forward(const Tensor& x) const;
};

struct BottleneckBlock {
    Conv2dLayer conv1, conv2, conv3;  // 1x1 reduce, 3x3 (stride), 1x1 expand
    NormLayer norm1, norm2, norm3;
    Conv2dLayer proj;  // weight undefined when the skip is an identity
    NormLayer proj_norm;
    Tensor forward(const Tensor& x) const;
};

struct BasicBlock {
    Conv2dLayer conv1, conv2;  // 3x3 (stride), 3x3
    NormLayer norm1, norm2;
    Conv2dLayer proj;
    NormLayer proj_norm;
    Tensor forward(const Tensor& x) const;
};

// Five parallel branches: 1x1, three dilated 3x3, pooled 1x1-broadcast;
// each norm+ReLU; concatenated along channels (width * 5 outputs).
struct Aspp {
    Conv2dLayer point;
    NormLayer point_norm;
    std::vector<Conv2dLayer> dilated;
    std::vector<NormLayer> dilated_norm;
    Conv2dLayer pooled;
    NormLayer pooled_norm;
    Tensor forward(const Tensor& x) const;
};

struct BranchOutputs {
    Tensor head;
    std::array<Tensor, 4> stage;
    Tensor aspp;
    Tensor low_feature;  // appearance decoder tap; undefined for the motion branch
    Tensor saliency;     // [N,1,H,W] in (0,1) at input resolution
};

// Every intermediate of a joint pass, for wiring introspection and training.
struct JointTrace {
    BranchOutputs appearance;
    BranchOutputs motion;
    std::array<Tensor, 5> attended;  // encoder site outputs 0..4
    Tensor fused;                    // decoder concat before site 5
    Tensor fused_attended;           // after site 5
    Tensor p_m;                      // motion map handed to site 5 (pooled)
    Tensor saliency;                 // appearance-head prediction
};

class Network {
public:
    Network(const NetworkSpec& spec, std::uint64_t seed);

    const NetworkSpec& spec() const { return spec_; }

    // Standalone per-branch paths (encoder -> ASPP -> own decoder head).
    BranchOutputs forward_appearance(const Tensor& frame) const;
    BranchOutputs forward_motion(const Tensor& flow_image) const;

    // Dual-branch pass; absent flow runs the motion branch on a zero image.
    JointTrace forward_joint(const Tensor& frame,
                             const std::optional<Tensor>& flow_image) const;

    // Test hook: treat every attention site as a pass-through.
    void set_bypass_attention(bool bypass) { bypass_attention_ = bypass; }

    std::vector<Parameter*> parameters();
    std::int64_t parameter_count();

    // Per-channel input standardization, applied to frames / flow images after
    // the [0,1] scaling. Stored in checkpoints.
    void set_frame_stats(std::vector<double> mean, std::vector<double> stddev);
    void set_flow_stats(std::vector<double> mean, std::vector<double> stddev);
    const std::vector<double>& frame_mean() const { return frame_mean_; }
    const std::vector<double>& frame_std() const { return frame_std_; }
    const std::vector<double>& flow_mean() const { return flow_mean_; }
    const std::vector<double>& flow_std() const { return flow_std_; }

    // Named tensors for serialization: all parameters plus the four
    // standardization vectors.
    struct StateRef {
        std::string name;
        std::vector<int> shape;
        double* values;
        std::size_t count;
    };
    std::vector<StateRef> state_entries();

private:
    struct Branch {
        Conv2dLayer head;
        NormLayer head_norm;
        std::vector<std::vector<BottleneckBlock>> bottleneck_stages;
        std::vector<std::vector<BasicBlock>> basic_stages;
        Aspp aspp;
    };

    Tensor run_stage(const Branch& b, int stage_idx, const Tensor& x) const;
    Tensor standardize(const Tensor& img, const std::vector<double>& mean,
                       const std::vector<double>& stddev) const;
    void check_image(const Tensor& img, const char* what) const;

    NetworkSpec spec_;
    Branch appearance_, motion_;

    // appearance decoder
    Conv2dLayer dec_conv1_, dec_conv2_, dec_conv3_, dec_conv4_, dec_conv5_;
    NormLayer dec_norm1_, dec_norm2_, dec_norm3_, dec_norm4_;
    // motion decoder (conv-3..5 analog on its ASPP output)
    Conv2dLayer mot_conv3_, mot_conv4_, mot_conv5_;
    NormLayer mot_norm3_, mot_norm4_;

    std::array<AttentionParams, 6> site_params_;
    bool bypass_attention_ = false;

    std::vector<double> frame_mean_, frame_std_, flow_mean_, flow_std_;
};

}  // namespace mga

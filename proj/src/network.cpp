#include "mga/network.hpp"

#include <cmath>
#include <sstream>

#include "mga/error.hpp"

namespace mga {

namespace {

Parameter conv_weight(const std::string& name, int cout, int cin, int kh, int kw, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin) * kh * kw);
    std::vector<double> v(static_cast<std::size_t>(cout) * cin * kh * kw);
    for (auto& x : v) x = rng.uniform(-bound, bound);
    return {name, Tensor::from_data({cout, cin, kh, kw}, std::move(v), true), {}};
}

Conv2dLayer make_conv(const std::string& name, int cout, int cin, int k, int stride, int pad,
                      int dil, bool bias, Rng& rng) {
    Conv2dLayer c;
    c.weight = conv_weight(name + ".weight", cout, cin, k, k, rng);
    if (bias) c.bias = {name + ".bias", Tensor::zeros({cout}, true), {}};
    c.stride = stride;
    c.pad = pad;
    c.dil = dil;
    return c;
}

NormLayer make_norm(const std::string& name, int c) {
    NormLayer n;
    n.scale = {name + ".scale", Tensor::full({c}, 1.0, true), {}};
    n.shift = {name + ".shift", Tensor::zeros({c}, true), {}};
    return n;
}

BottleneckBlock make_bottleneck(const std::string& name, int cin, int width, int stride,
                                Rng& rng) {
    const int mid = width / 4;
    BottleneckBlock b;
    b.conv1 = make_conv(name + ".conv1", mid, cin, 1, 1, 0, 1, false, rng);
    b.norm1 = make_norm(name + ".norm1", mid);
    b.conv2 = make_conv(name + ".conv2", mid, mid, 3, stride, 1, 1, false, rng);
    b.norm2 = make_norm(name + ".norm2", mid);
    b.conv3 = make_conv(name + ".conv3", width, mid, 1, 1, 0, 1, false, rng);
    b.norm3 = make_norm(name + ".norm3", width);
    if (cin != width || stride != 1) {
        b.proj = make_conv(name + ".proj", width, cin, 1, stride, 0, 1, false, rng);
        b.proj_norm = make_norm(name + ".proj_norm", width);
    }
    return b;
}

BasicBlock make_basic(const std::string& name, int cin, int width, int stride, Rng& rng) {
    BasicBlock b;
    b.conv1 = make_conv(name + ".conv1", width, cin, 3, stride, 1, 1, false, rng);
    b.norm1 = make_norm(name + ".norm1", width);
    b.conv2 = make_conv(name + ".conv2", width, width, 3, 1, 1, 1, false, rng);
    b.norm2 = make_norm(name + ".norm2", width);
    if (cin != width || stride != 1) {
        b.proj = make_conv(name + ".proj", width, cin, 1, stride, 0, 1, false, rng);
        b.proj_norm = make_norm(name + ".proj_norm", width);
    }
    return b;
}

Aspp make_aspp(const std::string& name, int cin, int width, const std::vector<int>& dilations,
               Rng& rng) {
    Aspp a;
    a.point = make_conv(name + ".point", width, cin, 1, 1, 0, 1, false, rng);
    a.point_norm = make_norm(name + ".point_norm", width);
    for (std::size_t i = 0; i < dilations.size(); ++i) {
        const int d = dilations[i];
        const std::string dn = name + ".dilated" + std::to_string(i);
        a.dilated.push_back(make_conv(dn, width, cin, 3, 1, d, d, false, rng));
        a.dilated_norm.push_back(make_norm(dn + "_norm", width));
    }
    a.pooled = make_conv(name + ".pooled", width, cin, 1, 1, 0, 1, false, rng);
    a.pooled_norm = make_norm(name + ".pooled_norm", width);
    return a;
}

void collect_conv(Conv2dLayer& c, std::vector<Parameter*>& out) {
    out.push_back(&c.weight);
    if (c.bias.tensor.defined()) out.push_back(&c.bias);
}

void collect_norm(NormLayer& n, std::vector<Parameter*>& out) {
    out.push_back(&n.scale);
    out.push_back(&n.shift);
}

}  // namespace

NetworkSpec NetworkSpec::reference() {
    NetworkSpec s;
    s.appearance_blocks = {3, 4, 23, 3};
    s.appearance_channels = {256, 512, 1024, 2048};
    s.motion_blocks = {3, 4, 6, 3};
    s.motion_channels = {64, 128, 256, 512};
    s.aspp_dilations = {12, 24, 36};
    s.decoder_low_channels = 48;
    s.decoder_mid_channels = 256;
    return s;
}

void NetworkSpec::validate() const {
    auto stage_list = [](const std::vector<int>& v, const char* what) {
        if (v.size() != 4)
            throw ValidationError(std::string(what) + " must list exactly 4 stages");
        for (int x : v)
            if (x < 1) throw ValidationError(std::string(what) + " entries must be >= 1");
    };
    stage_list(appearance_blocks, "appearance_blocks");
    stage_list(appearance_channels, "appearance_channels");
    stage_list(motion_blocks, "motion_blocks");
    stage_list(motion_channels, "motion_channels");
    for (int c : appearance_channels)
        if (c % 4 != 0)
            throw ValidationError(
                "appearance_channels must be divisible by 4 (bottleneck expansion)");
    if (stage_strides != std::vector<int>{2, 2, 1, 1})
        throw ValidationError("stage_strides are fixed at [2,2,1,1]");
    if (aspp_dilations.empty())
        throw ValidationError("aspp_dilations must not be empty");
    for (int d : aspp_dilations)
        if (d < 1) throw ValidationError("aspp_dilations entries must be >= 1");
    if (encoder_attention == AttentionKind::MgaM)
        throw ValidationError(
            "encoder sites 0-4 take motion feature tensors; mga-m needs a saliency map");
    switch (decoder_attention) {
        case AttentionKind::None:
        case AttentionKind::MgaM:
        case AttentionKind::Concat:
        case AttentionKind::Mul:
        case AttentionKind::Add:
            break;
        default:
            throw ValidationError(
                "decoder_attention must be a map-input variant (mga-m/concat/mul/add/none)");
    }
    if (decoder_low_channels < 1 || decoder_mid_channels < 1)
        throw ValidationError("decoder channel widths must be >= 1");
}

Tensor Conv2dLayer::forward(const Tensor& x) const {
    std::optional<Tensor> b;
    if (bias.tensor.defined()) b = bias.tensor;
    return conv2d(x, weight.tensor, b, stride, pad, dil);
}

Tensor NormLayer::forward(const Tensor& x) const {
    return channel_norm(x, scale.tensor, shift.tensor);
}

Tensor BottleneckBlock::forward(const Tensor& x) const {
    Tensor t = relu(norm1.forward(conv1.forward(x)));
    t = relu(norm2.forward(conv2.forward(t)));
    t = norm3.forward(conv3.forward(t));
    Tensor skip = proj.weight.tensor.defined() ? proj_norm.forward(proj.forward(x)) : x;
    return relu(elem_add(t, skip));
}

Tensor BasicBlock::forward(const Tensor& x) const {
    Tensor t = relu(norm1.forward(conv1.forward(x)));
    t = norm2.forward(conv2.forward(t));
    Tensor skip = proj.weight.tensor.defined() ? proj_norm.forward(proj.forward(x)) : x;
    return relu(elem_add(t, skip));
}

Tensor Aspp::forward(const Tensor& x) const {
    std::vector<Tensor> branches;
    branches.push_back(relu(point_norm.forward(point.forward(x))));
    for (std::size_t i = 0; i < dilated.size(); ++i)
        branches.push_back(relu(dilated_norm[i].forward(dilated[i].forward(x))));
    Tensor pool = relu(pooled_norm.forward(pooled.forward(global_avg_pool(x))));
    branches.push_back(broadcast_hw(pool, x.dim(2), x.dim(3)));
    return concat(branches, 1);
}

Network::Network(const NetworkSpec& spec, std::uint64_t seed) : spec_(spec) {
    spec_.validate();
    Rng rng(seed);

    auto build_branch = [&](Branch& b, const std::string& prefix, bool bottleneck,
                            const std::vector<int>& blocks, const std::vector<int>& channels,
                            int head_out) {
        b.head = make_conv(prefix + ".head.conv", head_out, 3, 7, 2, 3, 1, false, rng);
        b.head_norm = make_norm(prefix + ".head.norm", head_out);
        int cin = head_out;
        for (int s = 0; s < 4; ++s) {
            const std::string sn = prefix + ".stage" + std::to_string(s + 1);
            const int width = channels[s];
            if (bottleneck) {
                std::vector<BottleneckBlock> stage;
                for (int i = 0; i < blocks[s]; ++i) {
                    const int stride = (i == 0) ? spec_.stage_strides[s] : 1;
                    stage.push_back(make_bottleneck(sn + ".block" + std::to_string(i), cin,
                                                    width, stride, rng));
                    cin = width;
                }
                b.bottleneck_stages.push_back(std::move(stage));
            } else {
                std::vector<BasicBlock> stage;
                for (int i = 0; i < blocks[s]; ++i) {
                    const int stride = (i == 0) ? spec_.stage_strides[s] : 1;
                    stage.push_back(
                        make_basic(sn + ".block" + std::to_string(i), cin, width, stride, rng));
                    cin = width;
                }
                b.basic_stages.push_back(std::move(stage));
            }
        }
        b.aspp = make_aspp(prefix + ".aspp", channels[3], spec_.decoder_mid_channels,
                           spec_.aspp_dilations, rng);
    };

    build_branch(appearance_, "appearance", true, spec_.appearance_blocks,
                 spec_.appearance_channels, spec_.appearance_head_channels());
    build_branch(motion_, "motion", false, spec_.motion_blocks, spec_.motion_channels,
                 spec_.motion_head_channels());

    const int mid = spec_.decoder_mid_channels;
    const int low = spec_.decoder_low_channels;
    const int aspp_out = mid * (2 + static_cast<int>(spec_.aspp_dilations.size()));
    dec_conv1_ = make_conv("appearance.decoder.conv1", mid, aspp_out, 1, 1, 0, 1, false, rng);
    dec_norm1_ = make_norm("appearance.decoder.norm1", mid);
    dec_conv2_ = make_conv("appearance.decoder.conv2", low, spec_.appearance_channels[0], 1, 1,
                           0, 1, false, rng);
    dec_norm2_ = make_norm("appearance.decoder.norm2", low);
    dec_conv3_ = make_conv("appearance.decoder.conv3", mid, mid + low, 3, 1, 1, 1, false, rng);
    dec_norm3_ = make_norm("appearance.decoder.norm3", mid);
    dec_conv4_ = make_conv("appearance.decoder.conv4", mid, mid, 3, 1, 1, 1, false, rng);
    dec_norm4_ = make_norm("appearance.decoder.norm4", mid);
    dec_conv5_ = make_conv("appearance.decoder.conv5", 1, mid, 1, 1, 0, 1, true, rng);

    mot_conv3_ = make_conv("motion.decoder.conv3", mid, aspp_out, 3, 1, 1, 1, false, rng);
    mot_norm3_ = make_norm("motion.decoder.norm3", mid);
    mot_conv4_ = make_conv("motion.decoder.conv4", mid, mid, 3, 1, 1, 1, false, rng);
    mot_norm4_ = make_norm("motion.decoder.norm4", mid);
    mot_conv5_ = make_conv("motion.decoder.conv5", 1, mid, 1, 1, 0, 1, true, rng);

    const int app_c[5] = {spec_.appearance_head_channels(), spec_.appearance_channels[0],
                          spec_.appearance_channels[1], spec_.appearance_channels[2],
                          spec_.appearance_channels[3]};
    const int mot_c[5] = {spec_.motion_head_channels(), spec_.motion_channels[0],
                          spec_.motion_channels[1], spec_.motion_channels[2],
                          spec_.motion_channels[3]};
    for (int i = 0; i < 5; ++i)
        site_params_[i] = make_attention_params(spec_.encoder_attention, app_c[i], mot_c[i],
                                                rng, "attention.site" + std::to_string(i));
    site_params_[5] = make_attention_params(spec_.decoder_attention, mid + low, 1, rng,
                                            "attention.site5");

    frame_mean_.assign(3, 0.0);
    frame_std_.assign(3, 1.0);
    flow_mean_.assign(3, 0.0);
    flow_std_.assign(3, 1.0);
}

void Network::check_image(const Tensor& img, const char* what) const {
    if (img.ndim() != 4 || img.dim(1) != 3)
        throw ValidationError(std::string(what) + " must be [N,3,H,W]");
    if (img.dim(2) % 8 != 0 || img.dim(3) % 8 != 0)
        throw ValidationError(std::string(what) + " extents must be divisible by 8, got " +
                              std::to_string(img.dim(2)) + "x" + std::to_string(img.dim(3)));
}

Tensor Network::standardize(const Tensor& img, const std::vector<double>& mean,
                            const std::vector<double>& stddev) const {
    Tensor out = Tensor::zeros(img.shape());
    const int n = img.dim(0), c = img.dim(1);
    const std::size_t hw = static_cast<std::size_t>(img.dim(2)) * img.dim(3);
    const double* src = img.data().data();
    double* dst = out.data().data();
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
            const double m = mean[ch], inv = 1.0 / stddev[ch];
            const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * hw;
            for (std::size_t p = 0; p < hw; ++p) dst[base + p] = (src[base + p] - m) * inv;
        }
    return out;
}

Tensor Network::run_stage(const Branch& b, int stage_idx, const Tensor& x) const {
    Tensor t = x;
    if (!b.bottleneck_stages.empty())
        for (const auto& block : b.bottleneck_stages[stage_idx]) t = block.forward(t);
    else
        for (const auto& block : b.basic_stages[stage_idx]) t = block.forward(t);
    return t;
}

BranchOutputs Network::forward_appearance(const Tensor& frame) const {
    check_image(frame, "frame");
    BranchOutputs out;
    Tensor x = standardize(frame, frame_mean_, frame_std_);
    out.head = relu(appearance_.head_norm.forward(appearance_.head.forward(x)));
    Tensor t = out.head;
    for (int s = 0; s < 4; ++s) {
        t = run_stage(appearance_, s, t);
        out.stage[s] = t;
    }
    out.aspp = appearance_.aspp.forward(t);

    Tensor high = relu(dec_norm1_.forward(dec_conv1_.forward(out.aspp)));
    out.low_feature = relu(dec_norm2_.forward(dec_conv2_.forward(out.stage[0])));
    Tensor fused = concat({bilinear_upsample(high, 2), out.low_feature}, 1);
    Tensor d = relu(dec_norm3_.forward(dec_conv3_.forward(fused)));
    d = relu(dec_norm4_.forward(dec_conv4_.forward(d)));
    out.saliency = bilinear_upsample(sigmoid(dec_conv5_.forward(d)), 4);
    return out;
}

BranchOutputs Network::forward_motion(const Tensor& flow_image) const {
    check_image(flow_image, "flow image");
    BranchOutputs out;
    Tensor x = standardize(flow_image, flow_mean_, flow_std_);
    out.head = relu(motion_.head_norm.forward(motion_.head.forward(x)));
    Tensor t = out.head;
    for (int s = 0; s < 4; ++s) {
        t = run_stage(motion_, s, t);
        out.stage[s] = t;
    }
    out.aspp = motion_.aspp.forward(t);
    Tensor d = relu(mot_norm3_.forward(mot_conv3_.forward(out.aspp)));
    d = relu(mot_norm4_.forward(mot_conv4_.forward(d)));
    out.saliency = bilinear_upsample(sigmoid(mot_conv5_.forward(d)), 8);
    return out;
}

JointTrace Network::forward_joint(const Tensor& frame,
                                  const std::optional<Tensor>& flow_image) const {
    check_image(frame, "frame");
    Tensor flow;
    if (flow_image) {
        if (flow_image->shape() != frame.shape())
            throw ValidationError("flow image resolution does not match the frame");
        flow = *flow_image;
    } else {
        flow = Tensor::zeros(frame.shape());  // zero-filled motion input
    }

    JointTrace tr;
    tr.motion = forward_motion(flow);

    auto site = [&](int i, const Tensor& fa, const Tensor& m) {
        if (bypass_attention_) return fa;
        const AttentionKind kind = i == 5 ? spec_.decoder_attention : spec_.encoder_attention;
        return apply_attention(kind, fa, m, site_params_[i]);
    };

    Tensor x = standardize(frame, frame_mean_, frame_std_);
    tr.appearance.head = relu(appearance_.head_norm.forward(appearance_.head.forward(x)));
    tr.attended[0] = site(0, tr.appearance.head, tr.motion.head);
    Tensor t = tr.attended[0];
    for (int s = 0; s < 4; ++s) {
        t = run_stage(appearance_, s, t);
        tr.appearance.stage[s] = t;
        tr.attended[s + 1] = site(s + 1, t, tr.motion.stage[s]);
        t = tr.attended[s + 1];
    }
    tr.appearance.aspp = appearance_.aspp.forward(tr.attended[4]);

    Tensor high = relu(dec_norm1_.forward(dec_conv1_.forward(tr.appearance.aspp)));
    tr.appearance.low_feature =
        relu(dec_norm2_.forward(dec_conv2_.forward(tr.appearance.stage[0])));
    tr.fused = concat({bilinear_upsample(high, 2), tr.appearance.low_feature}, 1);

    tr.p_m = avg_pool(tr.motion.saliency, 4);
    tr.fused_attended = site(5, tr.fused, tr.p_m);

    Tensor d = relu(dec_norm3_.forward(dec_conv3_.forward(tr.fused_attended)));
    d = relu(dec_norm4_.forward(dec_conv4_.forward(d)));
    tr.saliency = bilinear_upsample(sigmoid(dec_conv5_.forward(d)), 4);
    tr.appearance.saliency = tr.saliency;
    return tr;
}

std::vector<Parameter*> Network::parameters() {
    std::vector<Parameter*> out;
    auto collect_branch = [&](Branch& b) {
        collect_conv(b.head, out);
        collect_norm(b.head_norm, out);
        for (auto& stage : b.bottleneck_stages)
            for (auto& blk : stage) {
                collect_conv(blk.conv1, out);
                collect_norm(blk.norm1, out);
                collect_conv(blk.conv2, out);
                collect_norm(blk.norm2, out);
                collect_conv(blk.conv3, out);
                collect_norm(blk.norm3, out);
                if (blk.proj.weight.tensor.defined()) {
                    collect_conv(blk.proj, out);
                    collect_norm(blk.proj_norm, out);
                }
            }
        for (auto& stage : b.basic_stages)
            for (auto& blk : stage) {
                collect_conv(blk.conv1, out);
                collect_norm(blk.norm1, out);
                collect_conv(blk.conv2, out);
                collect_norm(blk.norm2, out);
                if (blk.proj.weight.tensor.defined()) {
                    collect_conv(blk.proj, out);
                    collect_norm(blk.proj_norm, out);
                }
            }
        collect_conv(b.aspp.point, out);
        collect_norm(b.aspp.point_norm, out);
        for (std::size_t i = 0; i < b.aspp.dilated.size(); ++i) {
            collect_conv(b.aspp.dilated[i], out);
            collect_norm(b.aspp.dilated_norm[i], out);
        }
        collect_conv(b.aspp.pooled, out);
        collect_norm(b.aspp.pooled_norm, out);
    };
    collect_branch(appearance_);
    collect_conv(dec_conv1_, out);
    collect_norm(dec_norm1_, out);
    collect_conv(dec_conv2_, out);
    collect_norm(dec_norm2_, out);
    collect_conv(dec_conv3_, out);
    collect_norm(dec_norm3_, out);
    collect_conv(dec_conv4_, out);
    collect_norm(dec_norm4_, out);
    collect_conv(dec_conv5_, out);
    collect_branch(motion_);
    collect_conv(mot_conv3_, out);
    collect_norm(mot_norm3_, out);
    collect_conv(mot_conv4_, out);
    collect_norm(mot_norm4_, out);
    collect_conv(mot_conv5_, out);
    for (auto& site : site_params_)
        for (Parameter* p : attention_parameters(site)) out.push_back(p);
    return out;
}

std::int64_t Network::parameter_count() {
    std::int64_t total = 0;
    for (Parameter* p : parameters()) total += p->tensor.numel();
    return total;
}

void Network::set_frame_stats(std::vector<double> mean, std::vector<double> stddev) {
    if (mean.size() != 3 || stddev.size() != 3)
        throw ValidationError("frame statistics need 3 channels");
    for (double s : stddev)
        if (!(s > 0.0)) throw ValidationError("frame std must be positive");
    frame_mean_ = std::move(mean);
    frame_std_ = std::move(stddev);
}

void Network::set_flow_stats(std::vector<double> mean, std::vector<double> stddev) {
    if (mean.size() != 3 || stddev.size() != 3)
        throw ValidationError("flow statistics need 3 channels");
    for (double s : stddev)
        if (!(s > 0.0)) throw ValidationError("flow std must be positive");
    flow_mean_ = std::move(mean);
    flow_std_ = std::move(stddev);
}

std::vector<Network::StateRef> Network::state_entries() {
    std::vector<StateRef> out;
    for (Parameter* p : parameters())
        out.push_back({p->name, p->tensor.shape(), p->tensor.data().data(),
                       p->tensor.data().size()});
    auto stat = [&](const char* name, std::vector<double>& v) {
        out.push_back({name, {static_cast<int>(v.size())}, v.data(), v.size()});
    };
    stat("input_stats.frame.mean", frame_mean_);
    stat("input_stats.frame.std", frame_std_);
    stat("input_stats.flow.mean", flow_mean_);
    stat("input_stats.flow.std", flow_std_);
    return out;
}

}  // namespace mga

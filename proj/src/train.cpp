#include "mga/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>

#include "mga/checkpoint.hpp"
#include "mga/error.hpp"
#include "mga/rng.hpp"

namespace fs = std::filesystem;

namespace mga {
namespace {

// Distinct RNG streams per training stage so stages compose deterministically.
constexpr std::uint64_t kAppearanceStream = 0x61707065u;
constexpr std::uint64_t kMotionStream = 0x6d6f7469u;
constexpr std::uint64_t kJointStream = 0x6a6f696eu;

Tensor as_batch(const Tensor& t) {
    std::vector<int> shape = t.shape();
    shape.insert(shape.begin(), 1);
    return t.reshaped(std::move(shape));
}

std::vector<Parameter*> prefix_parameters(Network& net, const std::string& prefix) {
    std::vector<Parameter*> out;
    for (Parameter* p : net.parameters())
        if (p->name.rfind(prefix, 0) == 0) out.push_back(p);
    return out;
}

// Every eighth sample is held out for the per-epoch validation loss; tiny
// sets keep everything in the training pool and validate on it.
void split_samples(std::size_t n, std::vector<std::size_t>& train, std::vector<std::size_t>& held) {
    train.clear();
    held.clear();
    for (std::size_t i = 0; i < n; ++i)
        (n >= 8 && i % 8 == 7 ? held : train).push_back(i);
}

void check_finite(double loss, int epoch, int step) {
    if (!std::isfinite(loss))
        throw StateError("non-finite training loss at epoch " + std::to_string(epoch + 1) +
                         ", step " + std::to_string(step + 1) + "; lower the learning rate");
}

using LossFn = std::function<Tensor(const Sample&)>;

EpochLog run_epochs(const std::vector<Sample>& samples, const std::vector<Parameter*>& params,
                    const TrainingScheme& scheme, int epochs, std::uint64_t stream,
                    const LossFn& loss_fn) {
    scheme.validate();
    if (samples.empty()) throw ValidationError("training sample set is empty");
    if (params.empty()) throw ValidationError("no trainable parameters selected");

    std::vector<std::size_t> train_idx, held_idx;
    split_samples(samples.size(), train_idx, held_idx);
    const std::vector<std::size_t>& eval_idx = held_idx.empty() ? train_idx : held_idx;

    Rng rng = Rng(scheme.seed).fork(stream);
    const SgdConfig cfg{scheme.lr, scheme.momentum, scheme.weight_decay};

    EpochLog log;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        double epoch_sum = 0.0;
        for (int step = 0; step < scheme.epoch_samples; ++step) {
            double batch_sum = 0.0;
            for (int b = 0; b < scheme.batch_size; ++b) {
                const std::size_t pick =
                    train_idx[rng.uniform_int(0, static_cast<int>(train_idx.size()) - 1)];
                Tensor loss = loss_fn(samples[pick]);
                batch_sum += loss.value();
                scale(loss, 1.0 / scheme.batch_size).backward();
            }
            check_finite(batch_sum, epoch, step);
            sgd_step(params, cfg);
            epoch_sum += batch_sum / scheme.batch_size;
        }
        log.train.push_back(epoch_sum / scheme.epoch_samples);

        {
            NoGradGuard guard;
            double held_sum = 0.0;
            for (std::size_t i : eval_idx) held_sum += loss_fn(samples[i]).value();
            log.held_out.push_back(held_sum / static_cast<double>(eval_idx.size()));
        }
    }
    return log;
}

Tensor zero_like_mask(const Sample& s) { return Tensor::zeros(s.mask.shape()); }

Tensor motion_input(const Sample& s) {
    if (s.flow_image.defined()) return s.flow_image;
    return Tensor::zeros({1, 3, s.frame.dim(2), s.frame.dim(3)});
}

std::string variant_key(const AblationVariant& v) {
    return std::string(attention_kind_name(v.encoder)) + "/" + attention_kind_name(v.decoder) +
           "/" + std::to_string(static_cast<int>(v.path));
}

std::string format_value(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

}  // namespace

SampleSet build_samples(const std::vector<std::vector<VideoSample>>& clips) {
    SampleSet out;
    for (const auto& clip : clips) {
        for (std::size_t t = 0; t < clip.size(); ++t) {
            Sample s;
            s.frame = as_batch(clip[t].frame);
            s.mask = as_batch(clip[t].mask);
            if (t > 0) {
                s.flow_image = as_batch(clip[t].flow_image);
                out.videos.push_back(std::move(s));
            } else {
                out.stills.push_back(std::move(s));
            }
        }
    }
    if (out.videos.empty() && out.stills.empty())
        throw ValidationError("no samples in the clip set");
    return out;
}

std::vector<Sample> all_frames(const SampleSet& data) {
    std::vector<Sample> out = data.videos;
    out.insert(out.end(), data.stills.begin(), data.stills.end());
    return out;
}

InputStats compute_input_stats(const SampleSet& data) {
    InputStats stats;
    stats.frame_std = {1.0, 1.0, 1.0};
    stats.flow_std = {1.0, 1.0, 1.0};

    auto accumulate = [](const std::vector<const Tensor*>& images, std::array<double, 3>& mean,
                         std::array<double, 3>& stddev) {
        if (images.empty()) return;
        std::array<double, 3> sum{}, sq{};
        std::int64_t per_channel = 0;
        for (const Tensor* img : images) {
            const int h = img->dim(2), w = img->dim(3);
            const auto d = img->data();
            for (int c = 0; c < 3; ++c)
                for (int i = 0; i < h * w; ++i) {
                    const double v = d[static_cast<std::size_t>(c) * h * w + i];
                    sum[c] += v;
                    sq[c] += v * v;
                }
            per_channel += static_cast<std::int64_t>(h) * w;
        }
        for (int c = 0; c < 3; ++c) {
            mean[c] = sum[c] / static_cast<double>(per_channel);
            const double var = sq[c] / static_cast<double>(per_channel) - mean[c] * mean[c];
            stddev[c] = std::max(std::sqrt(std::max(var, 0.0)), 1e-6);
        }
    };

    std::vector<const Tensor*> frames, flows;
    for (const Sample& s : data.videos) {
        frames.push_back(&s.frame);
        flows.push_back(&s.flow_image);
    }
    for (const Sample& s : data.stills) frames.push_back(&s.frame);
    accumulate(frames, stats.frame_mean, stats.frame_std);
    accumulate(flows, stats.flow_mean, stats.flow_std);
    return stats;
}

void apply_input_stats(Network& net, const InputStats& stats) {
    net.set_frame_stats({stats.frame_mean.begin(), stats.frame_mean.end()},
                        {stats.frame_std.begin(), stats.frame_std.end()});
    net.set_flow_stats({stats.flow_mean.begin(), stats.flow_mean.end()},
                       {stats.flow_std.begin(), stats.flow_std.end()});
}

void TrainingScheme::validate() const {
    if (pretrain_epochs < 0 || joint_epochs < 0) throw ValidationError("epochs must be >= 0");
    if (epoch_samples < 1) throw ValidationError("epoch_samples must be >= 1");
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (!(lr > 0.0)) throw ValidationError("lr must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ValidationError("weight_decay must be >= 0");
    if (!(still_ratio >= 0.0 && still_ratio <= 1.0))
        throw ValidationError("still_ratio must lie in [0, 1]");
}

const char* training_variant_name(TrainingScheme::Variant variant) {
    switch (variant) {
        case TrainingScheme::Variant::T0: return "t0";
        case TrainingScheme::Variant::Tm: return "tm";
        case TrainingScheme::Variant::Ta: return "ta";
        case TrainingScheme::Variant::Tma: return "tma";
    }
    throw ValidationError("unknown training variant");
}

TrainingScheme::Variant training_variant_from_name(const std::string& name) {
    if (name == "t0") return TrainingScheme::Variant::T0;
    if (name == "tm") return TrainingScheme::Variant::Tm;
    if (name == "ta") return TrainingScheme::Variant::Ta;
    if (name == "tma") return TrainingScheme::Variant::Tma;
    throw ValidationError("unknown training variant '" + name + "' (t0|tm|ta|tma)");
}

EpochLog pretrain_appearance(Network& net, const std::vector<Sample>& images,
                             const TrainingScheme& scheme) {
    auto loss_fn = [&net](const Sample& s) {
        return bce_loss(net.forward_appearance(s.frame).saliency, s.mask);
    };
    return run_epochs(images, prefix_parameters(net, "appearance."), scheme,
                      scheme.pretrain_epochs, kAppearanceStream, loss_fn);
}

EpochLog pretrain_motion(Network& net, const std::vector<Sample>& samples,
                         const TrainingScheme& scheme) {
    auto loss_fn = [&net](const Sample& s) {
        const Tensor target = s.flow_image.defined() ? s.mask : zero_like_mask(s);
        return bce_loss(net.forward_motion(motion_input(s)).saliency, target);
    };
    return run_epochs(samples, prefix_parameters(net, "motion."), scheme, scheme.pretrain_epochs,
                      kMotionStream, loss_fn);
}

EpochLog train_joint(Network& net, const SampleSet& data, const TrainingScheme& scheme,
                     const std::string& checkpoint_dir) {
    scheme.validate();
    if (data.videos.empty() && data.stills.empty())
        throw ValidationError("training sample set is empty");

    // The mixture can only draw from non-empty pools.
    double ratio = scheme.still_ratio;
    if (data.stills.empty()) ratio = 0.0;
    if (data.videos.empty()) ratio = 1.0;

    Rng mix_rng = Rng(scheme.seed).fork(kJointStream);
    const SgdConfig cfg{scheme.lr, scheme.momentum, scheme.weight_decay};
    const std::vector<Parameter*> params = net.parameters();

    std::optional<fs::path> dir;
    if (!checkpoint_dir.empty()) {
        dir = fs::path(checkpoint_dir);
        std::error_code ec;
        fs::create_directories(*dir, ec);
        if (ec) throw IoError("cannot create checkpoint directory " + checkpoint_dir);
    }

    auto sample_loss = [&net](const Sample& s, bool still) {
        const std::optional<Tensor> flow =
            still ? std::optional<Tensor>() : std::optional<Tensor>(s.flow_image);
        const JointTrace trace = net.forward_joint(s.frame, flow);
        const Tensor motion_target = still ? Tensor::zeros(s.mask.shape()) : s.mask;
        return elem_add(bce_loss(trace.saliency, s.mask),
                        bce_loss(trace.motion.saliency, motion_target));
    };

    EpochLog log;
    for (int epoch = 0; epoch < scheme.joint_epochs; ++epoch) {
        double epoch_sum = 0.0;
        for (int step = 0; step < scheme.epoch_samples; ++step) {
            double batch_sum = 0.0;
            for (int b = 0; b < scheme.batch_size; ++b) {
                const bool still = ratio > 0.0 && (ratio >= 1.0 || mix_rng.bernoulli(ratio));
                const auto& pool = still ? data.stills : data.videos;
                const Sample& s = pool[mix_rng.uniform_int(0, static_cast<int>(pool.size()) - 1)];
                Tensor loss = sample_loss(s, still);
                batch_sum += loss.value();
                scale(loss, 1.0 / scheme.batch_size).backward();
            }
            check_finite(batch_sum, epoch, step);
            sgd_step(params, cfg);
            epoch_sum += batch_sum / scheme.batch_size;
        }
        log.train.push_back(epoch_sum / scheme.epoch_samples);

        {
            NoGradGuard guard;
            double held_sum = 0.0;
            std::size_t count = 0;
            auto eval_pool = [&](const std::vector<Sample>& pool, bool still) {
                for (std::size_t i = 7; i < pool.size(); i += 8) {
                    held_sum += sample_loss(pool[i], still).value();
                    ++count;
                }
            };
            eval_pool(data.videos, false);
            eval_pool(data.stills, true);
            if (count == 0) {
                if (!data.videos.empty()) {
                    held_sum += sample_loss(data.videos.front(), false).value();
                } else {
                    held_sum += sample_loss(data.stills.front(), true).value();
                }
                count = 1;
            }
            log.held_out.push_back(held_sum / static_cast<double>(count));
        }

        if (dir) {
            char name[32];
            std::snprintf(name, sizeof name, "epoch_%03d.ckpt", epoch + 1);
            save_checkpoint((*dir / name).string(), net);
        }
    }
    if (dir) save_checkpoint((*dir / "final.ckpt").string(), net);
    return log;
}

SchemeLogs run_scheme(Network& net, const SampleSet& data, const TrainingScheme& scheme,
                      const std::string& checkpoint_dir) {
    scheme.validate();
    apply_input_stats(net, compute_input_stats(data));

    SchemeLogs logs;
    const bool wants_appearance = scheme.variant == TrainingScheme::Variant::Ta ||
                                  scheme.variant == TrainingScheme::Variant::Tma;
    const bool wants_motion = scheme.variant == TrainingScheme::Variant::Tm ||
                              scheme.variant == TrainingScheme::Variant::Tma;
    if (wants_appearance) logs.appearance = pretrain_appearance(net, all_frames(data), scheme);
    if (wants_motion) logs.motion = pretrain_motion(net, all_frames(data), scheme);
    logs.joint = train_joint(net, data, scheme, checkpoint_dir);
    return logs;
}

std::vector<NamedPrediction> predict_clips(Network& net,
                                           const std::vector<std::vector<VideoSample>>& clips,
                                           EvalPath path) {
    NoGradGuard guard;
    std::vector<NamedPrediction> out;
    for (std::size_t c = 0; c < clips.size(); ++c) {
        char seq[32];
        std::snprintf(seq, sizeof seq, "clip_%04zu", c);
        for (std::size_t t = 0; t < clips[c].size(); ++t) {
            const VideoSample& sample = clips[c][t];
            const Tensor frame = as_batch(sample.frame);
            Tensor pred;
            switch (path) {
                case EvalPath::AppearanceOnly:
                    pred = net.forward_appearance(frame).saliency;
                    break;
                case EvalPath::MotionOnly: {
                    const Tensor flow = t == 0 ? Tensor::zeros(frame.shape())
                                               : as_batch(sample.flow_image);
                    pred = net.forward_motion(flow).saliency;
                    break;
                }
                case EvalPath::Joint: {
                    const std::optional<Tensor> flow =
                        t == 0 ? std::optional<Tensor>()
                               : std::optional<Tensor>(as_batch(sample.flow_image));
                    pred = net.forward_joint(frame, flow).saliency;
                    break;
                }
            }
            NamedPrediction item;
            item.sequence = seq;
            item.frame = static_cast<int>(t);
            item.map = pred.reshaped({1, pred.dim(2), pred.dim(3)});
            out.push_back(std::move(item));
        }
    }
    return out;
}

MetricReport evaluate_network(Network& net, const std::vector<std::vector<VideoSample>>& clips,
                              EvalPath path) {
    const std::vector<NamedPrediction> preds = predict_clips(net, clips, path);
    std::vector<Tensor> maps, gts;
    std::vector<std::string> seqs;
    std::size_t i = 0;
    for (const auto& clip : clips)
        for (const auto& sample : clip) {
            maps.push_back(preds[i].map);
            gts.push_back(sample.mask);
            seqs.push_back(preds[i].sequence);
            ++i;
        }
    return evaluate_maps(maps, gts, seqs);
}

AblationVariant ablation_variant(const std::string& method) {
    using K = AttentionKind;
    if (method == "appearance") return {K::None, K::None, EvalPath::AppearanceOnly};
    if (method == "motion") return {K::None, K::None, EvalPath::MotionOnly};
    if (method == "mga-d") return {K::None, K::MgaM, EvalPath::Joint};
    if (method == "mga-e") return {K::MgaTmc, K::None, EvalPath::Joint};
    if (method == "full") return {K::MgaTmc, K::MgaM, EvalPath::Joint};
    if (method.rfind("e-", 0) == 0) {
        const AttentionKind kind = attention_kind_from_name(method.substr(2));
        if (kind == K::MgaM)
            throw ValidationError("encoder sites take feature tensors; there is no e-mga-m");
        return {kind, K::MgaM, EvalPath::Joint};
    }
    if (method.rfind("d-", 0) == 0)
        return {K::MgaTmc, attention_kind_from_name(method.substr(2)), EvalPath::Joint};
    throw ValidationError("unknown ablation method '" + method + "'");
}

std::vector<AblationRow> run_ablation(const AblationConfig& config, const SampleSet& train_data,
                                      const std::vector<std::vector<VideoSample>>& eval_clips) {
    if (config.suite.empty()) throw ValidationError("ablation suite is empty");
    if (config.seeds.empty()) throw ValidationError("ablation needs at least one seed");
    config.scheme.validate();
    if (eval_clips.empty()) throw ValidationError("ablation needs evaluation clips");

    // Resolve up front so a typo fails before any training starts.
    std::vector<AblationVariant> variants;
    for (const std::string& method : config.suite) variants.push_back(ablation_variant(method));

    const InputStats stats = compute_input_stats(train_data);
    const std::vector<Sample> frames = all_frames(train_data);

    // metric triples per de-duplicated configuration, one entry per seed
    std::map<std::string, std::array<std::vector<double>, 3>> results;

    for (std::size_t si = 0; si < config.seeds.size(); ++si) {
        const std::uint64_t seed = config.seeds[si];
        TrainingScheme scheme = config.scheme;
        scheme.seed = seed;

        // Both branches are pretrained once per seed and copied into every
        // variant; attention parameters stay at their fresh initialization.
        NetworkSpec donor_spec = config.base_spec;
        donor_spec.encoder_attention = AttentionKind::None;
        donor_spec.decoder_attention = AttentionKind::None;
        donor_spec.validate();
        Network donor(donor_spec, seed);
        apply_input_stats(donor, stats);
        pretrain_appearance(donor, frames, scheme);
        pretrain_motion(donor, frames, scheme);

        std::map<std::string, std::vector<double>> donor_state;
        for (const auto& entry : donor.state_entries())
            donor_state.emplace(entry.name,
                                std::vector<double>(entry.values, entry.values + entry.count));

        for (const AblationVariant& variant : variants) {
            // Equivalent configurations (e.g. full / e-mga-tmc / d-mga-m)
            // share one run per seed.
            auto& slot = results[variant_key(variant)];
            if (slot[0].size() > si) continue;

            NetworkSpec spec = config.base_spec;
            spec.encoder_attention = variant.encoder;
            spec.decoder_attention = variant.decoder;
            spec.validate();
            Network net(spec, seed);
            apply_input_stats(net, stats);
            for (auto& entry : net.state_entries()) {
                const bool branch = entry.name.rfind("appearance.", 0) == 0 ||
                                    entry.name.rfind("motion.", 0) == 0;
                if (!branch) continue;
                auto it = donor_state.find(entry.name);
                if (it != donor_state.end() && it->second.size() == entry.count)
                    std::copy(it->second.begin(), it->second.end(), entry.values);
            }

            if (variant.path == EvalPath::Joint) {
                train_joint(net, train_data, scheme);
            } else {
                TrainingScheme branch_scheme = scheme;
                branch_scheme.pretrain_epochs = scheme.joint_epochs;
                if (variant.path == EvalPath::AppearanceOnly)
                    pretrain_appearance(net, frames, branch_scheme);
                else
                    pretrain_motion(net, frames, branch_scheme);
            }

            const MetricReport report = evaluate_network(net, eval_clips, variant.path);
            slot[0].push_back(report.mae);
            slot[1].push_back(report.s_measure);
            slot[2].push_back(report.max_f);
        }
    }

    std::vector<AblationRow> rows;
    for (std::size_t i = 0; i < config.suite.size(); ++i) {
        const std::string key = variant_key(variants[i]);
        auto& slot = results[key];
        AblationRow row;
        row.method = config.suite[i];
        row.mae = median(slot[0]);
        row.s_measure = median(slot[1]);
        row.max_f = median(slot[2]);
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
    std::string text = "method,MAE,S-m,maxF\n";
    for (const AblationRow& row : rows)
        text += row.method + "," + format_value(row.mae) + "," + format_value(row.s_measure) +
                "," + format_value(row.max_f) + "\n";
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot open " + path + " for writing");
    const std::size_t written = std::fwrite(text.data(), 1, text.size(), f);
    std::fclose(f);
    if (written != text.size()) throw IoError("short write to " + path);
}

double median(std::vector<double> values) {
    if (values.empty()) throw ValidationError("median of an empty set");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace mga

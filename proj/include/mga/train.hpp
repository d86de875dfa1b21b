#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mga/metrics.hpp"
#include "mga/network.hpp"
#include "mga/synth.hpp"

namespace mga {

// One training sample. Still samples leave flow_image undefined; the motion
// branch then sees a zero-filled input and is supervised toward an empty map
// (a static scene has no salient motion).
struct Sample {
    Tensor frame;       // [1,3,H,W]
    Tensor flow_image;  // [1,3,H,W] or undefined
    Tensor mask;        // [1,1,H,W]
};

struct SampleSet {
    std::vector<Sample> videos;
    std::vector<Sample> stills;
};

// Frames with real flow become video samples; each clip's first frame (flow
// identically zero) becomes a still sample.
SampleSet build_samples(const std::vector<std::vector<VideoSample>>& clips);

// Video and still samples flattened into one image list (frame + mask).
std::vector<Sample> all_frames(const SampleSet& data);

// Per-channel input statistics over the training set, applied to the network
// so both branches see standardized inputs.
struct InputStats {
    std::array<double, 3> frame_mean{}, frame_std{}, flow_mean{}, flow_std{};
};
InputStats compute_input_stats(const SampleSet& data);
void apply_input_stats(Network& net, const InputStats& stats);

struct TrainingScheme {
    enum class Variant { T0, Tm, Ta, Tma };
    Variant variant = Variant::Tma;
    int pretrain_epochs = 4;
    int joint_epochs = 6;
    int epoch_samples = 96;  // optimizer draws per epoch
    int batch_size = 1;      // gradient accumulation; losses scaled by 1/batch
    double lr = 1e-2;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double still_ratio = 0.25;  // probability of drawing a still in the joint stage
    std::uint64_t seed = 0;
    void validate() const;
};

const char* training_variant_name(TrainingScheme::Variant variant);
TrainingScheme::Variant training_variant_from_name(const std::string& name);

// Mean training loss per epoch plus the loss on a small held-out slice
// (every eighth sample when the set is large enough).
struct EpochLog {
    std::vector<double> train, held_out;
};

// Branch pretraining: only the named branch's parameters receive updates.
// pretrain_motion feeds each sample's flow image (zero input for stills, with
// an all-zero target). Throws StateError on a non-finite loss.
EpochLog pretrain_appearance(Network& net, const std::vector<Sample>& images,
                             const TrainingScheme& scheme);
EpochLog pretrain_motion(Network& net, const std::vector<Sample>& samples,
                         const TrainingScheme& scheme);

// Joint stage: summed BCE of both heads on mixed still/video draws, all
// parameters trainable. Writes epoch_###.ckpt plus final.ckpt into
// checkpoint_dir when given.
EpochLog train_joint(Network& net, const SampleSet& data, const TrainingScheme& scheme,
                     const std::string& checkpoint_dir = {});

// Dispatch on scheme.variant: runs the requested pretraining stages, then the
// joint stage. Also computes and applies the input statistics.
struct SchemeLogs {
    EpochLog appearance, motion, joint;
};
SchemeLogs run_scheme(Network& net, const SampleSet& data, const TrainingScheme& scheme,
                      const std::string& checkpoint_dir = {});

// ---- evaluation over clips ----------------------------------------------

enum class EvalPath { Joint, AppearanceOnly, MotionOnly };

struct NamedPrediction {
    std::string sequence;
    int frame = 0;
    Tensor map;  // [1,H,W]
};

// Inference over every frame (first frames run with absent flow).
std::vector<NamedPrediction> predict_clips(Network& net,
                                           const std::vector<std::vector<VideoSample>>& clips,
                                           EvalPath path = EvalPath::Joint);

MetricReport evaluate_network(Network& net, const std::vector<std::vector<VideoSample>>& clips,
                              EvalPath path = EvalPath::Joint);

// ---- ablation suite ------------------------------------------------------

// Method names: appearance | motion | mga-d | mga-e | full |
// e-{concat,mul,add,mga-t,mga-tm,mga-tmc} | d-{concat,mul,add,mga-m}.
// e-* rows vary the encoder sites and keep the gated decoder; d-* rows vary
// the decoder site over the full encoder. full == e-mga-tmc == d-mga-m.
struct AblationVariant {
    AttentionKind encoder = AttentionKind::None;
    AttentionKind decoder = AttentionKind::None;
    EvalPath path = EvalPath::Joint;
};
AblationVariant ablation_variant(const std::string& method);

struct AblationRow {
    std::string method;
    double mae = 0.0, s_measure = 0.0, max_f = 0.0;
};

struct AblationConfig {
    std::vector<std::string> suite;  // row order is preserved
    std::vector<std::uint64_t> seeds;
    TrainingScheme scheme;   // shared budget; variant field is ignored
    NetworkSpec base_spec;   // attention kinds are overridden per method
};

// Trains every method under identical seeds and budgets and reports the
// per-seed median of each metric. Branches are pretrained once per seed and
// shared across methods; equivalent methods share their runs.
std::vector<AblationRow> run_ablation(const AblationConfig& config, const SampleSet& train_data,
                                      const std::vector<std::vector<VideoSample>>& eval_clips);

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows);

double median(std::vector<double> values);

}  // namespace mga

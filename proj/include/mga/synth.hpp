#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mga/rng.hpp"
#include "mga/tensor.hpp"

namespace mga {

// Synthetic video benchmark: textured shapes translating over a drifting
// textured background, with exact analytic flow, a rendered flow image and a
// ground-truth mask per frame. Everything is deterministic in the seed.

struct ClipParams {
    std::uint64_t seed = 0;
    int height = 64, width = 64;  // divisible by 8
    int frames = 8;
    int min_shapes = 1, max_shapes = 3;
    double min_size = 5.0, max_size = 12.0;   // shape half-extent, px
    double min_speed = 0.6, max_speed = 2.5;  // foreground px/frame
    double max_drift = 1.2;                   // background speed bound
    double noise_amplitude = 0.06;            // secondary texture harmonic
    double distractor_prob = 0.5;  // background-locked decoy object
    double pause_prob = 0.3;       // chance a shape briefly moves with the drift

    void validate() const;
};

enum class ShapeKind { Disc, Rectangle, LShape };

struct Vec2 {
    double x = 0.0, y = 0.0;
};

// Two sinusoidal harmonics over a base color, evaluated in surface-local
// coordinates so the pattern travels rigidly with its surface.
struct Texture {
    std::array<double, 3> base{0.5, 0.5, 0.5};
    std::array<double, 2> amp{};
    std::array<double, 2> wx{}, wy{};               // angular frequencies
    std::array<std::array<double, 2>, 3> phase{};   // per channel, per harmonic

    double value(int channel, double x, double y) const;
};

struct Surface {
    ShapeKind kind = ShapeKind::Disc;
    double size = 8.0;    // disc radius / half-width
    double aspect = 0.7;  // rectangle half-height = size * aspect
    Vec2 start{};         // center at frame 0
    Vec2 velocity{};      // px/frame while self-propelled
    bool moves_with_background = false;    // distractors are background-locked
    int pause_begin = -1, pause_end = -1;  // steps in [begin,end) follow the drift
    Texture texture{};

    double extent_x() const;
    double extent_y() const;
    bool contains(double lx, double ly) const;  // local (centered) coordinates
};

// Fully explicit scene; sample_scene draws one from ClipParams, tests may
// craft their own. surfaces[0..salient_count) are the mask-forming shapes and
// occlude the rest; lower indices render on top.
struct Scene {
    int height = 64, width = 64, frames = 8;
    Vec2 drift{};
    Texture background{};
    std::vector<Surface> surfaces;
    int salient_count = 0;
};

constexpr int kOwnerBackground = 0;  // owner ids: 0 background, s+1 for surfaces[s]

struct VideoSample {
    Tensor frame;       // [3,H,W] in [0,1]
    Tensor flow;        // [2,H,W] px displacement since the previous frame
    Tensor flow_image;  // [3,H,W] color-wheel rendering
    Tensor mask;        // [1,H,W] in {0,1}
    std::vector<int> owner;  // H*W surface ids; empty when read back from disk
};

Scene sample_scene(const ClipParams& params);
std::vector<VideoSample> render_scene(const Scene& scene);
std::vector<VideoSample> gen_clip(const ClipParams& params);

// Color-wheel rendering: hue from atan2(dy,dx), saturation from magnitude
// relative to max_magnitude (clip-wide when rendering clips), full value.
// Zero flow is white.
Tensor flow_to_color(const Tensor& flow, double max_magnitude);
Tensor flow_to_color(const Tensor& flow);

// Dataset layout: root/clip_%04d/{frame,flow,flowimg,mask}_%05d.{ppm,flo2,ppm,pgm}
void write_clip(const std::string& dir, const std::vector<VideoSample>& clip);
std::vector<VideoSample> read_clip(const std::string& dir);
void write_dataset(const std::vector<std::vector<VideoSample>>& clips,
                   const std::string& root);
std::vector<std::vector<VideoSample>> read_dataset(const std::string& root);

}  // namespace mga

#include "mga/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>

#include "mga/error.hpp"
#include "mga/image_io.hpp"

namespace mga {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kBorderMargin = 2.0;

// Flow values are serialized as f32; snapping at generation time keeps the
// in-memory tensors bit-identical to a disk round trip.
double snap_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

Texture draw_texture(Rng& rng, bool muted, double noise_amp) {
    Texture t;
    for (int c = 0; c < 3; ++c) {
        if (muted)
            t.base[c] = rng.uniform(0.38, 0.62);
        else
            t.base[c] = rng.bernoulli(0.5) ? rng.uniform(0.78, 1.0) : rng.uniform(0.0, 0.22);
    }
    t.amp[0] = rng.uniform(0.08, 0.15);
    t.amp[1] = noise_amp * rng.uniform(0.5, 1.0);
    for (int k = 0; k < 2; ++k) {
        const double wavelength = rng.uniform(14.0, 28.0);
        const double theta = rng.uniform(0.0, kTwoPi);
        const double w = kTwoPi / wavelength;
        t.wx[k] = w * std::cos(theta);
        t.wy[k] = w * std::sin(theta);
    }
    for (int c = 0; c < 3; ++c)
        for (int k = 0; k < 2; ++k) t.phase[c][k] = rng.uniform(0.0, kTwoPi);
    return t;
}

double circumradius(const Surface& s) { return std::hypot(s.extent_x(), s.extent_y()); }

Surface draw_surface(Rng& rng, const ClipParams& p, bool distractor,
                     const std::vector<Surface>& placed, const Vec2& drift) {
    Surface s;
    s.kind = static_cast<ShapeKind>(rng.uniform_int(0, 2));
    s.size = rng.uniform(p.min_size, p.max_size);
    s.aspect = rng.uniform(0.55, 0.9);
    s.moves_with_background = distractor;
    s.texture = draw_texture(rng, false, p.noise_amplitude);

    double lo_x = s.extent_x() + kBorderMargin, hi_x = p.width - s.extent_x() - kBorderMargin;
    double lo_y = s.extent_y() + kBorderMargin, hi_y = p.height - s.extent_y() - kBorderMargin;
    if (distractor) {
        // keep the decoy on screen while it rides the drift
        const double travel = static_cast<double>(p.frames - 1);
        lo_x += std::max(0.0, -drift.x * travel);
        hi_x -= std::max(0.0, drift.x * travel);
        lo_y += std::max(0.0, -drift.y * travel);
        hi_y -= std::max(0.0, drift.y * travel);
        lo_x = std::min(lo_x, hi_x);
        lo_y = std::min(lo_y, hi_y);
        for (int attempt = 0; attempt < 20; ++attempt) {
            s.start = {rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)};
            bool clear = true;
            for (const Surface& other : placed) {
                const double gap = std::hypot(s.start.x - other.start.x,
                                              s.start.y - other.start.y);
                if (gap < circumradius(s) + circumradius(other)) clear = false;
            }
            if (clear) break;
        }
        return s;
    }

    s.start = {rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)};
    const double speed = rng.uniform(p.min_speed, p.max_speed);
    const double ang = rng.uniform(0.0, kTwoPi);
    s.velocity = {speed * std::cos(ang), speed * std::sin(ang)};
    if (p.frames >= 4 && rng.bernoulli(p.pause_prob)) {
        s.pause_begin = rng.uniform_int(1, p.frames - 2);
        const int len = rng.uniform_int(1, std::max(1, (p.frames - 1) / 3));
        s.pause_end = std::min(p.frames, s.pause_begin + len);
    }
    return s;
}

void hsv_to_rgb(double hue_deg, double sat, double* rgb) {
    const double hp = hue_deg / 60.0;
    const int sector = static_cast<int>(hp) % 6;
    const double f = hp - std::floor(hp);
    const double p = 1.0 - sat;
    const double q = 1.0 - sat * f;
    const double t = 1.0 - sat * (1.0 - f);
    switch (sector) {
        case 0: rgb[0] = 1.0; rgb[1] = t; rgb[2] = p; break;
        case 1: rgb[0] = q; rgb[1] = 1.0; rgb[2] = p; break;
        case 2: rgb[0] = p; rgb[1] = 1.0; rgb[2] = t; break;
        case 3: rgb[0] = p; rgb[1] = q; rgb[2] = 1.0; break;
        case 4: rgb[0] = t; rgb[1] = p; rgb[2] = 1.0; break;
        default: rgb[0] = 1.0; rgb[1] = p; rgb[2] = q; break;
    }
}

std::string frame_name(const char* stem, int t, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%05d.%s", stem, t, ext);
    return buf;
}

}  // namespace

void ClipParams::validate() const {
    if (height <= 0 || width <= 0 || height % 8 != 0 || width % 8 != 0)
        throw ValidationError("clip resolution must be positive and divisible by 8");
    if (frames < 1) throw ValidationError("frames must be >= 1");
    if (min_shapes < 1 || max_shapes > 3 || min_shapes > max_shapes)
        throw ValidationError("shape count range must lie within [1,3]");
    if (min_size < 3.0 || min_size > max_size)
        throw ValidationError("shape sizes must satisfy 3 <= min_size <= max_size");
    const double side = std::min(height, width);
    if (2.0 * (max_size + kBorderMargin) > side)
        throw ValidationError("shape larger than the frame: max_size " +
                              std::to_string(max_size) + " cannot keep a " +
                              std::to_string(kBorderMargin) + " px border inside " +
                              std::to_string(static_cast<int>(side)) + " px");
    if (min_speed < 0.0 || min_speed > max_speed || max_speed > side / 8.0)
        throw ValidationError("foreground speeds must satisfy 0 <= min <= max <= side/8");
    if (max_drift < 0.0 || max_drift > side / 8.0)
        throw ValidationError("background drift bound must lie in [0, side/8]");
    if (noise_amplitude < 0.0 || noise_amplitude > 0.15)
        throw ValidationError("noise amplitude must lie in [0, 0.15]");
    if (distractor_prob < 0.0 || distractor_prob > 1.0 || pause_prob < 0.0 || pause_prob > 1.0)
        throw ValidationError("probabilities must lie in [0,1]");
}

double Texture::value(int channel, double x, double y) const {
    double v = base[channel];
    for (int k = 0; k < 2; ++k)
        v += amp[k] * std::sin(x * wx[k] + y * wy[k] + phase[channel][k]);
    return std::clamp(v, 0.0, 1.0);
}

double Surface::extent_x() const { return size; }

double Surface::extent_y() const {
    return kind == ShapeKind::Rectangle ? size * aspect : size;
}

bool Surface::contains(double lx, double ly) const {
    switch (kind) {
        case ShapeKind::Disc:
            return lx * lx + ly * ly <= size * size;
        case ShapeKind::Rectangle:
            return std::abs(lx) <= size && std::abs(ly) <= size * aspect;
        case ShapeKind::LShape:
            return std::abs(lx) <= size && std::abs(ly) <= size && !(lx > 0.0 && ly > 0.0);
    }
    return false;
}

Scene sample_scene(const ClipParams& params) {
    params.validate();
    Rng rng(params.seed);
    Scene sc;
    sc.height = params.height;
    sc.width = params.width;
    sc.frames = params.frames;

    const double drift_mag = rng.uniform(0.0, params.max_drift);
    const double drift_ang = rng.uniform(0.0, kTwoPi);
    sc.drift = {drift_mag * std::cos(drift_ang), drift_mag * std::sin(drift_ang)};
    sc.background = draw_texture(rng, true, params.noise_amplitude);

    const int n = rng.uniform_int(params.min_shapes, params.max_shapes);
    for (int s = 0; s < n; ++s)
        sc.surfaces.push_back(draw_surface(rng, params, false, sc.surfaces, sc.drift));
    sc.salient_count = n;
    if (rng.bernoulli(params.distractor_prob))
        sc.surfaces.push_back(draw_surface(rng, params, true, sc.surfaces, sc.drift));
    return sc;
}

std::vector<VideoSample> render_scene(const Scene& scene) {
    const int H = scene.height, W = scene.width, T = scene.frames;
    if (H < 8 || W < 8) throw ValidationError("scene resolution must be at least 8x8");
    if (T < 1) throw ValidationError("scene must have at least one frame");
    if (scene.salient_count < 0 ||
        scene.salient_count > static_cast<int>(scene.surfaces.size()))
        throw ValidationError("salient_count out of range");

    const int S = static_cast<int>(scene.surfaces.size());
    std::vector<std::vector<Vec2>> pos(S), disp(S);
    for (int s = 0; s < S; ++s) {
        const Surface& sf = scene.surfaces[s];
        const double lo_x = sf.extent_x() + kBorderMargin;
        const double hi_x = W - sf.extent_x() - kBorderMargin;
        const double lo_y = sf.extent_y() + kBorderMargin;
        const double hi_y = H - sf.extent_y() - kBorderMargin;
        if (lo_x > hi_x || lo_y > hi_y)
            throw ValidationError("shape larger than the frame: a " +
                                  std::to_string(sf.size) + " px surface cannot keep a " +
                                  std::to_string(kBorderMargin) + " px border inside " +
                                  std::to_string(W) + "x" + std::to_string(H));
        pos[s].assign(T, sf.start);
        disp[s].assign(T, Vec2{});
        Vec2 vel = sf.velocity;
        for (int t = 1; t < T; ++t) {
            const Vec2 prev = pos[s][t - 1];
            const bool with_bg = sf.moves_with_background ||
                                 (sf.pause_begin <= t && t < sf.pause_end);
            Vec2 next;
            if (with_bg) {
                next = {prev.x + scene.drift.x, prev.y + scene.drift.y};
                disp[s][t] = scene.drift;  // exactly the background displacement
            } else {
                auto reflect = [](double v, double lo, double hi, double& component) {
                    while (v < lo || v > hi) {
                        if (v < lo) {
                            v = 2.0 * lo - v;
                            component = -component;
                        } else {
                            v = 2.0 * hi - v;
                            component = -component;
                        }
                    }
                    return v;
                };
                next = {reflect(prev.x + vel.x, lo_x, hi_x, vel.x),
                        reflect(prev.y + vel.y, lo_y, hi_y, vel.y)};
                disp[s][t] = {next.x - prev.x, next.y - prev.y};
            }
            pos[s][t] = next;
        }
    }

    const std::size_t hw = static_cast<std::size_t>(H) * W;
    std::vector<VideoSample> out(static_cast<std::size_t>(T));
    double max_mag = 0.0;
    for (int t = 0; t < T; ++t) {
        std::vector<double> frame(3 * hw), flow(2 * hw, 0.0), mask(hw, 0.0);
        std::vector<int> owner(hw, kOwnerBackground);
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                const std::size_t idx = static_cast<std::size_t>(i) * W + j;
                const double px = j + 0.5, py = i + 0.5;
                int own = -1;
                double lx = 0.0, ly = 0.0;
                for (int s = 0; s < S; ++s) {
                    const double cx = px - pos[s][t].x, cy = py - pos[s][t].y;
                    if (scene.surfaces[s].contains(cx, cy)) {
                        own = s;
                        lx = cx;
                        ly = cy;
                        break;
                    }
                }
                owner[idx] = own + 1;
                for (int c = 0; c < 3; ++c)
                    frame[c * hw + idx] =
                        own >= 0 ? scene.surfaces[own].texture.value(c, lx, ly)
                                 : scene.background.value(c, px - scene.drift.x * t,
                                                          py - scene.drift.y * t);
                if (own >= 0 && own < scene.salient_count) mask[idx] = 1.0;
                if (t > 0) {
                    const Vec2 d = own >= 0 ? disp[own][t] : scene.drift;
                    flow[idx] = snap_f32(d.x);
                    flow[hw + idx] = snap_f32(d.y);
                    max_mag = std::max(max_mag, std::hypot(flow[idx], flow[hw + idx]));
                }
            }
        out[t].frame = Tensor::from_data({3, H, W}, std::move(frame));
        out[t].flow = Tensor::from_data({2, H, W}, std::move(flow));
        out[t].mask = Tensor::from_data({1, H, W}, std::move(mask));
        out[t].owner = std::move(owner);
    }
    for (int t = 0; t < T; ++t) out[t].flow_image = flow_to_color(out[t].flow, max_mag);
    return out;
}

std::vector<VideoSample> gen_clip(const ClipParams& params) {
    return render_scene(sample_scene(params));
}

Tensor flow_to_color(const Tensor& flow, double max_magnitude) {
    if (flow.ndim() != 3 || flow.dim(0) != 2)
        throw ValidationError("flow_to_color expects a [2,H,W] tensor");
    const int h = flow.dim(1), w = flow.dim(2);
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    const double floor_mag = std::max(max_magnitude, 1e-6);
    const auto f = flow.data();
    std::vector<double> rgb(3 * hw);
    for (std::size_t i = 0; i < hw; ++i) {
        const double dx = f[i], dy = f[hw + i];
        const double mag = std::hypot(dx, dy);
        const double sat = std::min(1.0, mag / floor_mag);
        double hue = std::atan2(dy, dx) * (180.0 / std::numbers::pi);
        if (hue < 0.0) hue += 360.0;
        double px[3];
        hsv_to_rgb(hue, sat, px);
        for (int c = 0; c < 3; ++c) rgb[c * hw + i] = px[c];
    }
    return Tensor::from_data({3, h, w}, std::move(rgb));
}

Tensor flow_to_color(const Tensor& flow) {
    if (flow.ndim() != 3 || flow.dim(0) != 2)
        throw ValidationError("flow_to_color expects a [2,H,W] tensor");
    double max_mag = 0.0;
    const auto f = flow.data();
    const std::size_t hw = f.size() / 2;
    for (std::size_t i = 0; i < hw; ++i)
        max_mag = std::max(max_mag, std::hypot(f[i], f[hw + i]));
    return flow_to_color(flow, max_mag);
}

void write_clip(const std::string& dir, const std::vector<VideoSample>& clip) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
    for (std::size_t t = 0; t < clip.size(); ++t) {
        const int ti = static_cast<int>(t);
        write_ppm(dir + "/" + frame_name("frame", ti, "ppm"), clip[t].frame);
        write_flo2(dir + "/" + frame_name("flow", ti, "flo2"), clip[t].flow);
        write_ppm(dir + "/" + frame_name("flowimg", ti, "ppm"), clip[t].flow_image);
        write_pgm(dir + "/" + frame_name("mask", ti, "pgm"), clip[t].mask);
    }
}

std::vector<VideoSample> read_clip(const std::string& dir) {
    std::vector<VideoSample> clip;
    for (int t = 0;; ++t) {
        const std::string frame_path = dir + "/" + frame_name("frame", t, "ppm");
        if (!std::filesystem::exists(frame_path)) break;
        VideoSample s;
        s.frame = read_ppm(frame_path);
        s.flow = read_flo2(dir + "/" + frame_name("flow", t, "flo2"));
        s.flow_image = read_ppm(dir + "/" + frame_name("flowimg", t, "ppm"));
        s.mask = read_pgm(dir + "/" + frame_name("mask", t, "pgm"));
        clip.push_back(std::move(s));
    }
    if (clip.empty()) throw IoError(dir + ": no frames found");
    return clip;
}

void write_dataset(const std::vector<std::vector<VideoSample>>& clips,
                   const std::string& root) {
    std::error_code ec;
    std::filesystem::create_directories(root, ec);
    if (ec) throw IoError("cannot create " + root + ": " + ec.message());
    for (std::size_t k = 0; k < clips.size(); ++k) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "clip_%04d", static_cast<int>(k));
        write_clip(root + "/" + buf, clips[k]);
    }
}

std::vector<std::vector<VideoSample>> read_dataset(const std::string& root) {
    std::vector<std::vector<VideoSample>> clips;
    for (int k = 0;; ++k) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "clip_%04d", k);
        const std::string dir = root + "/" + buf;
        if (!std::filesystem::is_directory(dir)) break;
        clips.push_back(read_clip(dir));
    }
    if (clips.empty()) throw IoError(root + ": no clips found");
    return clips;
}

}  // namespace mga

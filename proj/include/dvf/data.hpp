#pragma once

// Synthetic scene rendering, triplet assembly, and image/video I/O.
//
// Videos are (L, C, H, W) tensors in [-1, 1]; frame l occupies a contiguous
// C*H*W block, matching the DVFV file layout. Rendered intensities pass
// through u8 quantization so that a written PGM/PPM is exactly the tensor.

#include "dvf/tensor.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dvf {

// ---------------------------------------------------------------------------
// Pixel value mapping: u8 [0,255] <-> normalized [-1,1]
// ---------------------------------------------------------------------------

inline float normalize_u8(uint8_t v) { return float(v) / 127.5f - 1.0f; }

/// Clamps to [0,255] and rounds half away from zero upward (floor(x+0.5)).
inline uint8_t denormalize_u8(float v) {
    float u = (v + 1.0f) * 127.5f;
    u = std::clamp(u, 0.0f, 255.0f);
    return static_cast<uint8_t>(std::floor(u + 0.5f));
}

/// Interleaved 8-bit image; c is 1 (gray) or 3 (rgb), rows top to bottom.
struct ImageU8 {
    int h = 0, w = 0, c = 1;
    std::vector<uint8_t> pixels;  // h*w*c bytes, channel-interleaved

    uint8_t at(int y, int x, int ch = 0) const { return pixels[(size_t(y) * w + x) * c + ch]; }
};

/// Interleaved u8 image -> planar (C,H,W) tensor in [-1,1].
inline Tensor normalize(const ImageU8& img) {
    if (img.c != 1 && img.c != 3) throw std::invalid_argument("normalize: channels must be 1 or 3");
    if (img.h < 1 || img.w < 1 || img.pixels.size() != size_t(img.h) * img.w * img.c)
        throw std::invalid_argument("normalize: image extents do not match pixel buffer");
    Tensor t({img.c, img.h, img.w});
    for (int ch = 0; ch < img.c; ++ch)
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x)
                t(ch, y, x) = normalize_u8(img.at(y, x, ch));
    return t;
}

/// Planar (C,H,W) tensor in [-1,1] -> interleaved u8 image (clamped, rounded).
inline ImageU8 denormalize(const Tensor& t) {
    if (t.rank() != 3 || (t.extent(0) != 1 && t.extent(0) != 3))
        throw std::invalid_argument("denormalize: expected (C,H,W) with C in {1,3}, got " + t.shape_string());
    ImageU8 img;
    img.c = t.extent(0);
    img.h = t.extent(1);
    img.w = t.extent(2);
    img.pixels.resize(size_t(img.h) * img.w * img.c);
    for (int ch = 0; ch < img.c; ++ch)
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x)
                img.pixels[(size_t(y) * img.w + x) * img.c + ch] = denormalize_u8(t(ch, y, x));
    return img;
}

/// Normalized [-1,1] -> [0,1] through the u8 quantizer, so metric inputs match
/// what a written image file holds.
inline Tensor to_unit(const Tensor& normalized) {
    Tensor out(normalized.shape());
    for (int i = 0; i < normalized.size(); ++i)
        out[i] = float(denormalize_u8(normalized[i])) / 255.0f;
    return out;
}

// ---------------------------------------------------------------------------
// Video tensor helpers
// ---------------------------------------------------------------------------

inline void check_video_shape(const Tensor& video, const char* what) {
    if (video.rank() != 4)
        throw std::invalid_argument(std::string(what) + ": expected (L,C,H,W) video, got " + video.shape_string());
}

/// Copies frame l of a (L,C,H,W) video into a (C,H,W) tensor.
inline Tensor frame_slice(const Tensor& video, int l) {
    check_video_shape(video, "frame_slice");
    if (l < 0 || l >= video.extent(0))
        throw std::invalid_argument("frame_slice: frame " + std::to_string(l) + " out of range");
    const int c = video.extent(1), h = video.extent(2), w = video.extent(3);
    Tensor out({c, h, w});
    std::memcpy(out.data(), video.data() + size_t(l) * out.size(), size_t(out.size()) * 4);
    return out;
}

/// Stacks equally shaped (C,H,W) frames into a (L,C,H,W) video.
inline Tensor stack_frames(const std::vector<Tensor>& frames) {
    if (frames.empty()) throw std::invalid_argument("stack_frames: no frames");
    const Tensor& f0 = frames.front();
    if (f0.rank() != 3) throw std::invalid_argument("stack_frames: frames must be (C,H,W)");
    Tensor out({int(frames.size()), f0.extent(0), f0.extent(1), f0.extent(2)});
    for (size_t l = 0; l < frames.size(); ++l) {
        require_same_shape(frames[l], f0, "stack_frames");
        std::memcpy(out.data() + l * f0.size(), frames[l].data(), size_t(f0.size()) * 4);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Scenes: moving sprites over a static background, rendered with sub-pixel
// accuracy so the ground-truth flow equals the sprite velocity exactly.
// ---------------------------------------------------------------------------

enum class BackgroundKind { flat, gradient, checker };
enum class SpriteKind { square, disk, textured };

struct Sprite {
    SpriteKind kind = SpriteKind::square;
    float size = 8.0f;          // edge length (square/textured) or diameter (disk)
    float x = 0.0f, y = 0.0f;   // center position at frame 0, pixel units
    float vx = 0.0f, vy = 0.0f; // velocity, pixels per frame (may be fractional)
    float intensity = 1.0f;     // peak brightness in [0,1]
};

struct SceneSpec {
    int height = 32, width = 32;
    int channels = 1;  // 1 or 3
    BackgroundKind background = BackgroundKind::flat;
    std::vector<Sprite> sprites;
    int frames = 3;
    uint64_t seed = 0;

    void validate() const {
        if (height < 1 || width < 1) throw std::invalid_argument("scene: canvas extents must be positive");
        if (channels != 1 && channels != 3) throw std::invalid_argument("scene: channels must be 1 or 3");
        if (frames < 3)
            throw std::invalid_argument("scene: frame count must be at least 3 (two inputs plus a target), got " +
                                        std::to_string(frames));
        for (const Sprite& s : sprites) {
            if (!(s.size > 0.0f)) throw std::invalid_argument("scene: sprite size must be positive");
            if (!std::isfinite(s.x) || !std::isfinite(s.y) || !std::isfinite(s.vx) || !std::isfinite(s.vy))
                throw std::invalid_argument("scene: sprite position and velocity must be finite");
        }
    }
};

struct RenderedScene {
    Tensor video;               // (L,C,H,W) in [-1,1]
    std::vector<Tensor> flow;   // per frame (2,H,W): (vx,vy) inside sprite support, 0 elsewhere
    uint64_t seed = 0;          // echo of the spec seed; dataset splits key off it
};

namespace detail {

// Fraction of the unit pixel footprint [p-0.5, p+0.5] covered by [lo, hi].
inline float span_coverage(float p, float lo, float hi) {
    return std::clamp(std::min(p + 0.5f, hi) - std::max(p - 0.5f, lo), 0.0f, 1.0f);
}

struct SpriteAppearance {
    std::vector<float> color;    // per channel
    std::vector<float> texture;  // textured only: tex_n * tex_n * channels
    int tex_n = 0;
};

inline float texel(const SpriteAppearance& a, int ch, float u, float v) {
    // Bilinear sample of the sprite-local texture; u,v in texel units. tex_n >= 2.
    const int n = a.tex_n;
    u = std::clamp(u, 0.0f, float(n - 1));
    v = std::clamp(v, 0.0f, float(n - 1));
    int u0 = std::min(int(u), n - 2), v0 = std::min(int(v), n - 2);
    float fu = u - u0, fv = v - v0;
    auto tx = [&](int vy, int vx) { return a.texture[size_t(ch) * n * n + size_t(vy) * n + vx]; };
    return (1 - fv) * ((1 - fu) * tx(v0, u0) + fu * tx(v0, u0 + 1)) +
           fv * ((1 - fu) * tx(v0 + 1, u0) + fu * tx(v0 + 1, u0 + 1));
}

} // namespace detail

/// Renders the scene. Backgrounds are static; each sprite moves with constant
/// velocity and is drawn with analytic pixel coverage, so frame l is a faithful
/// point-sampling of the same continuous scene translated by l*v. Ground-truth
/// flow holds the sprite velocity at pixels whose center lies inside the shape.
inline RenderedScene render_scene(const SceneSpec& spec) {
    spec.validate();
    const int H = spec.height, W = spec.width, C = spec.channels, L = spec.frames;
    std::mt19937 rng(static_cast<uint32_t>(spec.seed ^ (spec.seed >> 32)));
    auto uni = [&](float lo, float hi) { return std::uniform_real_distribution<float>(lo, hi)(rng); };

    // Background parameters, drawn first so sprite draws don't disturb them.
    float bg_a = 0.0f, bg_b = 0.0f;
    int bg_px = 0, bg_py = 0;
    switch (spec.background) {
        case BackgroundKind::flat: bg_a = uni(0.15f, 0.35f); break;
        case BackgroundKind::gradient:
            bg_a = uni(0.10f, 0.25f);
            bg_b = uni(0.35f, 0.50f);
            break;
        case BackgroundKind::checker:
            bg_a = uni(0.10f, 0.20f);
            bg_b = bg_a + uni(0.15f, 0.25f);
            bg_px = int(rng() % 8);
            bg_py = int(rng() % 8);
            break;
    }
    auto background = [&](int y, int x) -> float {
        switch (spec.background) {
            case BackgroundKind::flat: return bg_a;
            case BackgroundKind::gradient: {
                float tx = W > 1 ? float(x) / float(W - 1) : 0.0f;
                float ty = H > 1 ? float(y) / float(H - 1) : 0.0f;
                return bg_a + (bg_b - bg_a) * 0.5f * (tx + ty);
            }
            case BackgroundKind::checker:
                return (((x + bg_px) / 8 + (y + bg_py) / 8) % 2) ? bg_b : bg_a;
        }
        return 0.0f;
    };

    // Per-sprite appearance (after background draws, in sprite order).
    std::vector<detail::SpriteAppearance> looks(spec.sprites.size());
    for (size_t s = 0; s < spec.sprites.size(); ++s) {
        const Sprite& sp = spec.sprites[s];
        looks[s].color.resize(C);
        for (int ch = 0; ch < C; ++ch)
            looks[s].color[ch] = C == 1 ? sp.intensity : sp.intensity * uni(0.6f, 1.0f);
        if (sp.kind == SpriteKind::textured) {
            int n = std::max(2, int(std::lround(sp.size)));
            looks[s].tex_n = n;
            looks[s].texture.resize(size_t(n) * n * C);
            for (float& t : looks[s].texture) t = sp.intensity * uni(0.2f, 1.0f);
        }
    }

    RenderedScene out;
    out.seed = spec.seed;
    out.video = Tensor({L, C, H, W});
    out.flow.reserve(L);
    std::vector<float> px(C);
    for (int l = 0; l < L; ++l) {
        Tensor flow({2, H, W});
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                float bg = background(y, x);
                for (int ch = 0; ch < C; ++ch) px[ch] = bg;
                for (size_t s = 0; s < spec.sprites.size(); ++s) {
                    const Sprite& sp = spec.sprites[s];
                    const float cx = sp.x + float(l) * sp.vx;
                    const float cy = sp.y + float(l) * sp.vy;
                    const float half = sp.size * 0.5f;
                    float cov = 0.0f;
                    bool inside = false;
                    if (sp.kind == SpriteKind::disk) {
                        float d = std::hypot(float(x) - cx, float(y) - cy);
                        cov = std::clamp(half + 0.5f - d, 0.0f, 1.0f);
                        inside = d <= half;
                    } else {
                        cov = detail::span_coverage(float(x), cx - half, cx + half) *
                              detail::span_coverage(float(y), cy - half, cy + half);
                        inside = std::abs(float(x) - cx) <= half && std::abs(float(y) - cy) <= half;
                    }
                    if (cov > 0.0f) {
                        for (int ch = 0; ch < C; ++ch) {
                            float v = looks[s].color[ch];
                            if (sp.kind == SpriteKind::textured) {
                                float scale = float(looks[s].tex_n) / sp.size;
                                float u = (float(x) - (cx - half)) * scale - 0.5f;
                                float w = (float(y) - (cy - half)) * scale - 0.5f;
                                v = detail::texel(looks[s], ch, u, w);
                            }
                            px[ch] += cov * (v - px[ch]);
                        }
                    }
                    if (inside) {
                        flow(0, y, x) = sp.vx;
                        flow(1, y, x) = sp.vy;
                    }
                }
                for (int ch = 0; ch < C; ++ch) {
                    uint8_t q = denormalize_u8(std::clamp(px[ch], 0.0f, 1.0f) * 2.0f - 1.0f);
                    out.video(l, ch, y, x) = normalize_u8(q);
                }
            }
        }
        out.flow.push_back(std::move(flow));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Triplet assembly
// ---------------------------------------------------------------------------

enum class SynthesisMode { interpolation, extrapolation };

inline const char* mode_name(SynthesisMode m) {
    return m == SynthesisMode::interpolation ? "interp" : "extrap";
}

/// One training/eval sample. Inputs are two frames stacked on the channel
/// axis; targets are the 1 (interpolation) or `steps` (extrapolation) frames
/// to synthesize. gt_flow, when present, is the per-pixel displacement from
/// the first input frame to the second, on the synthesis grid.
struct TripletSample {
    Tensor input;    // (2*C, H, W)
    Tensor target;   // (steps*C, H, W)
    SynthesisMode mode = SynthesisMode::interpolation;
    int channels = 1;  // per frame
    int steps = 1;     // target frame count
    Tensor gt_flow;    // (2,H,W) or empty when unknown
};

/// Picks frames out of a (L,C,H,W) video: interpolation uses inputs
/// (index, index+2) with target index+1; extrapolation uses inputs
/// (index, index+1) with targets index+2 .. index+1+steps.
inline TripletSample make_triplet(const Tensor& video, int index, SynthesisMode mode, int steps = 1) {
    check_video_shape(video, "make_triplet");
    const int L = video.extent(0), C = video.extent(1), H = video.extent(2), W = video.extent(3);
    if (mode == SynthesisMode::interpolation && steps != 1)
        throw std::invalid_argument("make_triplet: interpolation synthesizes exactly one frame");
    if (steps < 1) throw std::invalid_argument("make_triplet: steps must be >= 1");
    const int last = mode == SynthesisMode::interpolation ? index + 2 : index + 1 + steps;
    if (index < 0 || last > L - 1)
        throw std::invalid_argument("make_triplet: frames " + std::to_string(index) + ".." + std::to_string(last) +
                                    " out of range for " + std::to_string(L) + "-frame video");

    TripletSample t;
    t.mode = mode;
    t.channels = C;
    t.steps = mode == SynthesisMode::interpolation ? 1 : steps;
    const int in_b = mode == SynthesisMode::interpolation ? index + 2 : index + 1;
    const size_t fsz = size_t(C) * H * W;
    t.input = Tensor({2 * C, H, W});
    std::memcpy(t.input.data(), video.data() + size_t(index) * fsz, fsz * 4);
    std::memcpy(t.input.data() + fsz, video.data() + size_t(in_b) * fsz, fsz * 4);
    t.target = Tensor({t.steps * C, H, W});
    const int first_target = mode == SynthesisMode::interpolation ? index + 1 : index + 2;
    for (int k = 0; k < t.steps; ++k)
        std::memcpy(t.target.data() + size_t(k) * fsz, video.data() + size_t(first_target + k) * fsz, fsz * 4);
    return t;
}

/// Same, with ground truth attached: input0->input1 displacement sampled at
/// the first synthesized frame, i.e. (input gap) * velocity at its sprite
/// pixels. The gap is 2 for interpolation and 1 for extrapolation.
inline TripletSample make_triplet(const RenderedScene& scene, int index, SynthesisMode mode, int steps = 1) {
    TripletSample t = make_triplet(scene.video, index, mode, steps);
    if (scene.flow.empty()) return t;  // no ground truth attached
    const int synth = mode == SynthesisMode::interpolation ? index + 1 : index + 2;
    const float gap = mode == SynthesisMode::interpolation ? 2.0f : 1.0f;
    t.gt_flow = scene.flow.at(synth);
    for (int i = 0; i < t.gt_flow.size(); ++i) t.gt_flow[i] *= gap;
    return t;
}

/// Mean absolute difference between the two input frames, in normalized
/// units; samples below the threshold carry too little motion to train on.
inline bool has_obvious_motion(const TripletSample& t, float threshold = 0.02f) {
    const size_t fsz = size_t(t.input.size()) / 2;
    double acc = 0.0;
    for (size_t i = 0; i < fsz; ++i) acc += std::abs(double(t.input[i + fsz]) - double(t.input[i]));
    return acc / double(fsz) >= threshold;
}

// ---------------------------------------------------------------------------
// Randomized scene corpus
// ---------------------------------------------------------------------------

struct CorpusOptions {
    int height = 32, width = 32;
    int frames = 3;
    int channels = 1;
    float min_speed = 1.0f, max_speed = 3.0f;
    int min_sprites = 1, max_sprites = 2;
};

/// Draws a scene with randomized background, sprite shapes, sizes, sub-pixel
/// start positions and velocities. Trajectories are centered on the canvas so
/// sprites stay mostly visible across all frames.
inline SceneSpec random_scene_spec(std::mt19937& rng, const CorpusOptions& opt) {
    auto uni = [&](float lo, float hi) { return std::uniform_real_distribution<float>(lo, hi)(rng); };
    SceneSpec spec;
    spec.height = opt.height;
    spec.width = opt.width;
    spec.channels = opt.channels;
    spec.frames = opt.frames;
    spec.background = static_cast<BackgroundKind>(rng() % 3);
    spec.seed = rng();
    const int n = opt.min_sprites + int(rng() % uint32_t(opt.max_sprites - opt.min_sprites + 1));
    const float dim = float(std::min(opt.height, opt.width));
    for (int s = 0; s < n; ++s) {
        Sprite sp;
        sp.kind = static_cast<SpriteKind>(rng() % 3);
        sp.size = uni(0.20f, 0.40f) * dim;
        const float speed = uni(opt.min_speed, opt.max_speed);
        const float angle = uni(0.0f, 6.2831853f);
        sp.vx = speed * std::cos(angle);
        sp.vy = speed * std::sin(angle);
        // Center of the whole trajectory lands near the canvas center.
        const float mid = 0.5f * float(opt.frames - 1);
        sp.x = uni(0.35f, 0.65f) * float(opt.width) - mid * sp.vx;
        sp.y = uni(0.35f, 0.65f) * float(opt.height) - mid * sp.vy;
        sp.intensity = uni(0.7f, 1.0f);
        spec.sprites.push_back(sp);
    }
    return spec;
}

// ---------------------------------------------------------------------------
// PPM (P6) / PGM (P5) images
// ---------------------------------------------------------------------------

namespace detail {

[[noreturn]] inline void ppm_error(size_t offset, const std::string& what) {
    throw std::runtime_error("ppm parse error at byte offset " + std::to_string(offset) + ": " + what);
}

inline void ppm_skip_space(const std::string& buf, size_t& pos) {
    while (pos < buf.size()) {
        if (std::isspace(static_cast<unsigned char>(buf[pos]))) {
            ++pos;
        } else if (buf[pos] == '#') {
            while (pos < buf.size() && buf[pos] != '\n') ++pos;
        } else {
            return;
        }
    }
}

inline int ppm_int(const std::string& buf, size_t& pos, const char* what) {
    ppm_skip_space(buf, pos);
    if (pos >= buf.size() || !std::isdigit(static_cast<unsigned char>(buf[pos])))
        ppm_error(pos, std::string("expected ") + what);
    long v = 0;
    size_t start = pos;
    while (pos < buf.size() && std::isdigit(static_cast<unsigned char>(buf[pos]))) {
        v = v * 10 + (buf[pos] - '0');
        if (v > (1 << 28)) ppm_error(start, std::string(what) + " out of range");
        ++pos;
    }
    return static_cast<int>(v);
}

inline std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return std::move(ss).str();
}

} // namespace detail

inline void write_ppm(const std::string& path, const ImageU8& img) {
    if (img.c != 1 && img.c != 3) throw std::invalid_argument("write_ppm: channels must be 1 or 3");
    if (img.h < 1 || img.w < 1 || img.pixels.size() != size_t(img.h) * img.w * img.c)
        throw std::invalid_argument("write_ppm: image extents do not match pixel buffer");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << (img.c == 3 ? "P6" : "P5") << "\n" << img.w << " " << img.h << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.pixels.data()), std::streamsize(img.pixels.size()));
    if (!os) throw std::runtime_error("write failed: " + path);
}

/// Reads binary PPM (P6) or PGM (P5) with maxval 255.
inline ImageU8 read_ppm(const std::string& path) {
    const std::string buf = detail::slurp(path);
    if (buf.size() < 2 || buf[0] != 'P' || (buf[1] != '5' && buf[1] != '6'))
        detail::ppm_error(0, "bad magic (expected P5 or P6)");
    ImageU8 img;
    img.c = buf[1] == '6' ? 3 : 1;
    size_t pos = 2;
    img.w = detail::ppm_int(buf, pos, "width");
    img.h = detail::ppm_int(buf, pos, "height");
    if (img.w < 1 || img.h < 1) detail::ppm_error(2, "extents must be positive");
    size_t maxval_at = pos;
    int maxval = detail::ppm_int(buf, pos, "maxval");
    if (maxval != 255) detail::ppm_error(maxval_at, "maxval must be 255, got " + std::to_string(maxval));
    if (pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[pos])))
        detail::ppm_error(pos, "expected single whitespace before pixel data");
    ++pos;
    const size_t need = size_t(img.h) * img.w * img.c;
    if (buf.size() - pos < need)
        detail::ppm_error(buf.size(), "truncated pixel data (need " + std::to_string(need) + " bytes, have " +
                                          std::to_string(buf.size() - pos) + ")");
    img.pixels.assign(buf.begin() + pos, buf.begin() + pos + need);
    return img;
}

// ---------------------------------------------------------------------------
// DVFV video files: "DVFV" magic, u32 LE height, width, frame count, channel
// count, then frame-major float32 LE samples in [-1,1].
// ---------------------------------------------------------------------------

inline void write_video(const std::string& path, const Tensor& video) {
    check_video_shape(video, "write_video");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os.write("DVFV", 4);
    detail::write_u32(os, uint32_t(video.extent(2)));
    detail::write_u32(os, uint32_t(video.extent(3)));
    detail::write_u32(os, uint32_t(video.extent(0)));
    detail::write_u32(os, uint32_t(video.extent(1)));
    os.write(reinterpret_cast<const char*>(video.data()), std::streamsize(video.size()) * 4);
    if (!os) throw std::runtime_error("write failed: " + path);
}

inline Tensor read_video(const std::string& path) {
    const std::string buf = detail::slurp(path);
    auto fail = [&](size_t offset, const std::string& what) {
        throw std::runtime_error(path + ": video parse error at byte offset " + std::to_string(offset) + ": " + what);
    };
    if (buf.size() < 4 || std::memcmp(buf.data(), "DVFV", 4) != 0)
        fail(0, "bad magic (expected \"DVFV\")");
    if (buf.size() < 20) fail(buf.size(), "truncated header");
    uint32_t dims[4];  // H, W, L, C
    std::memcpy(dims, buf.data() + 4, 16);
    for (int i = 0; i < 4; ++i) {
        static const char* names[] = {"height", "width", "frame count", "channel count"};
        if (dims[i] == 0 || dims[i] > (1u << 24))
            fail(4 + 4 * size_t(i), std::string("bad ") + names[i] + " " + std::to_string(dims[i]));
    }
    if (dims[3] != 1 && dims[3] != 3) fail(16, "channel count must be 1 or 3, got " + std::to_string(dims[3]));
    const size_t count = size_t(dims[0]) * dims[1] * dims[2] * dims[3];
    if (count > (size_t(1) << 30)) fail(4, "video extents too large");
    if (buf.size() - 20 < count * 4)
        fail(buf.size(), "truncated frame data (need " + std::to_string(count * 4) + " bytes, have " +
                             std::to_string(buf.size() - 20) + ")");
    Tensor video({int(dims[2]), int(dims[3]), int(dims[0]), int(dims[1])});
    std::memcpy(video.data(), buf.data() + 20, count * 4);
    return video;
}

// ---------------------------------------------------------------------------
// Manifests: newline-separated relative paths.
// ---------------------------------------------------------------------------

inline void write_manifest(const std::string& path, const std::vector<std::string>& entries) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    for (const std::string& e : entries) os << e << "\n";
    if (!os) throw std::runtime_error("write failed: " + path);
}

inline std::vector<std::string> read_manifest(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    std::vector<std::string> entries;
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) entries.push_back(line);
    }
    return entries;
}

} // namespace dvf

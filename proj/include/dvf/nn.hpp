#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "dvf/tensor.hpp"

namespace dvf {

/// A learnable tensor with its gradient and Adam moment buffers.
/// The four tensors always share one shape.
struct ParamTensor {
    Tensor value, grad, adam_m, adam_v;

    void reset(std::vector<int> shape) {
        value = Tensor(shape);
        grad = Tensor(shape);
        adam_m = Tensor(shape);
        adam_v = Tensor(shape);
    }

    int64_t size() const { return value.size(); }
};

/// Parameters of one convolution layer, optionally with batch normalization.
struct LayerParams {
    ParamTensor weights;  // (out_channels, in_channels, k, k)
    ParamTensor bias;     // (out_channels)

    bool has_bn = false;
    ParamTensor gamma, beta;          // (channels)
    Tensor running_mean, running_var; // (channels), updated in train mode

    void reset_conv(int out_channels, int in_channels, int k) {
        weights.reset({out_channels, in_channels, k, k});
        bias.reset({out_channels});
    }

    void reset_bn(int channels) {
        has_bn = true;
        gamma.reset({channels});
        beta.reset({channels});
        gamma.value.fill(1.0f);
        running_mean = Tensor({channels});
        running_var = Tensor::full({channels}, 1.0f);
    }
};

struct AdamState {
    int64_t step_count = 0;
    float lr = 1e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps_adam = 1e-8f;

    void validate() const {
        if (!(beta1 >= 0.0f && beta1 < 1.0f) || !(beta2 >= 0.0f && beta2 < 1.0f))
            throw std::invalid_argument("adam betas must lie in [0, 1)");
        if (!(lr > 0.0f) || !(eps_adam > 0.0f))
            throw std::invalid_argument("adam lr and eps must be positive");
    }
};

inline constexpr float kBatchNormEps = 1e-5f;
inline constexpr float kBatchNormMomentum = 0.9f;

namespace detail {

// Strip-mined dot product: fixed summation order, independent lanes so the
// compiler can vectorize without reassociating.
inline float dot_lanes(const float* __restrict a, const float* __restrict b, int n) {
    constexpr int L = 16;
    float lanes[L] = {};
    int x = 0;
    for (; x + L <= n; x += L)
        for (int j = 0; j < L; ++j) lanes[j] += a[x + j] * b[x + j];
    float tail = 0.0f;
    for (; x < n; ++x) tail += a[x] * b[x];
    float sum = tail;
    for (int j = 0; j < L; ++j) sum += lanes[j];
    return sum;
}

inline void require_4d(const Tensor& t, const char* what) {
    if (t.rank() != 4)
        throw std::invalid_argument(std::string(what) + ": expected a 4-D tensor, got " + t.shape_string());
}

} // namespace detail

// ---------------------------------------------------------------------------
// conv2d: stride 1, odd square kernel, "same" zero padding.
// ---------------------------------------------------------------------------

inline void conv2d_check(const Tensor& input, const LayerParams& p) {
    detail::require_4d(input, "conv2d input");
    detail::require_4d(p.weights.value, "conv2d weights");
    const int k = p.weights.value.extent(2);
    if (k != p.weights.value.extent(3) || k % 2 == 0)
        throw std::invalid_argument("conv2d kernel must be square with odd side, got " +
                                    p.weights.value.shape_string());
    if (input.extent(1) != p.weights.value.extent(1))
        throw std::invalid_argument("conv2d channel mismatch: input " + input.shape_string() +
                                    " vs weights " + p.weights.value.shape_string());
}

inline Tensor conv2d_forward(const Tensor& input, const LayerParams& p) {
    conv2d_check(input, p);
    const int B = input.extent(0), Cin = input.extent(1), H = input.extent(2), W = input.extent(3);
    const int Cout = p.weights.value.extent(0), k = p.weights.value.extent(2), pad = k / 2;
    Tensor out({B, Cout, H, W});
    const float* __restrict in = input.data();
    const float* __restrict w = p.weights.value.data();
    const float* __restrict bias = p.bias.value.data();
    float* __restrict o = out.data();
    const int64_t plane = int64_t(H) * W;
    for (int b = 0; b < B; ++b) {
        for (int co = 0; co < Cout; ++co) {
            float* ob = o + (int64_t(b) * Cout + co) * plane;
            const float bv = bias[co];
            for (int64_t i = 0; i < plane; ++i) ob[i] = bv;
            for (int ci = 0; ci < Cin; ++ci) {
                const float* ib = in + (int64_t(b) * Cin + ci) * plane;
                const float* wb = w + (int64_t(co) * Cin + ci) * k * k;
                for (int dy = 0; dy < k; ++dy) {
                    const int y0 = std::max(0, pad - dy), y1 = std::min(H, H + pad - dy);
                    for (int dx = 0; dx < k; ++dx) {
                        const float wv = wb[dy * k + dx];
                        const int x0 = std::max(0, pad - dx), x1 = std::min(W, W + pad - dx);
                        for (int y = y0; y < y1; ++y) {
                            float* __restrict orow = ob + int64_t(y) * W;
                            const float* __restrict irow = ib + int64_t(y + dy - pad) * W + (dx - pad);
                            for (int x = x0; x < x1; ++x) orow[x] += wv * irow[x];
                        }
                    }
                }
            }
        }
    }
    return out;
}

/// Accumulates weight/bias gradients into `p` and returns the input gradient.
inline Tensor conv2d_backward(const Tensor& input, LayerParams& p, const Tensor& upstream) {
    conv2d_check(input, p);
    const int B = input.extent(0), Cin = input.extent(1), H = input.extent(2), W = input.extent(3);
    const int Cout = p.weights.value.extent(0), k = p.weights.value.extent(2), pad = k / 2;
    if (upstream.shape() != std::vector<int>{B, Cout, H, W})
        throw std::invalid_argument("conv2d upstream gradient has shape " + upstream.shape_string() +
                                    ", expected (" + std::to_string(B) + "x" + std::to_string(Cout) + "x" +
                                    std::to_string(H) + "x" + std::to_string(W) + ")");
    const float* __restrict in = input.data();
    const float* __restrict w = p.weights.value.data();
    const float* __restrict g = upstream.data();
    const int64_t plane = int64_t(H) * W;

    // bias gradient
    for (int co = 0; co < Cout; ++co) {
        float acc = 0.0f;
        for (int b = 0; b < B; ++b) {
            const float* gb = g + (int64_t(b) * Cout + co) * plane;
            for (int64_t i = 0; i < plane; ++i) acc += gb[i];
        }
        p.bias.grad[co] += acc;
    }

    // weight gradient
    float* gw = p.weights.grad.data();
    for (int co = 0; co < Cout; ++co) {
        for (int ci = 0; ci < Cin; ++ci) {
            for (int dy = 0; dy < k; ++dy) {
                const int y0 = std::max(0, pad - dy), y1 = std::min(H, H + pad - dy);
                for (int dx = 0; dx < k; ++dx) {
                    const int x0 = std::max(0, pad - dx), x1 = std::min(W, W + pad - dx);
                    float acc = 0.0f;
                    for (int b = 0; b < B; ++b) {
                        const float* ib = in + (int64_t(b) * Cin + ci) * plane;
                        const float* gb = g + (int64_t(b) * Cout + co) * plane;
                        for (int y = y0; y < y1; ++y) {
                            const float* irow = ib + int64_t(y + dy - pad) * W + (dx - pad);
                            const float* grow = gb + int64_t(y) * W;
                            acc += detail::dot_lanes(irow + x0, grow + x0, x1 - x0);
                        }
                    }
                    gw[((int64_t(co) * Cin + ci) * k + dy) * k + dx] += acc;
                }
            }
        }
    }

    // input gradient
    Tensor gin({B, Cin, H, W});
    float* __restrict gi = gin.data();
    for (int b = 0; b < B; ++b) {
        for (int ci = 0; ci < Cin; ++ci) {
            float* gib = gi + (int64_t(b) * Cin + ci) * plane;
            for (int co = 0; co < Cout; ++co) {
                const float* gb = g + (int64_t(b) * Cout + co) * plane;
                const float* wb = w + (int64_t(co) * Cin + ci) * k * k;
                for (int dy = 0; dy < k; ++dy) {
                    // iy receives from output row y = iy - dy + pad
                    const int iy0 = std::max(0, dy - pad), iy1 = std::min(H, H + dy - pad);
                    for (int dx = 0; dx < k; ++dx) {
                        const float wv = wb[dy * k + dx];
                        const int ix0 = std::max(0, dx - pad), ix1 = std::min(W, W + dx - pad);
                        for (int iy = iy0; iy < iy1; ++iy) {
                            float* __restrict girow = gib + int64_t(iy) * W;
                            const float* __restrict grow = gb + int64_t(iy - dy + pad) * W - (dx - pad);
                            for (int ix = ix0; ix < ix1; ++ix) girow[ix] += wv * grow[ix];
                        }
                    }
                }
            }
        }
    }
    return gin;
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2. Ties go to the first element in scan order.
// ---------------------------------------------------------------------------

struct MaxPoolCache {
    std::vector<int> in_shape;
    std::vector<int64_t> argmax; // flat input index per output cell
};

inline Tensor maxpool2_forward(const Tensor& input, MaxPoolCache* cache = nullptr) {
    detail::require_4d(input, "maxpool2 input");
    const int B = input.extent(0), C = input.extent(1), H = input.extent(2), W = input.extent(3);
    if (H % 2 != 0 || W % 2 != 0)
        throw std::invalid_argument("maxpool2 requires even spatial extents, got " + input.shape_string());
    const int Ho = H / 2, Wo = W / 2;
    Tensor out({B, C, Ho, Wo});
    if (cache) {
        cache->in_shape = input.shape();
        cache->argmax.assign(static_cast<size_t>(out.size()), 0);
    }
    const float* in = input.data();
    float* o = out.data();
    int64_t oi = 0;
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const int64_t base = (int64_t(b) * C + c) * H * W;
            for (int y = 0; y < Ho; ++y)
                for (int x = 0; x < Wo; ++x, ++oi) {
                    int64_t best_idx = base + int64_t(2 * y) * W + 2 * x;
                    float best = in[best_idx];
                    const int64_t cand[3] = {base + int64_t(2 * y) * W + 2 * x + 1,
                                             base + int64_t(2 * y + 1) * W + 2 * x,
                                             base + int64_t(2 * y + 1) * W + 2 * x + 1};
                    for (int64_t idx : cand)
                        if (in[idx] > best) { best = in[idx]; best_idx = idx; }
                    o[oi] = best;
                    if (cache) cache->argmax[static_cast<size_t>(oi)] = best_idx;
                }
        }
    return out;
}

inline Tensor maxpool2_backward(const MaxPoolCache& cache, const Tensor& upstream) {
    Tensor gin(cache.in_shape);
    if (upstream.size() != static_cast<int64_t>(cache.argmax.size()))
        throw std::invalid_argument("maxpool2 upstream size does not match cached forward");
    float* gi = gin.data();
    const float* g = upstream.data();
    for (int64_t i = 0; i < upstream.size(); ++i) gi[cache.argmax[static_cast<size_t>(i)]] += g[i];
    return gin;
}

// ---------------------------------------------------------------------------
// Bilinear 2x upsampling with align-corners mapping: output index i samples
// input coordinate i * (in - 1) / (out - 1). Backward is the exact transpose.
// ---------------------------------------------------------------------------

namespace detail {

struct LerpTap {
    int i0, i1;
    float w1; // weight on i1; i0 gets (1 - w1)
};

inline std::vector<LerpTap> align_corners_taps(int in, int out) {
    std::vector<LerpTap> taps(static_cast<size_t>(out));
    const float scale = out > 1 ? float(in - 1) / float(out - 1) : 0.0f;
    for (int i = 0; i < out; ++i) {
        const float c = i * scale;
        int i0 = static_cast<int>(std::floor(c));
        if (i0 > in - 1) i0 = in - 1;
        const int i1 = std::min(i0 + 1, in - 1);
        taps[static_cast<size_t>(i)] = {i0, i1, c - float(i0)};
    }
    return taps;
}

} // namespace detail

inline Tensor upsample_bilinear2x_forward(const Tensor& input) {
    detail::require_4d(input, "upsample input");
    const int B = input.extent(0), C = input.extent(1), H = input.extent(2), W = input.extent(3);
    const int Ho = 2 * H, Wo = 2 * W;
    const auto ty = detail::align_corners_taps(H, Ho);
    const auto tx = detail::align_corners_taps(W, Wo);
    Tensor out({B, C, Ho, Wo});
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const int64_t ibase = (int64_t(b) * C + c) * H * W;
            const float* in = input.data() + ibase;
            float* o = out.data() + (int64_t(b) * C + c) * Ho * Wo;
            for (int y = 0; y < Ho; ++y) {
                const auto& ry = ty[static_cast<size_t>(y)];
                const float* r0 = in + int64_t(ry.i0) * W;
                const float* r1 = in + int64_t(ry.i1) * W;
                float* orow = o + int64_t(y) * Wo;
                for (int x = 0; x < Wo; ++x) {
                    const auto& rx = tx[static_cast<size_t>(x)];
                    const float top = r0[rx.i0] * (1.0f - rx.w1) + r0[rx.i1] * rx.w1;
                    const float bot = r1[rx.i0] * (1.0f - rx.w1) + r1[rx.i1] * rx.w1;
                    orow[x] = top * (1.0f - ry.w1) + bot * ry.w1;
                }
            }
        }
    return out;
}

inline Tensor upsample_bilinear2x_backward(const Tensor& upstream, int in_h, int in_w) {
    detail::require_4d(upstream, "upsample upstream");
    const int B = upstream.extent(0), C = upstream.extent(1), Ho = upstream.extent(2), Wo = upstream.extent(3);
    if (Ho != 2 * in_h || Wo != 2 * in_w)
        throw std::invalid_argument("upsample backward: upstream " + upstream.shape_string() +
                                    " is not 2x the input extents");
    const auto ty = detail::align_corners_taps(in_h, Ho);
    const auto tx = detail::align_corners_taps(in_w, Wo);
    Tensor gin({B, C, in_h, in_w});
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            float* gi = gin.data() + (int64_t(b) * C + c) * in_h * in_w;
            const float* g = upstream.data() + (int64_t(b) * C + c) * Ho * Wo;
            for (int y = 0; y < Ho; ++y) {
                const auto& ry = ty[static_cast<size_t>(y)];
                for (int x = 0; x < Wo; ++x) {
                    const auto& rx = tx[static_cast<size_t>(x)];
                    const float gv = g[int64_t(y) * Wo + x];
                    gi[int64_t(ry.i0) * in_w + rx.i0] += gv * (1.0f - ry.w1) * (1.0f - rx.w1);
                    gi[int64_t(ry.i0) * in_w + rx.i1] += gv * (1.0f - ry.w1) * rx.w1;
                    gi[int64_t(ry.i1) * in_w + rx.i0] += gv * ry.w1 * (1.0f - rx.w1);
                    gi[int64_t(ry.i1) * in_w + rx.i1] += gv * ry.w1 * rx.w1;
                }
            }
        }
    return gin;
}

/// 2x2 mean pooling, used to build image pyramids. Data path only, no backward.
inline Tensor downsample2x_mean(const Tensor& input) {
    detail::require_4d(input, "downsample input");
    const int B = input.extent(0), C = input.extent(1), H = input.extent(2), W = input.extent(3);
    if (H % 2 != 0 || W % 2 != 0)
        throw std::invalid_argument("downsample2x requires even spatial extents, got " + input.shape_string());
    Tensor out({B, C, H / 2, W / 2});
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H / 2; ++y)
                for (int x = 0; x < W / 2; ++x) {
                    const float s = input.at(b, c, 2 * y, 2 * x) + input.at(b, c, 2 * y, 2 * x + 1) +
                                    input.at(b, c, 2 * y + 1, 2 * x) + input.at(b, c, 2 * y + 1, 2 * x + 1);
                    out.at(b, c, y, x) = 0.25f * s;
                }
    return out;
}

// ---------------------------------------------------------------------------
// Channel concatenation. A default-constructed (empty) tensor acts as the
// zero-channel operand.
// ---------------------------------------------------------------------------

inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (b.rank() == 0) return a;
    if (a.rank() == 0) return b;
    detail::require_4d(a, "concat lhs");
    detail::require_4d(b, "concat rhs");
    if (a.extent(0) != b.extent(0) || a.extent(2) != b.extent(2) || a.extent(3) != b.extent(3))
        throw std::invalid_argument("concat: batch/spatial mismatch " + a.shape_string() + " vs " +
                                    b.shape_string());
    const int B = a.extent(0), Ca = a.extent(1), Cb = b.extent(1), H = a.extent(2), W = a.extent(3);
    Tensor out({B, Ca + Cb, H, W});
    const int64_t plane = int64_t(H) * W;
    for (int bi = 0; bi < B; ++bi) {
        std::memcpy(out.data() + out.offset4(bi, 0, 0, 0), a.data() + (int64_t(bi) * Ca) * plane,
                    static_cast<size_t>(Ca * plane) * 4);
        std::memcpy(out.data() + out.offset4(bi, Ca, 0, 0), b.data() + (int64_t(bi) * Cb) * plane,
                    static_cast<size_t>(Cb * plane) * 4);
    }
    return out;
}

/// Backward of concat_channels: splits the upstream gradient at channel `ca`.
inline std::pair<Tensor, Tensor> split_channels(const Tensor& upstream, int ca) {
    detail::require_4d(upstream, "split input");
    const int B = upstream.extent(0), C = upstream.extent(1), H = upstream.extent(2), W = upstream.extent(3);
    if (ca < 0 || ca > C) throw std::invalid_argument("split point out of range");
    const int cb = C - ca;
    Tensor a({B, std::max(ca, 1), H, W}), b({B, std::max(cb, 1), H, W});
    if (ca == 0) a = Tensor();
    if (cb == 0) b = Tensor();
    const int64_t plane = int64_t(H) * W;
    for (int bi = 0; bi < B; ++bi) {
        if (ca > 0)
            std::memcpy(a.data() + (int64_t(bi) * ca) * plane, upstream.data() + upstream.offset4(bi, 0, 0, 0),
                        static_cast<size_t>(ca * plane) * 4);
        if (cb > 0)
            std::memcpy(b.data() + (int64_t(bi) * cb) * plane, upstream.data() + upstream.offset4(bi, ca, 0, 0),
                        static_cast<size_t>(cb * plane) * 4);
    }
    return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------------------
// Elementwise activations.
// ---------------------------------------------------------------------------

enum class Activation { relu, tanh, none };

inline Tensor activation_forward(const Tensor& x, Activation kind) {
    Tensor y = x;
    float* d = y.data();
    switch (kind) {
    case Activation::relu:
        for (int64_t i = 0; i < y.size(); ++i) d[i] = d[i] > 0.0f ? d[i] : 0.0f;
        break;
    case Activation::tanh:
        for (int64_t i = 0; i < y.size(); ++i) d[i] = std::tanh(d[i]);
        break;
    case Activation::none:
        break;
    }
    return y;
}

/// Backward from the forward *output*: relu uses the sign of the output,
/// tanh uses 1 - y^2.
inline Tensor activation_backward(const Tensor& output, const Tensor& upstream, Activation kind) {
    require_same_shape(output, upstream, "activation backward");
    Tensor gin = upstream;
    float* g = gin.data();
    const float* y = output.data();
    switch (kind) {
    case Activation::relu:
        for (int64_t i = 0; i < gin.size(); ++i)
            if (y[i] <= 0.0f) g[i] = 0.0f;
        break;
    case Activation::tanh:
        for (int64_t i = 0; i < gin.size(); ++i) g[i] *= 1.0f - y[i] * y[i];
        break;
    case Activation::none:
        break;
    }
    return gin;
}

// ---------------------------------------------------------------------------
// Batch normalization over (batch, height, width) per channel.
// ---------------------------------------------------------------------------

struct BatchNormCache {
    bool train = true;
    Tensor x_hat;
    std::vector<float> inv_std; // per channel, of the statistics used
};

inline Tensor batchnorm_forward(const Tensor& input, LayerParams& p, bool train,
                                BatchNormCache* cache = nullptr) {
    detail::require_4d(input, "batchnorm input");
    if (!p.has_bn) throw std::invalid_argument("batchnorm called on a layer without bn parameters");
    const int B = input.extent(0), C = input.extent(1), H = input.extent(2), W = input.extent(3);
    if (C != p.gamma.value.extent(0))
        throw std::invalid_argument("batchnorm channel mismatch: input " + input.shape_string());
    if (train && B < 2)
        throw std::invalid_argument("batchnorm train mode requires batch size >= 2, got " + std::to_string(B));

    const int64_t n = int64_t(B) * H * W;
    Tensor out({B, C, H, W});
    if (cache) {
        cache->train = train;
        cache->x_hat = Tensor({B, C, H, W});
        cache->inv_std.assign(static_cast<size_t>(C), 0.0f);
    }
    for (int c = 0; c < C; ++c) {
        float mean, var;
        if (train) {
            float s = 0.0f;
            for (int b = 0; b < B; ++b)
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < W; ++x) s += input.at(b, c, y, x);
            mean = s / float(n);
            float sq = 0.0f;
            for (int b = 0; b < B; ++b)
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < W; ++x) {
                        const float d = input.at(b, c, y, x) - mean;
                        sq += d * d;
                    }
            var = sq / float(n); // biased, used for normalization
            const float unbiased = n > 1 ? sq / float(n - 1) : var;
            p.running_mean[c] = kBatchNormMomentum * p.running_mean[c] + (1.0f - kBatchNormMomentum) * mean;
            p.running_var[c] = kBatchNormMomentum * p.running_var[c] + (1.0f - kBatchNormMomentum) * unbiased;
        } else {
            mean = p.running_mean[c];
            var = p.running_var[c];
        }
        const float inv_std = 1.0f / std::sqrt(var + kBatchNormEps);
        if (cache) cache->inv_std[static_cast<size_t>(c)] = inv_std;
        const float gm = p.gamma.value[c], bt = p.beta.value[c];
        for (int b = 0; b < B; ++b)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    const float xh = (input.at(b, c, y, x) - mean) * inv_std;
                    if (cache) cache->x_hat.at(b, c, y, x) = xh;
                    out.at(b, c, y, x) = gm * xh + bt;
                }
    }
    return out;
}

/// Full batch-norm gradient, including the dependence of the batch statistics
/// on the input. Accumulates gamma/beta gradients into `p`.
inline Tensor batchnorm_backward(const Tensor& upstream, LayerParams& p, const BatchNormCache& cache) {
    const Tensor& xh = cache.x_hat;
    require_same_shape(xh, upstream, "batchnorm backward");
    const int B = xh.extent(0), C = xh.extent(1), H = xh.extent(2), W = xh.extent(3);
    const int64_t n = int64_t(B) * H * W;
    Tensor gin({B, C, H, W});
    for (int c = 0; c < C; ++c) {
        float sum_dy = 0.0f, sum_dy_xh = 0.0f;
        for (int b = 0; b < B; ++b)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    const float dy = upstream.at(b, c, y, x);
                    sum_dy += dy;
                    sum_dy_xh += dy * xh.at(b, c, y, x);
                }
        p.beta.grad[c] += sum_dy;
        p.gamma.grad[c] += sum_dy_xh;
        const float gm = p.gamma.value[c];
        const float inv_std = cache.inv_std[static_cast<size_t>(c)];
        if (cache.train) {
            const float mean_dy = sum_dy / float(n);
            const float mean_dy_xh = sum_dy_xh / float(n);
            for (int b = 0; b < B; ++b)
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < W; ++x)
                        gin.at(b, c, y, x) = gm * inv_std *
                                             (upstream.at(b, c, y, x) - mean_dy -
                                              xh.at(b, c, y, x) * mean_dy_xh);
        } else {
            for (int b = 0; b < B; ++b)
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < W; ++x) gin.at(b, c, y, x) = gm * inv_std * upstream.at(b, c, y, x);
        }
    }
    return gin;
}

// ---------------------------------------------------------------------------
// Adam.
// ---------------------------------------------------------------------------

/// One bias-corrected Adam update over every listed parameter; increments the
/// step count and zeroes the gradients.
inline void adam_step(const std::vector<ParamTensor*>& params, AdamState& state) {
    state.validate();
    const int64_t t = state.step_count + 1;
    const float corr1 = 1.0f - std::pow(state.beta1, float(t));
    const float corr2 = 1.0f - std::pow(state.beta2, float(t));
    for (ParamTensor* p : params) {
        float* x = p->value.data();
        float* g = p->grad.data();
        float* m = p->adam_m.data();
        float* v = p->adam_v.data();
        const int64_t nn = p->size();
        for (int64_t i = 0; i < nn; ++i) {
            m[i] = state.beta1 * m[i] + (1.0f - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0f - state.beta2) * g[i] * g[i];
            const float mhat = m[i] / corr1;
            const float vhat = v[i] / corr2;
            x[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps_adam);
            g[i] = 0.0f;
        }
    }
    state.step_count = t;
}

// ---------------------------------------------------------------------------
// Initialization.
// ---------------------------------------------------------------------------

inline void gaussian_fill(Tensor& t, float stddev, std::mt19937_64& rng) {
    if (stddev == 0.0f) {
        t.fill(0.0f);
        return;
    }
    std::normal_distribution<float> dist(0.0f, stddev);
    for (int64_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
}

/// Gaussian weights, zero biases; batch-norm affine stays at gamma=1, beta=0.
inline void gaussian_init(LayerParams& p, float stddev, std::mt19937_64& rng) {
    gaussian_fill(p.weights.value, stddev, rng);
    p.bias.value.fill(0.0f);
    if (p.has_bn) {
        p.gamma.value.fill(1.0f);
        p.beta.value.fill(0.0f);
        p.running_mean.fill(0.0f);
        p.running_var.fill(1.0f);
    }
}

inline void gaussian_init(LayerParams& p, float stddev, uint64_t seed) {
    std::mt19937_64 rng(seed);
    gaussian_init(p, stddev, rng);
}

} // namespace dvf

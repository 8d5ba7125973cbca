#pragma once

#include <array>
#include <random>
#include <string>
#include <vector>

#include "dvf/nn.hpp"
#include "dvf/sampler.hpp"
#include "dvf/tensor.hpp"

namespace dvf {

struct NetworkConfig {
    int input_frames = 2;        // frames packed into the input channels
    int channels_per_frame = 1;  // 1 = grayscale, 3 = RGB
    std::array<int, 3> enc_kernels = {5, 5, 3};
    std::array<int, 3> dec_kernels = {3, 5, 5};
    // Desk-scale widths; (32, 64, 128) with bottleneck 256 is the full-size
    // configuration but is ~15x slower per step on one core.
    std::array<int, 3> widths = {8, 16, 32};
    int bottleneck = 64;
    float flow_range = 0.0f;  // R, pixels; spatial offsets map to [-R, R]
    bool use_batchnorm = true;
    int multistep = 1;     // D: number of flow fields the head emits
    int fusion_width = 32; // channels each multi-scale branch is projected to
    float init_std = 0.01f;

    int in_channels() const { return input_frames * channels_per_frame; }

    void validate() const {
        if (input_frames != 2) throw std::invalid_argument("only 2-frame inputs are supported");
        if (channels_per_frame < 1) throw std::invalid_argument("channels_per_frame must be >= 1");
        for (int k : enc_kernels)
            if (k < 1 || k % 2 == 0) throw std::invalid_argument("encoder kernel sizes must be odd");
        for (int k : dec_kernels)
            if (k < 1 || k % 2 == 0) throw std::invalid_argument("decoder kernel sizes must be odd");
        for (int w : widths)
            if (w < 1) throw std::invalid_argument("channel widths must be positive");
        if (bottleneck < 1) throw std::invalid_argument("bottleneck width must be positive");
        if (!(flow_range > 0.0f)) throw std::invalid_argument("flow_range R must be positive");
        if (multistep < 1) throw std::invalid_argument("multistep depth D must be >= 1");
        if (fusion_width < 1) throw std::invalid_argument("fusion width must be positive");
        if (!(init_std >= 0.0f)) throw std::invalid_argument("init_std must be non-negative");
    }
};

inline float default_flow_range(int h, int w) { return float(std::max(h, w)) / 8.0f; }

// ---------------------------------------------------------------------------
// Conv block: conv + optional batch-norm + activation.
// ---------------------------------------------------------------------------

struct ConvBlock {
    LayerParams p;
    Activation act = Activation::relu;
};

struct BlockCache {
    Tensor in;
    BatchNormCache bn;
    Tensor out; // post-activation
};

inline Tensor conv_block_forward(ConvBlock& blk, const Tensor& x, bool train, BlockCache* cache) {
    if (cache) cache->in = x;
    Tensor y = conv2d_forward(x, blk.p);
    if (blk.p.has_bn) y = batchnorm_forward(y, blk.p, train, cache ? &cache->bn : nullptr);
    y = activation_forward(y, blk.act);
    if (cache) cache->out = y;
    return y;
}

inline Tensor conv_block_backward(ConvBlock& blk, const BlockCache& cache, const Tensor& upstream) {
    Tensor g = activation_backward(cache.out, upstream, blk.act);
    if (blk.p.has_bn) g = batchnorm_backward(g, blk.p, cache.bn);
    return conv2d_backward(cache.in, blk.p, g);
}

// ---------------------------------------------------------------------------
// Encoder-decoder: 3x(conv + pool), bottleneck conv, 3x(upsample + conv) with
// skip connections concatenating the pre-pool encoder activations, and a 1x1
// head emitting 3·D raw flow channels.
// ---------------------------------------------------------------------------

struct EncoderDecoder {
    NetworkConfig cfg;
    ConvBlock enc[3];
    ConvBlock bott;
    ConvBlock dec[3];
    LayerParams head; // 1x1 conv, widths[0] -> 3·D; no bn, no activation
};

inline EncoderDecoder build_single_scale(const NetworkConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    EncoderDecoder net;
    net.cfg = cfg;
    const int cin[3] = {cfg.in_channels(), cfg.widths[0], cfg.widths[1]};
    for (int i = 0; i < 3; ++i) {
        net.enc[i].p.reset_conv(cfg.widths[i], cin[i], cfg.enc_kernels[i]);
        if (cfg.use_batchnorm) net.enc[i].p.reset_bn(cfg.widths[i]);
        gaussian_init(net.enc[i].p, cfg.init_std, rng);
    }
    net.bott.p.reset_conv(cfg.bottleneck, cfg.widths[2], 3);
    if (cfg.use_batchnorm) net.bott.p.reset_bn(cfg.bottleneck);
    gaussian_init(net.bott.p, cfg.init_std, rng);
    // decoder stage i consumes concat(upsampled previous, encoder skip)
    const int dprev[3] = {cfg.bottleneck, cfg.widths[2], cfg.widths[1]};
    const int dskip[3] = {cfg.widths[2], cfg.widths[1], cfg.widths[0]};
    for (int i = 0; i < 3; ++i) {
        net.dec[i].p.reset_conv(dskip[i], dprev[i] + dskip[i], cfg.dec_kernels[i]);
        if (cfg.use_batchnorm) net.dec[i].p.reset_bn(dskip[i]);
        gaussian_init(net.dec[i].p, cfg.init_std, rng);
    }
    net.head.reset_conv(3 * cfg.multistep, cfg.widths[0], 1);
    gaussian_init(net.head, cfg.init_std, rng);
    return net;
}

inline EncoderDecoder build_single_scale(const NetworkConfig& cfg, uint64_t seed) {
    std::mt19937_64 rng(seed);
    return build_single_scale(cfg, rng);
}

inline void check_spatial_extents(const Tensor& video, int divisor) {
    if (video.rank() != 4)
        throw std::invalid_argument("network input must be 4-D, got " + video.shape_string());
    if (video.extent(2) % divisor != 0 || video.extent(3) % divisor != 0)
        throw std::invalid_argument("input extents must be divisible by " + std::to_string(divisor) +
                                    ", got " + video.shape_string());
}

struct EncDecCache {
    BlockCache enc[3];
    MaxPoolCache pool[3];
    BlockCache bott;
    BlockCache dec[3];
    int split_at[3] = {0, 0, 0};
};

/// Runs encoder, bottleneck and decoder; returns the (B, widths[0], H, W)
/// decoder feature map that feeds a flow head.
inline Tensor features_forward(EncoderDecoder& net, const Tensor& video, bool train,
                               EncDecCache& cache) {
    check_spatial_extents(video, 8);
    if (video.extent(1) != net.cfg.in_channels())
        throw std::invalid_argument("network expects " + std::to_string(net.cfg.in_channels()) +
                                    " input channels, got " + video.shape_string());
    Tensor x = video;
    for (int i = 0; i < 3; ++i) {
        x = conv_block_forward(net.enc[i], x, train, &cache.enc[i]);
        x = maxpool2_forward(x, &cache.pool[i]);
    }
    x = conv_block_forward(net.bott, x, train, &cache.bott);
    for (int i = 0; i < 3; ++i) {
        x = upsample_bilinear2x_forward(x);
        cache.split_at[i] = x.extent(1);
        x = concat_channels(x, cache.enc[2 - i].out);
        x = conv_block_forward(net.dec[i], x, train, &cache.dec[i]);
    }
    return x;
}

/// Backpropagates a gradient on the decoder features through the whole
/// network, accumulating parameter gradients. Returns the input gradient.
inline Tensor features_backward(EncoderDecoder& net, EncDecCache& cache, const Tensor& d_features) {
    Tensor skip_grads[3];
    Tensor g = d_features;
    for (int i = 2; i >= 0; --i) {
        g = conv_block_backward(net.dec[i], cache.dec[i], g);
        auto [g_up, g_skip] = split_channels(g, cache.split_at[i]);
        skip_grads[2 - i] = std::move(g_skip);
        const Tensor& below = i == 0 ? cache.bott.out : cache.dec[i - 1].out;
        g = upsample_bilinear2x_backward(g_up, below.extent(2), below.extent(3));
    }
    g = conv_block_backward(net.bott, cache.bott, g);
    for (int i = 2; i >= 0; --i) {
        Tensor ge = maxpool2_backward(cache.pool[i], g);
        for (int64_t j = 0; j < ge.size(); ++j) ge[j] += skip_grads[i][j];
        g = conv_block_backward(net.enc[i], cache.enc[i], ge);
    }
    return g;
}

// ---------------------------------------------------------------------------
// Flow head: 1x1 conv to 3·D channels, then tanh mapping. Channel 3d+0 is Δx,
// 3d+1 is Δy (both scaled to [-R, R]), 3d+2 is Δt mapped to [0, 1].
// ---------------------------------------------------------------------------

struct HeadCache {
    Tensor in;
    Tensor tanh_raw; // tanh of the raw head output
};

inline std::vector<VoxelFlowField> head_forward(LayerParams& head, const Tensor& features, float R,
                                                int D, HeadCache& cache) {
    if (head.weights.value.extent(0) != 3 * D || head.weights.value.extent(0) % 3 != 0)
        throw std::invalid_argument("flow head must emit 3*D channels, has " +
                                    head.weights.value.shape_string());
    cache.in = features;
    Tensor raw = conv2d_forward(features, head);
    cache.tanh_raw = activation_forward(raw, Activation::tanh);
    const int B = raw.extent(0), H = raw.extent(2), W = raw.extent(3);
    std::vector<VoxelFlowField> flows;
    flows.reserve(static_cast<size_t>(D));
    for (int d = 0; d < D; ++d) {
        VoxelFlowField f(B, H, W);
        for (int b = 0; b < B; ++b)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    f.delta_x.at(b, y, x) = R * cache.tanh_raw.at(b, 3 * d + 0, y, x);
                    f.delta_y.at(b, y, x) = R * cache.tanh_raw.at(b, 3 * d + 1, y, x);
                    f.delta_t.at(b, y, x) = 0.5f * (cache.tanh_raw.at(b, 3 * d + 2, y, x) + 1.0f);
                }
        flows.push_back(std::move(f));
    }
    return flows;
}

/// d_flows holds loss gradients w.r.t. each flow field; returns the gradient
/// w.r.t. the head's input features.
inline Tensor head_backward(LayerParams& head, const HeadCache& cache,
                            const std::vector<VoxelFlowField>& d_flows, float R) {
    const Tensor& t = cache.tanh_raw;
    const int B = t.extent(0), H = t.extent(2), W = t.extent(3);
    Tensor d_raw(t.shape());
    for (int d = 0; d < int(d_flows.size()); ++d)
        for (int b = 0; b < B; ++b)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    const float tx = t.at(b, 3 * d + 0, y, x), ty = t.at(b, 3 * d + 1, y, x),
                                tt = t.at(b, 3 * d + 2, y, x);
                    d_raw.at(b, 3 * d + 0, y, x) =
                        d_flows[size_t(d)].delta_x.at(b, y, x) * R * (1.0f - tx * tx);
                    d_raw.at(b, 3 * d + 1, y, x) =
                        d_flows[size_t(d)].delta_y.at(b, y, x) * R * (1.0f - ty * ty);
                    d_raw.at(b, 3 * d + 2, y, x) =
                        d_flows[size_t(d)].delta_t.at(b, y, x) * 0.5f * (1.0f - tt * tt);
                }
    return conv2d_backward(cache.in, head, d_raw);
}

struct SingleScaleCache {
    EncDecCache ed;
    HeadCache head;
};

/// Full single-scale forward: video -> D voxel flow fields at input extents.
inline std::vector<VoxelFlowField> forward_flow(EncoderDecoder& net, const Tensor& video, bool train,
                                                SingleScaleCache& cache) {
    Tensor feat = features_forward(net, video, train, cache.ed);
    return head_forward(net.head, feat, net.cfg.flow_range, net.cfg.multistep, cache.head);
}

inline Tensor forward_flow_backward(EncoderDecoder& net, SingleScaleCache& cache,
                                    const std::vector<VoxelFlowField>& d_flows) {
    Tensor d_feat = head_backward(net.head, cache.head, d_flows, net.cfg.flow_range);
    return features_backward(net, cache.ed, d_feat);
}

// ---------------------------------------------------------------------------
// Parameter enumeration (checkpoints, Adam, gradient checks).
// ---------------------------------------------------------------------------

struct NamedParam {
    std::string name;
    ParamTensor* param;
};

struct NamedState {
    std::string name;
    Tensor* tensor;
};

namespace detail {

inline void collect_layer(LayerParams& p, const std::string& prefix, std::vector<NamedParam>& params,
                          std::vector<NamedState>* state) {
    params.push_back({prefix + ".weights", &p.weights});
    // batch norm subtracts the channel mean, so a conv bias before it cancels
    // exactly; β carries the shift instead and the bias stays zero
    if (!p.has_bn) params.push_back({prefix + ".bias", &p.bias});
    if (p.has_bn) {
        params.push_back({prefix + ".gamma", &p.gamma});
        params.push_back({prefix + ".beta", &p.beta});
        if (state) {
            state->push_back({prefix + ".running_mean", &p.running_mean});
            state->push_back({prefix + ".running_var", &p.running_var});
        }
    }
}

} // namespace detail

inline void collect_params(EncoderDecoder& net, const std::string& prefix,
                           std::vector<NamedParam>& params, std::vector<NamedState>* state = nullptr) {
    for (int i = 0; i < 3; ++i)
        detail::collect_layer(net.enc[i].p, prefix + "enc" + std::to_string(i + 1), params, state);
    detail::collect_layer(net.bott.p, prefix + "bottleneck", params, state);
    for (int i = 0; i < 3; ++i)
        detail::collect_layer(net.dec[i].p, prefix + "dec" + std::to_string(i + 1), params, state);
    detail::collect_layer(net.head, prefix + "head", params, state);
}

// ---------------------------------------------------------------------------
// Multi-scale pyramid (coarse-to-fine fusion). nets[i] runs at scales[i];
// scales are ascending and halve successively; nets.back() is the finest.
// Coarse spatial flows are upsampled to the finest grid (values doubled per
// octave), projected to fusion_width channels, concatenated with the
// projected finest decoder features, and fused into the final flow.
// ---------------------------------------------------------------------------

struct ScalePyramid {
    NetworkConfig cfg;
    std::vector<int> scales; // ascending resolutions, e.g. {16, 32, 64}
    std::vector<EncoderDecoder> nets;
    std::vector<ConvBlock> proj; // per scale: coarse flow (2·D ch) or finest features -> fusion_width
    ConvBlock mix;               // scales·fusion_width -> fusion_width
    LayerParams fuse_head;       // 1x1, fusion_width -> 3·D

    int octaves() const { return int(scales.size()) - 1; }
    bool fused() const { return scales.size() > 1; }
};

inline ScalePyramid build_multiscale(const NetworkConfig& cfg, const std::vector<int>& scales,
                                     uint64_t seed) {
    cfg.validate();
    if (scales.empty()) throw std::invalid_argument("scale list must not be empty");
    for (size_t i = 0; i + 1 < scales.size(); ++i)
        if (scales[i + 1] != 2 * scales[i])
            throw std::invalid_argument("scale list must double at every step, got " +
                                        std::to_string(scales[i]) + " -> " +
                                        std::to_string(scales[i + 1]));
    if (scales[0] % 8 != 0 || scales[0] <= 0)
        throw std::invalid_argument("coarsest scale must be a positive multiple of 8");

    ScalePyramid pyr;
    pyr.cfg = cfg;
    pyr.scales = scales;
    std::mt19937_64 rng(seed);
    for (size_t i = 0; i < scales.size(); ++i) pyr.nets.push_back(build_single_scale(cfg, rng));
    if (scales.size() > 1) {
        const int n = int(scales.size());
        const int fw = cfg.fusion_width;
        pyr.proj.resize(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            const int in_ch = i == n - 1 ? cfg.widths[0] : 2 * cfg.multistep;
            pyr.proj[size_t(i)].p.reset_conv(fw, in_ch, 3);
            if (cfg.use_batchnorm) pyr.proj[size_t(i)].p.reset_bn(fw);
            gaussian_init(pyr.proj[size_t(i)].p, cfg.init_std, rng);
        }
        pyr.mix.p.reset_conv(fw, n * fw, 3);
        if (cfg.use_batchnorm) pyr.mix.p.reset_bn(fw);
        gaussian_init(pyr.mix.p, cfg.init_std, rng);
        pyr.fuse_head.reset_conv(3 * cfg.multistep, fw, 1);
        gaussian_init(pyr.fuse_head, cfg.init_std, rng);
    }
    return pyr;
}

inline void collect_params(ScalePyramid& pyr, std::vector<NamedParam>& params,
                           std::vector<NamedState>* state = nullptr) {
    for (size_t i = 0; i < pyr.nets.size(); ++i)
        collect_params(pyr.nets[i], "net" + std::to_string(i) + ".", params, state);
    if (pyr.fused()) {
        for (size_t i = 0; i < pyr.proj.size(); ++i)
            detail::collect_layer(pyr.proj[i].p, "fuse.proj" + std::to_string(i), params, state);
        detail::collect_layer(pyr.mix.p, "fuse.mix", params, state);
        detail::collect_layer(pyr.fuse_head, "fuse.head", params, state);
    }
}

struct PyramidCache {
    std::vector<Tensor> inputs;      // per scale, the (downsampled) video
    std::vector<EncDecCache> ed;     // per scale
    std::vector<Tensor> features;    // per scale decoder features
    std::vector<HeadCache> heads;    // per coarse scale (and the single net when not fused)
    // fusion path
    std::vector<Tensor> flow_spatial; // per coarse scale: (B, 2·D, h, w) at own scale
    std::vector<BlockCache> proj;
    std::vector<int> concat_splits;
    BlockCache mix;
    HeadCache fuse_head;
};

struct PyramidOut {
    std::vector<VoxelFlowField> fused;                // D fields at the finest scale
    std::vector<std::vector<VoxelFlowField>> coarse;  // per coarse scale, D fields
};

namespace detail {

// Upsample a (B, 2·D, h, w) spatial-flow stack by one octave; offsets double
// so they remain in units of the finer grid.
inline Tensor upscale_flow_octave(const Tensor& t) {
    Tensor u = upsample_bilinear2x_forward(t);
    for (int64_t i = 0; i < u.size(); ++i) u[i] *= 2.0f;
    return u;
}

inline Tensor pack_spatial(const std::vector<VoxelFlowField>& flows) {
    const int D = int(flows.size());
    const int B = flows[0].batch(), H = flows[0].height(), W = flows[0].width();
    Tensor t({B, 2 * D, H, W});
    for (int d = 0; d < D; ++d)
        for (int b = 0; b < B; ++b)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    t.at(b, 2 * d + 0, y, x) = flows[size_t(d)].delta_x.at(b, y, x);
                    t.at(b, 2 * d + 1, y, x) = flows[size_t(d)].delta_y.at(b, y, x);
                }
    return t;
}

} // namespace detail

inline PyramidOut forward_multiscale(ScalePyramid& pyr, const Tensor& video, bool train,
                                     PyramidCache& cache) {
    const int n = int(pyr.nets.size());
    check_spatial_extents(video, 8 << pyr.octaves());

    // input pyramid, finest first in construction order
    cache.inputs.assign(static_cast<size_t>(n), Tensor());
    cache.inputs[size_t(n - 1)] = video;
    for (int i = n - 2; i >= 0; --i)
        cache.inputs[size_t(i)] = downsample2x_mean(cache.inputs[size_t(i + 1)]);

    cache.ed.assign(static_cast<size_t>(n), EncDecCache());
    cache.features.assign(static_cast<size_t>(n), Tensor());
    cache.heads.assign(static_cast<size_t>(n), HeadCache());
    for (int i = 0; i < n; ++i)
        cache.features[size_t(i)] =
            features_forward(pyr.nets[size_t(i)], cache.inputs[size_t(i)], train, cache.ed[size_t(i)]);

    PyramidOut out;
    if (!pyr.fused()) {
        out.fused = head_forward(pyr.nets[0].head, cache.features[0], pyr.cfg.flow_range,
                                 pyr.cfg.multistep, cache.heads[0]);
        return out;
    }

    // coarse heads
    for (int i = 0; i < n - 1; ++i)
        out.coarse.push_back(head_forward(pyr.nets[size_t(i)].head, cache.features[size_t(i)],
                                          pyr.cfg.flow_range, pyr.cfg.multistep,
                                          cache.heads[size_t(i)]));

    // fusion: project every branch to fusion_width at the finest grid
    cache.flow_spatial.assign(static_cast<size_t>(n - 1), Tensor());
    cache.proj.assign(static_cast<size_t>(n), BlockCache());
    cache.concat_splits.clear();
    Tensor cat;
    for (int i = 0; i < n - 1; ++i) {
        cache.flow_spatial[size_t(i)] = detail::pack_spatial(out.coarse[size_t(i)]);
        Tensor up = cache.flow_spatial[size_t(i)];
        for (int oct = i; oct < n - 1; ++oct) up = detail::upscale_flow_octave(up);
        Tensor branch = conv_block_forward(pyr.proj[size_t(i)], up, train, &cache.proj[size_t(i)]);
        cache.concat_splits.push_back(cat.rank() == 0 ? 0 : cat.extent(1));
        cat = concat_channels(cat, branch);
    }
    Tensor feat_branch = conv_block_forward(pyr.proj[size_t(n - 1)], cache.features[size_t(n - 1)],
                                            train, &cache.proj[size_t(n - 1)]);
    cache.concat_splits.push_back(cat.extent(1));
    cat = concat_channels(cat, feat_branch);

    Tensor mixed = conv_block_forward(pyr.mix, cat, train, &cache.mix);
    out.fused = head_forward(pyr.fuse_head, mixed, pyr.cfg.flow_range, pyr.cfg.multistep,
                             cache.fuse_head);
    return out;
}

/// Backward through the pyramid. `d_fused` pairs with PyramidOut.fused;
/// `d_coarse` pairs with PyramidOut.coarse (pass empty fields for scales
/// without their own supervision).
inline void backward_multiscale(ScalePyramid& pyr, PyramidCache& cache,
                                const std::vector<VoxelFlowField>& d_fused,
                                const std::vector<std::vector<VoxelFlowField>>& d_coarse) {
    const int n = int(pyr.nets.size());
    if (!pyr.fused()) {
        Tensor d_feat = head_backward(pyr.nets[0].head, cache.heads[0], d_fused, pyr.cfg.flow_range);
        features_backward(pyr.nets[0], cache.ed[0], d_feat);
        return;
    }

    Tensor d_mixed = head_backward(pyr.fuse_head, cache.fuse_head, d_fused, pyr.cfg.flow_range);
    Tensor d_cat = conv_block_backward(pyr.mix, cache.mix, d_mixed);

    // peel branches off the concatenation, finest-features branch last
    std::vector<Tensor> d_branch(static_cast<size_t>(n));
    for (int i = n - 1; i >= 1; --i) {
        auto [rest, branch] = split_channels(d_cat, cache.concat_splits[size_t(i)]);
        d_branch[size_t(i)] = std::move(branch);
        d_cat = std::move(rest);
    }
    d_branch[0] = std::move(d_cat);
    Tensor d_feat_branch = std::move(d_branch[size_t(n - 1)]);
    std::vector<Tensor>& d_flow_branch = d_branch;

    // finest net: fusion features path only
    {
        Tensor d_feat =
            conv_block_backward(pyr.proj[size_t(n - 1)], cache.proj[size_t(n - 1)], d_feat_branch);
        features_backward(pyr.nets[size_t(n - 1)], cache.ed[size_t(n - 1)], d_feat);
    }

    // coarse nets: own supervision plus the fusion path through the flow
    for (int i = 0; i < n - 1; ++i) {
        Tensor d_up = conv_block_backward(pyr.proj[size_t(i)], cache.proj[size_t(i)],
                                          d_flow_branch[size_t(i)]);
        for (int oct = n - 2; oct >= i; --oct) {
            const int h = cache.flow_spatial[size_t(i)].extent(2) << (oct - i);
            const int w = cache.flow_spatial[size_t(i)].extent(3) << (oct - i);
            d_up = upsample_bilinear2x_backward(d_up, h, w);
            for (int64_t j = 0; j < d_up.size(); ++j) d_up[j] *= 2.0f;
        }

        std::vector<VoxelFlowField> d_flows;
        const int B = cache.flow_spatial[size_t(i)].extent(0),
                  h = cache.flow_spatial[size_t(i)].extent(2),
                  w = cache.flow_spatial[size_t(i)].extent(3);
        for (int d = 0; d < pyr.cfg.multistep; ++d) {
            VoxelFlowField f(B, h, w);
            if (!d_coarse.empty() && !d_coarse[size_t(i)].empty()) {
                f.delta_x = d_coarse[size_t(i)][size_t(d)].delta_x;
                f.delta_y = d_coarse[size_t(i)][size_t(d)].delta_y;
                f.delta_t = d_coarse[size_t(i)][size_t(d)].delta_t;
            }
            for (int b = 0; b < B; ++b)
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) {
                        f.delta_x.at(b, y, x) += d_up.at(b, 2 * d + 0, y, x);
                        f.delta_y.at(b, y, x) += d_up.at(b, 2 * d + 1, y, x);
                    }
            d_flows.push_back(std::move(f));
        }
        Tensor d_feat =
            head_backward(pyr.nets[size_t(i)].head, cache.heads[size_t(i)], d_flows, pyr.cfg.flow_range);
        features_backward(pyr.nets[size_t(i)], cache.ed[size_t(i)], d_feat);
    }
}

} // namespace dvf

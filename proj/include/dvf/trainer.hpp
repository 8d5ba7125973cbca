#pragma once

// Training and evaluation loops: model -> sampler -> loss composition with
// Adam, multi-scale / multi-step supervision, checkpointing, and deterministic
// replay. Batch order is derived from (seed, step index), never from mutable
// generator state, so resuming from a checkpoint replays the exact sequence.

#include "dvf/data.hpp"
#include "dvf/losses.hpp"
#include "dvf/metrics.hpp"
#include "dvf/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dvf {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
    // optimization
    float lr = 0.0f;  // 0 = auto: 1e-4, dropping to 5e-5 for multi-step (D > 1)
    float beta1 = 0.9f, beta2 = 0.999f;
    int batch = 8;  // desk-scale default; the reference setting is 32
    float lambda1 = 0.01f, lambda2 = 0.005f, eps_charb = 0.001f;
    float init_std = 0.01f;
    long steps = 2000;
    uint64_t seed = 1;
    long eval_every = 500;

    // task
    SynthesisMode mode = SynthesisMode::interpolation;
    int D = 1;  // frames synthesized per sample (extrapolation only)

    // network
    std::vector<int> scales;  // empty = single scale at input resolution
    int channels = 1;
    std::array<int, 3> widths = {8, 16, 32};
    int bottleneck = 64;
    int fusion_width = 32;
    float flow_range = 0.0f;  // 0 = max(H,W)/8, resolved when the trainer is built
    bool use_batchnorm = true;

    float resolved_lr() const { return lr > 0.0f ? lr : (D > 1 ? 5e-5f : 1e-4f); }

    LossConfig loss_config() const { return LossConfig{lambda1, lambda2, eps_charb}; }

    void validate() const {
        if (batch < 1) throw std::invalid_argument("batch must be >= 1");
        if (use_batchnorm && batch < 2)
            throw std::invalid_argument("batch must be >= 2 when batch norm is enabled");
        if (steps < 0) throw std::invalid_argument("steps must be >= 0");
        if (eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
        if (D < 1) throw std::invalid_argument("D must be >= 1");
        if (mode == SynthesisMode::interpolation && D != 1)
            throw std::invalid_argument("interpolation synthesizes exactly one frame; D must be 1");
        if (lr < 0.0f || !(beta1 >= 0.0f && beta1 < 1.0f) || !(beta2 >= 0.0f && beta2 < 1.0f))
            throw std::invalid_argument("bad optimizer settings");
        loss_config().validate();
    }
};

// ---------------------------------------------------------------------------
// Datasets: triplets split 90/10 into train/eval by scene seed.
// ---------------------------------------------------------------------------

struct Dataset {
    std::vector<TripletSample> train;
    std::vector<TripletSample> eval;
};

/// Slices every usable triplet out of each scene. Scenes whose seed ends in 9
/// (mod 10) are held out for evaluation; if the draw leaves the held-out side
/// empty, the last scene is reassigned. Samples failing the motion filter are
/// dropped unless that would empty a side.
inline Dataset make_dataset(const std::vector<RenderedScene>& scenes, SynthesisMode mode, int D = 1,
                            bool motion_filter = true) {
    if (scenes.empty()) throw std::invalid_argument("make_dataset: no scenes");
    auto slice = [&](const RenderedScene& scene, std::vector<TripletSample>& out, bool filtered) {
        const int L = scene.video.extent(0);
        const int last_index = mode == SynthesisMode::interpolation ? L - 3 : L - 2 - D;
        for (int i = 0; i <= last_index; ++i) {
            TripletSample t = make_triplet(scene, i, mode, D);
            if (!filtered || has_obvious_motion(t)) out.push_back(std::move(t));
        }
    };

    auto build = [&](bool filtered) {
        Dataset d;
        std::vector<size_t> eval_scenes;
        for (size_t s = 0; s < scenes.size(); ++s)
            if (scenes[s].seed % 10 == 9) eval_scenes.push_back(s);
        if (eval_scenes.empty() && scenes.size() >= 2) eval_scenes.push_back(scenes.size() - 1);
        for (size_t s = 0; s < scenes.size(); ++s) {
            const bool held_out =
                std::find(eval_scenes.begin(), eval_scenes.end(), s) != eval_scenes.end();
            slice(scenes[s], held_out ? d.eval : d.train, filtered);
        }
        if (d.train.empty() && !d.eval.empty()) d.train = d.eval;  // single-scene corpora
        if (d.eval.empty() && !d.train.empty()) d.eval = d.train;
        return d;
    };

    Dataset d = build(motion_filter);
    if (motion_filter && (d.train.empty() || d.eval.empty())) d = build(false);
    if (d.train.empty())
        throw std::invalid_argument("make_dataset: scenes yield no usable triplets");
    return d;
}

struct Batch {
    Tensor input;   // (B, 2C, H, W)
    Tensor target;  // (B, D*C, H, W)
};

inline Batch assemble_batch(const std::vector<TripletSample>& samples, const std::vector<int>& idx) {
    if (idx.empty()) throw std::invalid_argument("assemble_batch: empty index list");
    const TripletSample& first = samples.at(size_t(idx[0]));
    const int B = int(idx.size());
    Batch b;
    b.input = Tensor({B, first.input.extent(0), first.input.extent(1), first.input.extent(2)});
    b.target = Tensor({B, first.target.extent(0), first.target.extent(1), first.target.extent(2)});
    for (int j = 0; j < B; ++j) {
        const TripletSample& t = samples.at(size_t(idx[size_t(j)]));
        require_same_shape(t.input, first.input, "assemble_batch");
        require_same_shape(t.target, first.target, "assemble_batch");
        std::memcpy(b.input.data() + size_t(j) * first.input.size(), t.input.data(),
                    size_t(first.input.size()) * 4);
        std::memcpy(b.target.data() + size_t(j) * first.target.size(), t.target.data(),
                    size_t(first.target.size()) * 4);
    }
    return b;
}

namespace detail {

/// Batch composition for a given step is a pure function of (seed, step).
inline std::vector<int> batch_indices(uint64_t seed, long step, size_t pool, int batch) {
    std::mt19937_64 g(seed ^ (0x9E3779B97F4A7C15ULL * (uint64_t(step) + 1)));
    std::vector<int> idx(static_cast<size_t>(batch));
    for (int& i : idx) i = int(g() % pool);
    return idx;
}

/// Extracts synthesis step d from a (B, D*C, H, W) target stack.
inline Tensor target_step(const Tensor& targets, int d, int c) {
    const int B = targets.extent(0), H = targets.extent(2), W = targets.extent(3);
    Tensor out({B, c, H, W});
    const size_t plane = size_t(c) * H * W, stride = size_t(targets.extent(1)) * H * W;
    for (int b = 0; b < B; ++b)
        std::memcpy(out.data() + size_t(b) * plane, targets.data() + size_t(b) * stride + size_t(d) * plane,
                    plane * 4);
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Trainer: owns the pyramid, the optimizer state, and the step counter.
// ---------------------------------------------------------------------------

struct StepReport {
    long step = 0;
    float lr = 0.0f;
    LossReport finest;               // losses on the (fused) finest-scale output
    std::vector<float> coarse_recon; // per coarse scale, reconstruction only
    float objective = 0.0f;          // finest.total + sum of coarse terms

    std::string line() const {
        std::ostringstream os;
        os << "step=" << step << " lr=" << lr << " total=" << objective << " recon=" << finest.recon
           << " tv_motion=" << finest.tv_motion << " tv_mask=" << finest.tv_mask;
        for (size_t i = 0; i < coarse_recon.size(); ++i)
            os << " scale" << i << "_recon=" << coarse_recon[i];
        return std::move(os).str();
    }
};

struct Trainer {
    TrainConfig cfg;          // fully resolved (lr, scales, flow_range)
    NetworkConfig net_cfg;
    ScalePyramid pyr;
    AdamState adam;
    long step = 0;

    /// cfg must already carry resolved scales and flow_range.
    explicit Trainer(TrainConfig c) : cfg(std::move(c)) {
        cfg.lr = cfg.resolved_lr();
        cfg.validate();
        if (cfg.scales.empty()) throw std::invalid_argument("trainer: scale list unresolved");
        net_cfg.channels_per_frame = cfg.channels;
        net_cfg.widths = cfg.widths;
        net_cfg.bottleneck = cfg.bottleneck;
        net_cfg.fusion_width = cfg.fusion_width;
        net_cfg.flow_range = cfg.flow_range;
        net_cfg.use_batchnorm = cfg.use_batchnorm;
        net_cfg.multistep = cfg.D;
        net_cfg.init_std = cfg.init_std;
        pyr = build_multiscale(net_cfg, cfg.scales, cfg.seed);
        adam.lr = cfg.lr;
        adam.beta1 = cfg.beta1;
        adam.beta2 = cfg.beta2;
        adam.validate();
    }

    /// Resolves defaults against the canvas: single scale at min(H,W), flow
    /// range max(H,W)/8.
    Trainer(TrainConfig c, int height, int width)
        : Trainer([&] {
              if (c.scales.empty()) c.scales = {std::min(height, width)};
              if (!(c.flow_range > 0.0f)) c.flow_range = default_flow_range(height, width);
              return std::move(c);
          }()) {}

    std::vector<ParamTensor*> param_pointers() {
        std::vector<NamedParam> named;
        collect_params(pyr, named);
        std::vector<ParamTensor*> out;
        out.reserve(named.size());
        for (auto& n : named) out.push_back(n.param);
        return out;
    }

    StepReport train_step(const Batch& batch);
    std::vector<VoxelFlowField> predict(const Tensor& input);  // eval-mode fused flows
};

/// One optimization step: forward through the pyramid, per-scale and per-step
/// losses (reconstruction everywhere, TV on the finest output only, equal
/// weights across scales, averaged across the D synthesis steps), full
/// backward, one Adam update. Throws if any loss term goes non-finite, naming
/// the term.
inline StepReport Trainer::train_step(const Batch& batch) {
    const int D = cfg.D, C = cfg.channels;
    const int n_scales = int(pyr.nets.size());
    const LossConfig finest_losses = cfg.loss_config();
    LossConfig coarse_losses = finest_losses;
    coarse_losses.lambda1 = coarse_losses.lambda2 = 0.0f;  // TV applies to the finest flow only
    const float step_w = 1.0f / float(D);
    if (batch.target.extent(1) != D * C)
        throw std::invalid_argument("train_step: target stack has " +
                                    std::to_string(batch.target.extent(1)) + " channels, expected " +
                                    std::to_string(D * C));

    PyramidCache cache;
    PyramidOut out = forward_multiscale(pyr, batch.input, /*train=*/true, cache);

    // Target pyramid, finest last to mirror cache.inputs.
    std::vector<Tensor> targets(static_cast<size_t>(n_scales));
    targets[size_t(n_scales - 1)] = batch.target;
    for (int i = n_scales - 2; i >= 0; --i) targets[size_t(i)] = downsample2x_mean(targets[size_t(i + 1)]);

    StepReport rep;
    rep.step = step;
    rep.lr = adam.lr;

    auto check_finite = [&](float v, const std::string& term) {
        if (!std::isfinite(v))
            throw std::runtime_error("training aborted at step " + std::to_string(step) + ": " + term +
                                     " is not finite");
    };

    // Finest (fused) output: reconstruction + TV, averaged over steps.
    std::vector<VoxelFlowField> d_fused;
    d_fused.reserve(size_t(D));
    for (int d = 0; d < D; ++d) {
        Tensor pred = sample_forward(batch.input, out.fused[size_t(d)]);
        Tensor target = detail::target_step(batch.target, d, C);
        auto [losses, grad_pred, grad_flow] = total_loss(pred, target, out.fused[size_t(d)], finest_losses);
        check_finite(losses.recon, "reconstruction (finest, step " + std::to_string(d + 1) + ")");
        check_finite(losses.tv_motion, "motion TV (step " + std::to_string(d + 1) + ")");
        check_finite(losses.tv_mask, "mask TV (step " + std::to_string(d + 1) + ")");
        rep.finest.recon += step_w * losses.recon;
        rep.finest.tv_motion += step_w * losses.tv_motion;
        rep.finest.tv_mask += step_w * losses.tv_mask;

        for (int64_t i = 0; i < grad_pred.size(); ++i) grad_pred[i] *= step_w;
        SamplerGrad sg = sample_backward(batch.input, out.fused[size_t(d)], grad_pred,
                                         /*want_input_grad=*/false);
        VoxelFlowField df(grad_flow.batch(), grad_flow.height(), grad_flow.width());
        for (int64_t i = 0; i < df.delta_x.size(); ++i) {
            df.delta_x[i] = step_w * grad_flow.delta_x[i] + sg.d_delta_x[i];
            df.delta_y[i] = step_w * grad_flow.delta_y[i] + sg.d_delta_y[i];
            df.delta_t[i] = step_w * grad_flow.delta_t[i] + sg.d_delta_t[i];
        }
        d_fused.push_back(std::move(df));
    }
    rep.finest.total = rep.finest.recon + finest_losses.lambda1 * rep.finest.tv_motion +
                       finest_losses.lambda2 * rep.finest.tv_mask;
    rep.objective = rep.finest.total;

    // Coarse scales: reconstruction against downsampled inputs/targets, equal
    // weight per scale.
    std::vector<std::vector<VoxelFlowField>> d_coarse(out.coarse.size());
    for (size_t i = 0; i < out.coarse.size(); ++i) {
        float recon_i = 0.0f;
        for (int d = 0; d < D; ++d) {
            const VoxelFlowField& flow = out.coarse[i][size_t(d)];
            Tensor pred = sample_forward(cache.inputs[i], flow);
            Tensor target = detail::target_step(targets[i], d, C);
            auto [losses, grad_pred, grad_flow] = total_loss(pred, target, flow, coarse_losses);
            check_finite(losses.recon, "reconstruction (scale " + std::to_string(i) + ", step " +
                                           std::to_string(d + 1) + ")");
            recon_i += step_w * losses.recon;
            for (int64_t k = 0; k < grad_pred.size(); ++k) grad_pred[k] *= step_w;
            SamplerGrad sg = sample_backward(cache.inputs[i], flow, grad_pred, false);
            VoxelFlowField df(flow.batch(), flow.height(), flow.width());
            df.delta_x = std::move(sg.d_delta_x);
            df.delta_y = std::move(sg.d_delta_y);
            df.delta_t = std::move(sg.d_delta_t);
            d_coarse[i].push_back(std::move(df));
        }
        rep.coarse_recon.push_back(recon_i);
        rep.objective += recon_i;
    }
    check_finite(rep.objective, "total objective");

    backward_multiscale(pyr, cache, d_fused, d_coarse);
    auto params = param_pointers();
    adam_step(params, adam);
    ++step;
    return rep;
}

inline std::vector<VoxelFlowField> Trainer::predict(const Tensor& input) {
    PyramidCache cache;
    return forward_multiscale(pyr, input, /*train=*/false, cache).fused;
}

/// Zeroes every flow head (per-scale heads and the fusion head). With zero
/// heads the network emits (0, 0, 0.5) everywhere and synthesis degenerates
/// to the mean of the two input frames.
inline void zero_flow_heads(ScalePyramid& pyr) {
    for (EncoderDecoder& net : pyr.nets) {
        net.head.weights.value.fill(0.0f);
        net.head.bias.value.fill(0.0f);
    }
    if (pyr.fused()) {
        pyr.fuse_head.weights.value.fill(0.0f);
        pyr.fuse_head.bias.value.fill(0.0f);
    }
}

// ---------------------------------------------------------------------------
// Checkpoints: a single DVFW file holding parameters, Adam moments, batch-norm
// running statistics, and the config echo. Reload + continue replays the same
// loss sequence bit-for-bit.
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor scalar_tensor(const std::vector<float>& v) {
    Tensor t({int(v.size())});
    for (size_t i = 0; i < v.size(); ++i) t[int(i)] = v[i];
    return t;
}

} // namespace detail

inline void save_checkpoint(const std::string& path, Trainer& t) {
    NamedTensors m;
    m.add("__meta", detail::scalar_tensor({float(t.step), float(t.adam.step_count)}));
    m.add("__seed", detail::scalar_tensor({std::bit_cast<float>(uint32_t(t.cfg.seed)),
                                           std::bit_cast<float>(uint32_t(t.cfg.seed >> 32))}));
    std::vector<float> scales(t.cfg.scales.begin(), t.cfg.scales.end());
    m.add("__scales", detail::scalar_tensor(scales));
    m.add("__net", detail::scalar_tensor({float(t.cfg.channels), float(t.cfg.widths[0]),
                                          float(t.cfg.widths[1]), float(t.cfg.widths[2]),
                                          float(t.cfg.bottleneck), float(t.cfg.fusion_width),
                                          t.cfg.flow_range, t.cfg.use_batchnorm ? 1.0f : 0.0f,
                                          float(t.cfg.D),
                                          t.cfg.mode == SynthesisMode::extrapolation ? 1.0f : 0.0f,
                                          t.cfg.init_std}));
    m.add("__train", detail::scalar_tensor({t.cfg.lr, t.cfg.beta1, t.cfg.beta2, float(t.cfg.batch),
                                            t.cfg.lambda1, t.cfg.lambda2, t.cfg.eps_charb,
                                            float(t.cfg.steps), float(t.cfg.eval_every)}));
    std::vector<NamedParam> named;
    std::vector<NamedState> stats;
    collect_params(t.pyr, named, &stats);
    for (auto& p : named) {
        m.add("p." + p.name, p.param->value);
        m.add("m." + p.name, p.param->adam_m);
        m.add("v." + p.name, p.param->adam_v);
    }
    for (auto& s : stats) m.add("s." + s.name, *s.tensor);
    save_tensors(path, m);
}

inline Trainer load_checkpoint(const std::string& path) {
    NamedTensors m = load_tensors(path);
    auto vec = [&](const char* name, size_t at_least) -> const Tensor& {
        const Tensor& t = m.get(name);
        if (t.rank() != 1 || size_t(t.size()) < at_least)
            throw std::runtime_error(path + ": checkpoint field " + name + " has shape " +
                                     t.shape_string());
        return t;
    };
    const Tensor& meta = vec("__meta", 2);
    const Tensor& seed = vec("__seed", 2);
    const Tensor& scales = vec("__scales", 1);
    const Tensor& net = vec("__net", 11);
    const Tensor& tr = vec("__train", 9);

    TrainConfig cfg;
    cfg.seed = uint64_t(std::bit_cast<uint32_t>(seed[0])) | (uint64_t(std::bit_cast<uint32_t>(seed[1])) << 32);
    for (int i = 0; i < scales.size(); ++i) cfg.scales.push_back(int(scales[i]));
    cfg.channels = int(net[0]);
    cfg.widths = {int(net[1]), int(net[2]), int(net[3])};
    cfg.bottleneck = int(net[4]);
    cfg.fusion_width = int(net[5]);
    cfg.flow_range = net[6];
    cfg.use_batchnorm = net[7] != 0.0f;
    cfg.D = int(net[8]);
    cfg.mode = net[9] != 0.0f ? SynthesisMode::extrapolation : SynthesisMode::interpolation;
    cfg.init_std = net[10];
    cfg.lr = tr[0];
    cfg.beta1 = tr[1];
    cfg.beta2 = tr[2];
    cfg.batch = int(tr[3]);
    cfg.lambda1 = tr[4];
    cfg.lambda2 = tr[5];
    cfg.eps_charb = tr[6];
    cfg.steps = long(tr[7]);
    cfg.eval_every = long(tr[8]);

    Trainer t(cfg);
    t.step = long(meta[0]);
    t.adam.step_count = int64_t(meta[1]);

    std::vector<NamedParam> named;
    std::vector<NamedState> stats;
    collect_params(t.pyr, named, &stats);
    auto fetch = [&](const std::string& name, Tensor& dst) {
        const Tensor& src = m.get(name);  // throws naming the key when missing
        require_same_shape(src, dst, "checkpoint tensor");
        dst = src;
    };
    size_t expected = 5;
    for (auto& p : named) {
        fetch("p." + p.name, p.param->value);
        fetch("m." + p.name, p.param->adam_m);
        fetch("v." + p.name, p.param->adam_v);
        expected += 3;
    }
    for (auto& s : stats) {
        fetch("s." + s.name, *s.tensor);
        ++expected;
    }
    if (m.items.size() != expected)
        throw std::runtime_error(path + ": checkpoint holds " + std::to_string(m.items.size()) +
                                 " tensors, expected " + std::to_string(expected));
    return t;
}

// ---------------------------------------------------------------------------
// Evaluation: per synthesis step and per region (full frame / motion mask),
// with average-of-inputs and copy-frame baselines and EPE where ground-truth
// flow is known.
// ---------------------------------------------------------------------------

struct EvalReport {
    int samples = 0;
    std::vector<MetricReport> full;    // D rows
    std::vector<MetricReport> motion;  // D rows; epe filled on row 0 when known
    std::vector<float> baseline_avg_full, baseline_avg_motion;  // average-of-inputs
    std::vector<float> baseline_copy_full, baseline_copy_motion;  // copy nearest/last input

    std::string lines() const {
        std::ostringstream os;
        os << "samples=" << samples << "\n";
        for (size_t d = 0; d < full.size(); ++d) {
            const std::string p = "step" + std::to_string(d + 1) + ".";
            os << p << "full.psnr_db=" << full[d].psnr_db << "\n";
            os << p << "full.ssim=" << full[d].ssim << "\n";
            os << p << "motion.psnr_db=" << motion[d].psnr_db << "\n";
            os << p << "motion.ssim=" << motion[d].ssim << "\n";
            if (motion[d].has_epe()) os << p << "motion.epe=" << motion[d].epe << "\n";
            os << p << "baseline.avg.full.psnr_db=" << baseline_avg_full[d] << "\n";
            os << p << "baseline.avg.motion.psnr_db=" << baseline_avg_motion[d] << "\n";
            os << p << "baseline.copy.full.psnr_db=" << baseline_copy_full[d] << "\n";
            os << p << "baseline.copy.motion.psnr_db=" << baseline_copy_motion[d] << "\n";
        }
        return std::move(os).str();
    }
};

/// Synthesizes every sample (evaluation mode), accumulating mean PSNR/SSIM on
/// the full frame and inside the input-pair motion mask, mean EPE of the
/// projected displacement 2*(dx,dy) against ground truth inside sprite
/// support, and the two baselines. The copy baseline is the better input
/// frame for interpolation and the last input frame for extrapolation.
inline EvalReport evaluate(Trainer& t, const std::vector<TripletSample>& samples) {
    const int D = t.cfg.D, C = t.cfg.channels;
    EvalReport rep;
    rep.full.resize(size_t(D));
    rep.motion.resize(size_t(D));
    rep.baseline_avg_full.assign(size_t(D), 0.0f);
    rep.baseline_avg_motion.assign(size_t(D), 0.0f);
    rep.baseline_copy_full.assign(size_t(D), 0.0f);
    rep.baseline_copy_motion.assign(size_t(D), 0.0f);
    if (samples.empty()) return rep;

    struct Acc {
        double v = 0.0;
        long n = 0;
        void add(double x) { v += x; ++n; }
        float mean() const { return n ? float(v / double(n)) : 0.0f; }
    };
    const size_t nd = size_t(D);
    std::vector<Acc> a_psnr_f(nd), a_ssim_f(nd), a_psnr_m(nd), a_ssim_m(nd);
    std::vector<Acc> b_avg_f(nd), b_avg_m(nd), b_copy_f(nd), b_copy_m(nd);
    Acc a_epe;

    for (const TripletSample& s : samples) {
        const int H = s.input.extent(1), W = s.input.extent(2);
        if (s.target.extent(0) != D * C)
            throw std::invalid_argument("evaluate: sample has " + std::to_string(s.target.extent(0)) +
                                        " target channels, expected " + std::to_string(D * C));
        Tensor input = s.input;
        input.reshape({1, 2 * C, H, W});
        std::vector<VoxelFlowField> flows;
        {
            PyramidCache cache;
            flows = forward_multiscale(t.pyr, input, /*train=*/false, cache).fused;
        }

        // Region masks from the normalized input pair.
        Tensor f0({C, H, W}), f1({C, H, W});
        std::memcpy(f0.data(), s.input.data(), size_t(f0.size()) * 4);
        std::memcpy(f1.data(), s.input.data() + f0.size(), size_t(f1.size()) * 4);
        Tensor mask = motion_mask(f0, f1);
        const bool have_mask = mask_count(mask) > 0;

        Tensor u0 = to_unit(f0), u1 = to_unit(f1);
        Tensor uavg(u0.shape());
        for (int64_t i = 0; i < uavg.size(); ++i) uavg[i] = 0.5f * (u0[i] + u1[i]);

        for (int d = 0; d < D; ++d) {
            Tensor pred = sample_forward(input, flows[size_t(d)]);
            pred.reshape({C, H, W});
            Tensor target({C, H, W});
            std::memcpy(target.data(), s.target.data() + size_t(d) * target.size(),
                        size_t(target.size()) * 4);
            Tensor up = to_unit(pred), ut = to_unit(target);

            a_psnr_f[size_t(d)].add(psnr(up, ut));
            if (H >= 11 && W >= 11) a_ssim_f[size_t(d)].add(ssim(up, ut));
            b_avg_f[size_t(d)].add(psnr(uavg, ut));
            const float copy_f = t.cfg.mode == SynthesisMode::interpolation
                                     ? std::max(psnr(u0, ut), psnr(u1, ut))
                                     : psnr(u1, ut);
            b_copy_f[size_t(d)].add(copy_f);

            if (have_mask) {
                a_psnr_m[size_t(d)].add(psnr(up, ut, &mask));
                b_avg_m[size_t(d)].add(psnr(uavg, ut, &mask));
                const float copy_m = t.cfg.mode == SynthesisMode::interpolation
                                         ? std::max(psnr(u0, ut, &mask), psnr(u1, ut, &mask))
                                         : psnr(u1, ut, &mask);
                b_copy_m[size_t(d)].add(copy_m);
                if (H >= 11 && W >= 11) {
                    // SSIM needs mask pixels at valid window centers.
                    bool interior = false;
                    for (int y = 5; y < H - 5 && !interior; ++y)
                        for (int x = 5; x < W - 5; ++x)
                            if (mask(y, x) > 0.5f) {
                                interior = true;
                                break;
                            }
                    if (interior) a_ssim_m[size_t(d)].add(ssim(up, ut, &mask));
                }
            }
        }

        // EPE of the projected displacement on the first synthesis step,
        // inside ground-truth sprite support.
        if (s.gt_flow.size() > 0 && t.cfg.mode == SynthesisMode::interpolation) {
            Tensor disp = frame_displacement(flows[0]);
            disp.reshape({2, H, W});
            Tensor support({H, W});
            long nsup = 0;
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    if (s.gt_flow(0, y, x) != 0.0f || s.gt_flow(1, y, x) != 0.0f) {
                        support(y, x) = 1.0f;
                        ++nsup;
                    }
            if (nsup > 0) a_epe.add(endpoint_error(disp, s.gt_flow, support));
        }
    }

    rep.samples = int(samples.size());
    for (int d = 0; d < D; ++d) {
        rep.full[size_t(d)] = MetricReport{MetricRegion::full, a_psnr_f[size_t(d)].mean(),
                                           a_ssim_f[size_t(d)].mean(),
                                           std::numeric_limits<float>::quiet_NaN()};
        rep.motion[size_t(d)] = MetricReport{MetricRegion::motion, a_psnr_m[size_t(d)].mean(),
                                             a_ssim_m[size_t(d)].mean(),
                                             std::numeric_limits<float>::quiet_NaN()};
        rep.baseline_avg_full[size_t(d)] = b_avg_f[size_t(d)].mean();
        rep.baseline_avg_motion[size_t(d)] = b_avg_m[size_t(d)].mean();
        rep.baseline_copy_full[size_t(d)] = b_copy_f[size_t(d)].mean();
        rep.baseline_copy_motion[size_t(d)] = b_copy_m[size_t(d)].mean();
    }
    if (a_epe.n > 0) rep.motion[0].epe = a_epe.mean();
    return rep;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainOptions {
    std::string checkpoint_path;  // written at every evaluation point and at the end
    std::function<void(const std::string&)> log;  // one line per record
    long log_every = 100;
};

/// Runs cfg.steps optimization steps (resuming from the trainer's current
/// step), evaluating every cfg.eval_every steps. Aborts with an exception if
/// the objective becomes non-finite or grows past 10x its value 100 steps
/// earlier.
inline void train(Trainer& t, const Dataset& data, const TrainOptions& opt = {}) {
    if (data.train.empty()) throw std::invalid_argument("train: dataset is empty");
    auto log = [&](const std::string& s) {
        if (opt.log) opt.log(s);
    };
    auto checkpoint = [&] {
        if (!opt.checkpoint_path.empty()) save_checkpoint(opt.checkpoint_path, t);
    };
    auto run_eval = [&] {
        if (data.eval.empty()) return;
        EvalReport r = evaluate(t, data.eval);
        std::istringstream ls(r.lines());
        std::string line;
        while (std::getline(ls, line)) log("eval." + line);
    };

    std::vector<float> history;
    history.reserve(size_t(std::max(t.cfg.steps - t.step, 0L)));
    while (t.step < t.cfg.steps) {
        const long k = t.step;
        Batch batch = assemble_batch(data.train,
                                     detail::batch_indices(t.cfg.seed, k, data.train.size(), t.cfg.batch));
        StepReport rep = t.train_step(batch);
        history.push_back(rep.objective);
        if (history.size() > 100) {
            const float past = history[history.size() - 101];
            if (rep.objective > 10.0f * past)
                throw std::runtime_error("training diverged at step " + std::to_string(k) +
                                         ": objective " + std::to_string(rep.objective) + " exceeds 10x " +
                                         std::to_string(past) + " from 100 steps prior");
        }
        if (opt.log_every > 0 && (k % opt.log_every == 0 || t.step == t.cfg.steps)) log(rep.line());
        if (t.step % t.cfg.eval_every == 0 && t.step < t.cfg.steps) {
            run_eval();
            checkpoint();
        }
    }
    run_eval();
    checkpoint();
}

} // namespace dvf

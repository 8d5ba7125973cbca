#pragma once

#include <cmath>

#include "dvf/sampler.hpp"
#include "dvf/tensor.hpp"

namespace dvf {

struct LossConfig {
    float lambda1 = 0.01f;   // motion-TV weight
    float lambda2 = 0.005f;  // mask-TV weight
    float eps_charb = 0.001f;

    void validate() const {
        if (lambda1 < 0.0f || lambda2 < 0.0f)
            throw std::invalid_argument("TV weights must be non-negative");
        if (!(eps_charb > 0.0f)) throw std::invalid_argument("eps_charb must be positive");
    }
};

struct LossReport {
    float total = 0.0f;
    float recon = 0.0f;
    float tv_motion = 0.0f;
    float tv_mask = 0.0f;
};

/// Φ(x) = sqrt(x² + ε²), the smooth l1 surrogate.
inline float charbonnier(float x, float eps) { return std::sqrt(x * x + eps * eps); }

/// dΦ/dx = x / Φ(x); bounded by 1 in magnitude.
inline float charbonnier_deriv(float x, float eps) { return x / charbonnier(x, eps); }

inline Tensor charbonnier(const Tensor& x, float eps) {
    Tensor y = x;
    for (int64_t i = 0; i < y.size(); ++i) y[i] = charbonnier(y[i], eps);
    return y;
}

/// Mean over all elements of Φ(pred − target); gradient w.r.t. pred.
inline std::pair<float, Tensor> reconstruction_loss(const Tensor& pred, const Tensor& target,
                                                    const LossConfig& cfg) {
    cfg.validate();
    require_same_shape(pred, target, "reconstruction loss");
    const int64_t n = pred.size();
    Tensor grad(pred.shape());
    double sum = 0.0;
    const float inv_n = 1.0f / float(n);
    for (int64_t i = 0; i < n; ++i) {
        const float d = pred[i] - target[i];
        sum += charbonnier(d, cfg.eps_charb);
        grad[i] = charbonnier_deriv(d, cfg.eps_charb) * inv_n;
    }
    return {float(sum / double(n)), std::move(grad)};
}

/// Charbonnier total variation of one 2-D field: sum over forward horizontal
/// and vertical differences, boundary pairs omitted. Returns the raw sum and
/// its gradient.
inline std::pair<float, Tensor> tv_regularizer(const Tensor& field, const LossConfig& cfg) {
    cfg.validate();
    if (field.rank() != 2)
        throw std::invalid_argument("tv_regularizer expects a 2-D field, got " + field.shape_string());
    const int H = field.extent(0), W = field.extent(1);
    if (H < 2 || W < 2)
        throw std::invalid_argument("tv_regularizer needs spatial extents >= 2, got " +
                                    field.shape_string());
    Tensor grad({H, W});
    double sum = 0.0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (x + 1 < W) {
                const float d = field.at(y, x + 1) - field.at(y, x);
                sum += charbonnier(d, cfg.eps_charb);
                const float dd = charbonnier_deriv(d, cfg.eps_charb);
                grad.at(y, x + 1) += dd;
                grad.at(y, x) -= dd;
            }
            if (y + 1 < H) {
                const float d = field.at(y + 1, x) - field.at(y, x);
                sum += charbonnier(d, cfg.eps_charb);
                const float dd = charbonnier_deriv(d, cfg.eps_charb);
                grad.at(y + 1, x) += dd;
                grad.at(y, x) -= dd;
            }
        }
    return {float(sum), std::move(grad)};
}

namespace detail {

// TV of one (batch, H, W) flow component, normalized by pixel count to match
// the reconstruction mean and averaged over the batch, so the lambda weights
// keep their meaning across image and batch sizes. Adds the scaled gradient
// into `grad_out`.
inline float tv_component(const Tensor& comp, const LossConfig& cfg, float lambda, Tensor& grad_out) {
    const int B = comp.extent(0), H = comp.extent(1), W = comp.extent(2);
    const float norm = 1.0f / (float(B) * float(H) * float(W));
    double sum = 0.0;
    for (int b = 0; b < B; ++b) {
        Tensor slice({H, W});
        std::memcpy(slice.data(), comp.data() + int64_t(b) * H * W, size_t(H) * W * 4);
        auto [s, g] = tv_regularizer(slice, cfg);
        sum += s;
        const float scale = lambda * norm;
        float* go = grad_out.data() + int64_t(b) * H * W;
        for (int64_t i = 0; i < g.size(); ++i) go[i] += scale * g[i];
    }
    return float(sum * norm);
}

} // namespace detail

/// recon + λ1·TV(Δx, Δy) + λ2·TV(Δt). TV terms are per-slice pair sums
/// normalized by pixel count and averaged over the batch, matching the
/// reconstruction normalization. The flow gradient carries only the TV terms;
/// the reconstruction term reaches the flow through the sampler backward.
inline std::tuple<LossReport, Tensor, VoxelFlowField> total_loss(const Tensor& pred,
                                                                 const Tensor& target,
                                                                 const VoxelFlowField& flow,
                                                                 const LossConfig& cfg) {
    cfg.validate();
    validate_flow(flow);
    auto [recon, grad_pred] = reconstruction_loss(pred, target, cfg);

    VoxelFlowField grad_flow(flow.batch(), flow.height(), flow.width());
    LossReport r;
    r.recon = recon;
    r.tv_motion = detail::tv_component(flow.delta_x, cfg, cfg.lambda1, grad_flow.delta_x) +
                  detail::tv_component(flow.delta_y, cfg, cfg.lambda1, grad_flow.delta_y);
    r.tv_mask = detail::tv_component(flow.delta_t, cfg, cfg.lambda2, grad_flow.delta_t);
    r.total = r.recon + cfg.lambda1 * r.tv_motion + cfg.lambda2 * r.tv_mask;
    return {r, std::move(grad_pred), std::move(grad_flow)};
}

} // namespace dvf

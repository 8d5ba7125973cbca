#pragma once

#include <cmath>

#include "dvf/tensor.hpp"

namespace dvf {

/// Per-output-pixel (Δx, Δy, Δt) triple addressing the two input frames:
/// the sample locations are L0 = (x−Δx, y−Δy) in frame 0 and
/// L1 = (x+Δx, y+Δy) in frame 1, blended by Δt.
struct VoxelFlowField {
    Tensor delta_x, delta_y, delta_t; // each (batch, H, W)

    VoxelFlowField() = default;
    VoxelFlowField(int batch, int h, int w)
        : delta_x({batch, h, w}), delta_y({batch, h, w}), delta_t({batch, h, w}) {}

    int batch() const { return delta_x.extent(0); }
    int height() const { return delta_x.extent(1); }
    int width() const { return delta_x.extent(2); }
};

inline void validate_flow(const VoxelFlowField& f, const char* what = "flow") {
    if (f.delta_x.rank() != 3)
        throw std::invalid_argument(std::string(what) + ": delta_x must be (batch, H, W), got " +
                                    f.delta_x.shape_string());
    require_same_shape(f.delta_x, f.delta_y, what);
    require_same_shape(f.delta_x, f.delta_t, what);
    if (!f.delta_x.all_finite() || !f.delta_y.all_finite() || !f.delta_t.all_finite())
        throw std::invalid_argument(std::string(what) + ": non-finite flow entries");
}

/// The eight integer corners around the two sample locations, with their
/// trilinear weights. Corner order: index = k*4 + j*2 + i where i selects the
/// x corner, j the y corner, k the frame. Geometry is kept in double so a
/// synthesized pixel is accurate to one float rounding of the exact blend.
struct VirtualVoxel {
    int corner_x[8], corner_y[8], corner_t[8];
    double corner_weights[8];
    double l0x, l0y, l1x, l1y; // source locations (unclamped)
    double fx0, fy0, fx1, fy1; // fractional parts of the source locations
    double dt;                 // temporal blend after clamping to [0, 1]
    bool dt_clamped = false;
};

inline VirtualVoxel build_virtual_voxel(int x, int y, float dx, float dy, float dt, int H, int W) {
    VirtualVoxel v;
    v.l0x = double(x) - double(dx);
    v.l0y = double(y) - double(dy);
    v.l1x = double(x) + double(dx);
    v.l1y = double(y) + double(dy);
    v.dt_clamped = dt < 0.0f || dt > 1.0f;
    v.dt = std::min(std::max(double(dt), 0.0), 1.0);

    const double fl0x = std::floor(v.l0x), fl0y = std::floor(v.l0y);
    const double fl1x = std::floor(v.l1x), fl1y = std::floor(v.l1y);
    v.fx0 = v.l0x - fl0x;
    v.fy0 = v.l0y - fl0y;
    v.fx1 = v.l1x - fl1x;
    v.fy1 = v.l1y - fl1y;

    auto clampi = [](double c, int n) {
        return c < 0.0 ? 0 : (c > double(n - 1) ? n - 1 : int(c));
    };
    const int x0[2] = {clampi(fl0x, W), clampi(fl0x + 1.0, W)};
    const int y0[2] = {clampi(fl0y, H), clampi(fl0y + 1.0, H)};
    const int x1[2] = {clampi(fl1x, W), clampi(fl1x + 1.0, W)};
    const int y1[2] = {clampi(fl1y, H), clampi(fl1y + 1.0, H)};

    for (int k = 0; k < 2; ++k) {
        const double wt = k ? v.dt : 1.0 - v.dt;
        const double fx = k ? v.fx1 : v.fx0;
        const double fy = k ? v.fy1 : v.fy0;
        for (int j = 0; j < 2; ++j)
            for (int i = 0; i < 2; ++i) {
                const int n = k * 4 + j * 2 + i;
                v.corner_x[n] = k ? x1[i] : x0[i];
                v.corner_y[n] = k ? y1[j] : y0[j];
                v.corner_t[n] = k;
                v.corner_weights[n] = (i ? fx : 1.0 - fx) * (j ? fy : 1.0 - fy) * wt;
            }
    }
    return v;
}

namespace detail {

inline void check_sampler_shapes(const Tensor& video, const VoxelFlowField& flow) {
    if (video.rank() != 4)
        throw std::invalid_argument("sampler video must be 4-D, got " + video.shape_string());
    if (video.extent(1) % 2 != 0)
        throw std::invalid_argument("sampler video needs an even channel count (2 frames), got " +
                                    video.shape_string());
    validate_flow(flow);
    if (flow.batch() != video.extent(0) || flow.height() != video.extent(2) ||
        flow.width() != video.extent(3))
        throw std::invalid_argument("flow extents (" + flow.delta_x.shape_string() +
                                    ") do not match video " + video.shape_string());
}

} // namespace detail

/// Ŷ(x,y) = Σ_{ijk} W^{ijk} · X(V^{ijk}), applied per color channel.
/// `video` packs the two frames as (batch, 2·C, H, W).
inline Tensor sample_forward(const Tensor& video, const VoxelFlowField& flow) {
    detail::check_sampler_shapes(video, flow);
    const int B = video.extent(0), C = video.extent(1) / 2, H = video.extent(2), W = video.extent(3);
    Tensor out({B, C, H, W});
    for (int b = 0; b < B; ++b)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const VirtualVoxel v = build_virtual_voxel(x, y, flow.delta_x.at(b, y, x),
                                                           flow.delta_y.at(b, y, x),
                                                           flow.delta_t.at(b, y, x), H, W);
                for (int c = 0; c < C; ++c) {
                    double acc = 0.0;
                    for (int n = 0; n < 8; ++n)
                        acc += v.corner_weights[n] *
                               video.at(b, v.corner_t[n] * C + c, v.corner_y[n], v.corner_x[n]);
                    out.at(b, c, y, x) = float(acc);
                }
            }
    return out;
}

/// Gradients of the loss with respect to the flow components (and optionally
/// the input video), given the upstream gradient on the synthesized frame.
struct SamplerGrad {
    Tensor d_delta_x, d_delta_y, d_delta_t; // shaped like the flow components
    Tensor d_input;                         // shaped like the video; empty unless requested
};

inline SamplerGrad sample_backward(const Tensor& video, const VoxelFlowField& flow,
                                   const Tensor& upstream, bool want_input_grad = true) {
    detail::check_sampler_shapes(video, flow);
    const int B = video.extent(0), C = video.extent(1) / 2, H = video.extent(2), W = video.extent(3);
    if (upstream.shape() != std::vector<int>{B, C, H, W})
        throw std::invalid_argument("sampler upstream has shape " + upstream.shape_string() +
                                    ", expected one synthesized frame per batch element");
    SamplerGrad g;
    g.d_delta_x = Tensor({B, H, W});
    g.d_delta_y = Tensor({B, H, W});
    g.d_delta_t = Tensor({B, H, W});
    if (want_input_grad) g.d_input = Tensor(video.shape());

    for (int b = 0; b < B; ++b)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const VirtualVoxel v = build_virtual_voxel(x, y, flow.delta_x.at(b, y, x),
                                                           flow.delta_y.at(b, y, x),
                                                           flow.delta_t.at(b, y, x), H, W);
                const float w0 = 1.0f - v.dt, w1 = v.dt;
                float gx = 0.0f, gy = 0.0f, gt = 0.0f;
                for (int c = 0; c < C; ++c) {
                    const float up = upstream.at(b, c, y, x);
                    if (want_input_grad)
                        for (int n = 0; n < 8; ++n)
                            g.d_input.at(b, v.corner_t[n] * C + c, v.corner_y[n], v.corner_x[n]) +=
                                v.corner_weights[n] * up;
                    // corner gathers: X0[j*2+i] from frame 0, X1 from frame 1
                    float x0v[4], x1v[4];
                    for (int j = 0; j < 2; ++j)
                        for (int i = 0; i < 2; ++i) {
                            x0v[j * 2 + i] = video.at(b, c, v.corner_y[j * 2 + i], v.corner_x[j * 2 + i]);
                            x1v[j * 2 + i] =
                                video.at(b, C + c, v.corner_y[4 + j * 2 + i], v.corner_x[4 + j * 2 + i]);
                        }
                    // ∂Ŷ/∂Δx: the frame-0 location moves by −Δx, the frame-1 one by +Δx.
                    const float dx0 = (1.0f - v.fy0) * (x0v[1] - x0v[0]) + v.fy0 * (x0v[3] - x0v[2]);
                    const float dx1 = (1.0f - v.fy1) * (x1v[1] - x1v[0]) + v.fy1 * (x1v[3] - x1v[2]);
                    gx += up * (w1 * dx1 - w0 * dx0);
                    const float dy0 = (1.0f - v.fx0) * (x0v[2] - x0v[0]) + v.fx0 * (x0v[3] - x0v[1]);
                    const float dy1 = (1.0f - v.fx1) * (x1v[2] - x1v[0]) + v.fx1 * (x1v[3] - x1v[1]);
                    gy += up * (w1 * dy1 - w0 * dy0);
                    // ∂Ŷ/∂Δt = bilerp(frame1 @ L1) − bilerp(frame0 @ L0)
                    const float b0 = (1.0f - v.fy0) * ((1.0f - v.fx0) * x0v[0] + v.fx0 * x0v[1]) +
                                     v.fy0 * ((1.0f - v.fx0) * x0v[2] + v.fx0 * x0v[3]);
                    const float b1 = (1.0f - v.fy1) * ((1.0f - v.fx1) * x1v[0] + v.fx1 * x1v[1]) +
                                     v.fy1 * ((1.0f - v.fx1) * x1v[2] + v.fx1 * x1v[3]);
                    if (!v.dt_clamped) gt += up * (b1 - b0);
                }
                g.d_delta_x.at(b, y, x) = gx;
                g.d_delta_y.at(b, y, x) = gy;
                g.d_delta_t.at(b, y, x) = gt;
            }
    return g;
}

/// Splits F into its 2-D motion field (Δx, Δy) and temporal mask (Δt).
inline std::pair<Tensor, Tensor> project_flow(const VoxelFlowField& flow) {
    validate_flow(flow);
    const int B = flow.batch(), H = flow.height(), W = flow.width();
    Tensor motion({B, 2, H, W}), mask({B, 1, H, W});
    for (int b = 0; b < B; ++b)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                motion.at(b, 0, y, x) = flow.delta_x.at(b, y, x);
                motion.at(b, 1, y, x) = flow.delta_y.at(b, y, x);
                mask.at(b, 0, y, x) = flow.delta_t.at(b, y, x);
            }
    return {std::move(motion), std::move(mask)};
}

/// Frame0 → frame1 displacement under the symmetric-flow assumption: 2·(Δx, Δy).
inline Tensor frame_displacement(const VoxelFlowField& flow) {
    auto [motion, mask] = project_flow(flow);
    for (int64_t i = 0; i < motion.size(); ++i) motion[i] *= 2.0f;
    return motion;
}

/// Packs a flow field as a (batch, 3, H, W) tensor in channel order (Δx, Δy, Δt).
inline Tensor flow_to_tensor(const VoxelFlowField& flow) {
    validate_flow(flow);
    const int B = flow.batch(), H = flow.height(), W = flow.width();
    Tensor t({B, 3, H, W});
    for (int b = 0; b < B; ++b)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                t.at(b, 0, y, x) = flow.delta_x.at(b, y, x);
                t.at(b, 1, y, x) = flow.delta_y.at(b, y, x);
                t.at(b, 2, y, x) = flow.delta_t.at(b, y, x);
            }
    return t;
}

inline VoxelFlowField tensor_to_flow(const Tensor& t) {
    if (t.rank() != 4 || t.extent(1) != 3)
        throw std::invalid_argument("flow tensor must be (batch, 3, H, W), got " + t.shape_string());
    const int B = t.extent(0), H = t.extent(2), W = t.extent(3);
    VoxelFlowField f(B, H, W);
    for (int b = 0; b < B; ++b)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                f.delta_x.at(b, y, x) = t.at(b, 0, y, x);
                f.delta_y.at(b, y, x) = t.at(b, 1, y, x);
                f.delta_t.at(b, y, x) = t.at(b, 2, y, x);
            }
    return f;
}

} // namespace dvf

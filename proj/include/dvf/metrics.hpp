#pragma once

// Image quality metrics over denormalized [0,1] images: PSNR, windowed SSIM,
// motion masks, and flow endpoint error. Accumulation runs in double.

#include "dvf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dvf {

namespace detail {

inline void check_image(const Tensor& t, const char* what) {
    if (t.rank() != 3)
        throw std::invalid_argument(std::string(what) + ": expected (C,H,W) image, got " + t.shape_string());
}

// Accepts (H,W) or (1,H,W) masks; a pixel is selected when its value > 0.5.
inline const float* check_mask(const Tensor* mask, int h, int w, const char* what) {
    if (!mask) return nullptr;
    const bool ok = (mask->rank() == 2 && mask->extent(0) == h && mask->extent(1) == w) ||
                    (mask->rank() == 3 && mask->extent(0) == 1 && mask->extent(1) == h && mask->extent(2) == w);
    if (!ok)
        throw std::invalid_argument(std::string(what) + ": mask shape " + mask->shape_string() +
                                    " does not match " + std::to_string(h) + "x" + std::to_string(w));
    return mask->data();
}

} // namespace detail

// ---------------------------------------------------------------------------
// PSNR, peak 1.0, capped at 99 dB (and reported as 99 when MSE is zero).
// ---------------------------------------------------------------------------

inline float psnr(const Tensor& a, const Tensor& b, const Tensor* mask = nullptr) {
    detail::check_image(a, "psnr");
    require_same_shape(a, b, "psnr");
    const int c = a.extent(0), h = a.extent(1), w = a.extent(2);
    const float* m = detail::check_mask(mask, h, w, "psnr");
    double acc = 0.0;
    long n = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (m && !(m[y * w + x] > 0.5f)) continue;
            for (int ch = 0; ch < c; ++ch) {
                double d = double(a(ch, y, x)) - double(b(ch, y, x));
                acc += d * d;
            }
            n += c;
        }
    if (n == 0) throw std::invalid_argument("psnr: mask selects no pixels");
    double mse = acc / double(n);
    if (mse <= 0.0) return 99.0f;
    return float(std::min(10.0 * std::log10(1.0 / mse), 99.0));
}

// ---------------------------------------------------------------------------
// SSIM: mean local SSIM with an 11x11 Gaussian window (sigma 1.5), stability
// constants C1=0.01^2, C2=0.03^2, evaluated on fully valid windows only.
// ---------------------------------------------------------------------------

inline float ssim(const Tensor& a, const Tensor& b, const Tensor* mask = nullptr) {
    detail::check_image(a, "ssim");
    require_same_shape(a, b, "ssim");
    const int c = a.extent(0), h = a.extent(1), w = a.extent(2);
    constexpr int K = 11, R = K / 2;
    if (h < K || w < K)
        throw std::invalid_argument("ssim: image extents must be at least 11x11, got " + a.shape_string());
    const float* m = detail::check_mask(mask, h, w, "ssim");

    double win[K][K];
    {
        double g[K], sum = 0.0;
        for (int i = 0; i < K; ++i) {
            g[i] = std::exp(-double(i - R) * (i - R) / (2.0 * 1.5 * 1.5));
            sum += g[i];
        }
        for (int i = 0; i < K; ++i) g[i] /= sum;
        for (int y = 0; y < K; ++y)
            for (int x = 0; x < K; ++x) win[y][x] = g[y] * g[x];
    }
    constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;

    double acc = 0.0;
    long n = 0;
    for (int ch = 0; ch < c; ++ch)
        for (int y = R; y < h - R; ++y)
            for (int x = R; x < w - R; ++x) {
                if (m && !(m[y * w + x] > 0.5f)) continue;
                double ma = 0, mb = 0, maa = 0, mbb = 0, mab = 0;
                for (int dy = -R; dy <= R; ++dy)
                    for (int dx = -R; dx <= R; ++dx) {
                        double wgt = win[dy + R][dx + R];
                        double va = a(ch, y + dy, x + dx);
                        double vb = b(ch, y + dy, x + dx);
                        ma += wgt * va;
                        mb += wgt * vb;
                        maa += wgt * va * va;
                        mbb += wgt * vb * vb;
                        mab += wgt * va * vb;
                    }
                double sa = maa - ma * ma, sb = mbb - mb * mb, sab = mab - ma * mb;
                acc += ((2.0 * ma * mb + C1) * (2.0 * sab + C2)) /
                       ((ma * ma + mb * mb + C1) * (sa + sb + C2));
                ++n;
            }
    if (n == 0) throw std::invalid_argument("ssim: mask selects no valid windows");
    return float(acc / double(n));
}

// ---------------------------------------------------------------------------
// Motion mask: pixels whose max-over-channel absolute frame difference
// exceeds tau, dilated by one pixel. Frames are in normalized units.
// ---------------------------------------------------------------------------

inline Tensor motion_mask(const Tensor& f0, const Tensor& f1, float tau = 0.05f) {
    detail::check_image(f0, "motion_mask");
    require_same_shape(f0, f1, "motion_mask");
    const int c = f0.extent(0), h = f0.extent(1), w = f0.extent(2);
    Tensor base({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            float d = 0.0f;
            for (int ch = 0; ch < c; ++ch) d = std::max(d, std::abs(f1(ch, y, x) - f0(ch, y, x)));
            base(y, x) = d > tau ? 1.0f : 0.0f;
        }
    Tensor out({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            float v = 0.0f;
            for (int dy = -1; dy <= 1 && v == 0.0f; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    int yy = y + dy, xx = x + dx;
                    if (yy >= 0 && yy < h && xx >= 0 && xx < w && base(yy, xx) > 0.5f) {
                        v = 1.0f;
                        break;
                    }
                }
            out(y, x) = v;
        }
    return out;
}

inline long mask_count(const Tensor& mask) {
    long n = 0;
    for (int i = 0; i < mask.size(); ++i)
        if (mask[i] > 0.5f) ++n;
    return n;
}

// ---------------------------------------------------------------------------
// Endpoint error: mean Euclidean distance between predicted and ground-truth
// displacement over masked pixels. Flows are (2,H,W): (dx, dy).
// ---------------------------------------------------------------------------

inline float endpoint_error(const Tensor& pred, const Tensor& gt, const Tensor& mask) {
    if (pred.rank() != 3 || pred.extent(0) != 2)
        throw std::invalid_argument("endpoint_error: expected (2,H,W) flow, got " + pred.shape_string());
    require_same_shape(pred, gt, "endpoint_error");
    const int h = pred.extent(1), w = pred.extent(2);
    const float* m = detail::check_mask(&mask, h, w, "endpoint_error");
    double acc = 0.0;
    long n = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!(m[y * w + x] > 0.5f)) continue;
            double du = double(pred(0, y, x)) - double(gt(0, y, x));
            double dv = double(pred(1, y, x)) - double(gt(1, y, x));
            acc += std::sqrt(du * du + dv * dv);
            ++n;
        }
    if (n == 0) throw std::invalid_argument("endpoint_error: mask selects no pixels");
    return float(acc / double(n));
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

enum class MetricRegion { full, motion };

inline const char* region_name(MetricRegion r) { return r == MetricRegion::full ? "full" : "motion"; }

struct MetricReport {
    MetricRegion region = MetricRegion::full;
    float psnr_db = 0.0f;
    float ssim = 0.0f;
    float epe = std::numeric_limits<float>::quiet_NaN();  // NaN when not applicable

    bool has_epe() const { return !std::isnan(epe); }
};

/// One "name=value" record per line, prefixed by the region.
inline std::string metric_lines(const MetricReport& r) {
    std::ostringstream os;
    os << region_name(r.region) << ".psnr_db=" << r.psnr_db << "\n";
    os << region_name(r.region) << ".ssim=" << r.ssim << "\n";
    if (r.has_epe()) os << region_name(r.region) << ".epe=" << r.epe << "\n";
    return std::move(os).str();
}

} // namespace dvf

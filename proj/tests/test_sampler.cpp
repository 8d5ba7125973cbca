#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "dvf/gradcheck.hpp"
#include "dvf/sampler.hpp"

using namespace dvf;
using Catch::Approx;

namespace {

VoxelFlowField constant_flow(int b, int h, int w, float dx, float dy, float dt) {
    VoxelFlowField f(b, h, w);
    f.delta_x.fill(dx);
    f.delta_y.fill(dy);
    f.delta_t.fill(dt);
    return f;
}

Tensor random_video(int b, int c2, int h, int w, uint64_t seed, float lo = 0.0f, float hi = 1.0f) {
    Tensor t({b, c2, h, w});
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> d(lo, hi);
    for (int64_t i = 0; i < t.size(); ++i) t[i] = d(rng);
    return t;
}

} // namespace

TEST_CASE("virtual voxel at integer location", "[sampler]") {
    VirtualVoxel v = build_virtual_voxel(1, 1, 0.0f, 0.0f, 0.25f, 4, 4);
    float sum = 0.0f;
    for (float w : v.corner_weights) sum += w;
    REQUIRE(sum == Approx(1.0f).margin(1e-6));
    // zero fractions: only the i=j=0 corner of each frame carries weight
    CHECK(v.corner_weights[0] == Approx(0.75f)); // t=0 face gets 1-Δt
    CHECK(v.corner_weights[4] == Approx(0.25f)); // t=1 face gets Δt
    for (int n : {1, 2, 3, 5, 6, 7}) CHECK(v.corner_weights[n] == 0.0f);
    CHECK(v.corner_x[0] == 1);
    CHECK(v.corner_y[0] == 1);
    CHECK(v.corner_t[0] == 0);
    CHECK(v.corner_t[4] == 1);
}

TEST_CASE("virtual voxel with half-pixel offset", "[sampler]") {
    VirtualVoxel v = build_virtual_voxel(2, 2, 0.5f, 0.0f, 0.0f, 4, 4);
    CHECK(v.l0x == Approx(1.5f));
    CHECK(v.l0y == Approx(2.0f));
    // Δt = 0: all weight on the t=0 face, split across x ∈ {1, 2}
    CHECK(v.corner_weights[0] == Approx(0.5f));
    CHECK(v.corner_weights[1] == Approx(0.5f));
    CHECK(v.corner_x[0] == 1);
    CHECK(v.corner_x[1] == 2);
    for (int n = 4; n < 8; ++n) CHECK(v.corner_weights[n] == 0.0f);
}

TEST_CASE("virtual voxel weights match the direct formula", "[sampler]") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<float> sd(-2.0f, 2.0f), td(0.0f, 1.0f);
    std::uniform_int_distribution<int> pd(0, 3);
    for (int trial = 0; trial < 200; ++trial) {
        const int x = pd(rng), y = pd(rng);
        const float dx = sd(rng), dy = sd(rng), dt = td(rng);
        VirtualVoxel v = build_virtual_voxel(x, y, dx, dy, dt, 4, 4);

        // direct evaluation of the trilinear weight products
        const float fx0 = (x - dx) - std::floor(x - dx), fy0 = (y - dy) - std::floor(y - dy);
        const float fx1 = (x + dx) - std::floor(x + dx), fy1 = (y + dy) - std::floor(y + dy);
        float sum = 0.0f;
        for (int k = 0; k < 2; ++k)
            for (int j = 0; j < 2; ++j)
                for (int i = 0; i < 2; ++i) {
                    const float fx = k ? fx1 : fx0, fy = k ? fy1 : fy0;
                    const float expect =
                        (i ? fx : 1.0f - fx) * (j ? fy : 1.0f - fy) * (k ? dt : 1.0f - dt);
                    CHECK(v.corner_weights[k * 4 + j * 2 + i] == Approx(expect).margin(1e-6));
                    sum += v.corner_weights[k * 4 + j * 2 + i];
                }
        CHECK(sum == Approx(1.0f).margin(1e-6));
    }
}

TEST_CASE("sample_forward blends constant frames by delta_t", "[sampler]") {
    Tensor video({1, 2, 4, 4});
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) video.at(0, 1, y, x) = 1.0f; // frame1 = 1, frame0 = 0
    Tensor out = sample_forward(video, constant_flow(1, 4, 4, 0.0f, 0.0f, 0.25f));
    for (int64_t i = 0; i < out.size(); ++i) REQUIRE(out[i] == Approx(0.25f).margin(1e-7));
}

TEST_CASE("sample_forward on a ramp shifts linearly", "[sampler]") {
    Tensor video({1, 2, 6, 6});
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x) video.at(0, 0, y, x) = float(x);
    Tensor out = sample_forward(video, constant_flow(1, 6, 6, 0.5f, 0.0f, 0.0f));
    CHECK(out.at(0, 0, 2, 2) == Approx(1.5f)); // X(x) = x sampled at x - 0.5
}

TEST_CASE("sample_forward matches the brute-force reference", "[sampler]") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<float> sd(-3.0f, 3.0f), td(0.0f, 1.0f);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor video = random_video(1, 2, 16, 16, 1000 + trial);
        VoxelFlowField flow(1, 16, 16);
        for (int64_t i = 0; i < flow.delta_x.size(); ++i) {
            flow.delta_x[i] = sd(rng);
            flow.delta_y[i] = sd(rng);
            flow.delta_t[i] = td(rng);
        }
        Tensor out = sample_forward(video, flow);
        const auto video_d = gradcheck::to_double(video);
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) {
                const double ref = gradcheck::ref_sample_pixel(
                    video_d, 1, 1, 16, 16, 0, 0, x, y, flow.delta_x.at(0, y, x),
                    flow.delta_y.at(0, y, x), flow.delta_t.at(0, y, x));
                REQUIRE(std::abs(double(out.at(0, 0, y, x)) - ref) <= 1e-6);
            }
    }
}

TEST_CASE("sampler shape validation", "[sampler]") {
    Tensor odd({1, 3, 4, 4}); // odd channel count: not two frames
    REQUIRE_THROWS_AS(sample_forward(odd, constant_flow(1, 4, 4, 0, 0, 0.5f)),
                      std::invalid_argument);
    Tensor video({1, 2, 4, 4});
    REQUIRE_THROWS_AS(sample_forward(video, constant_flow(1, 8, 8, 0, 0, 0.5f)),
                      std::invalid_argument);
}

TEST_CASE("zero flow with integral delta_t reproduces an input frame", "[sampler]") {
    Tensor video = random_video(2, 6, 8, 8, 77, -1.0f, 1.0f); // 3 channels, 2 frames
    Tensor f0 = sample_forward(video, constant_flow(2, 8, 8, 0, 0, 0.0f));
    Tensor f1 = sample_forward(video, constant_flow(2, 8, 8, 0, 0, 1.0f));
    for (int b = 0; b < 2; ++b)
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x) {
                    REQUIRE(f0.at(b, c, y, x) == video.at(b, c, y, x));
                    REQUIRE(f1.at(b, c, y, x) == video.at(b, c + 3, y, x));
                }
}

TEST_CASE("interpolation stays within the corner hull", "[sampler]") {
    Tensor video = random_video(1, 2, 8, 8, 31);
    std::mt19937_64 rng(32);
    std::uniform_real_distribution<float> sd(-4.0f, 4.0f), td(0.0f, 1.0f);
    VoxelFlowField flow(1, 8, 8);
    for (int64_t i = 0; i < flow.delta_x.size(); ++i) {
        flow.delta_x[i] = sd(rng);
        flow.delta_y[i] = sd(rng);
        flow.delta_t[i] = td(rng);
    }
    Tensor out = sample_forward(video, flow);
    float vmin = 1e9f, vmax = -1e9f;
    for (int64_t i = 0; i < video.size(); ++i) {
        vmin = std::min(vmin, video[i]);
        vmax = std::max(vmax, video[i]);
    }
    for (int64_t i = 0; i < out.size(); ++i) {
        REQUIRE(out[i] >= vmin - 1e-6f);
        REQUIRE(out[i] <= vmax + 1e-6f);
    }
}

TEST_CASE("sample_backward blend derivative on constant frames", "[sampler]") {
    Tensor video({1, 2, 4, 4});
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) video.at(0, 1, y, x) = 1.0f;
    Tensor up = Tensor::full({1, 1, 4, 4}, 1.0f);
    SamplerGrad g = sample_backward(video, constant_flow(1, 4, 4, 0, 0, 0.5f), up);
    for (int64_t i = 0; i < g.d_delta_t.size(); ++i)
        REQUIRE(g.d_delta_t[i] == Approx(1.0f)); // frame1 - frame0
}

TEST_CASE("sample_backward ramp derivative", "[sampler]") {
    Tensor video({1, 2, 8, 8});
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) video.at(0, 0, y, x) = float(x);
    Tensor up = Tensor::full({1, 1, 8, 8}, 1.0f);
    SamplerGrad g = sample_backward(video, constant_flow(1, 8, 8, 0.3f, 0.0f, 0.0f), up);
    // Ŷ = x - Δx on interior pixels, so ∂Ŷ/∂Δx = -1
    for (int y = 0; y < 8; ++y)
        for (int x = 2; x < 7; ++x) REQUIRE(g.d_delta_x.at(0, y, x) == Approx(-1.0f).margin(1e-6));
}

TEST_CASE("sample_backward input gradient satisfies the adjoint identity", "[sampler]") {
    Tensor video = random_video(2, 4, 8, 8, 41, -1.0f, 1.0f);
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<float> sd(-2.5f, 2.5f), td(0.0f, 1.0f), ud(-1.0f, 1.0f);
    VoxelFlowField flow(2, 8, 8);
    for (int64_t i = 0; i < flow.delta_x.size(); ++i) {
        flow.delta_x[i] = sd(rng);
        flow.delta_y[i] = sd(rng);
        flow.delta_t[i] = td(rng);
    }
    Tensor up({2, 2, 8, 8});
    for (int64_t i = 0; i < up.size(); ++i) up[i] = ud(rng);

    Tensor out = sample_forward(video, flow);
    SamplerGrad g = sample_backward(video, flow, up, true);
    double lhs = 0.0, rhs = 0.0;
    for (int64_t i = 0; i < out.size(); ++i) lhs += double(out[i]) * double(up[i]);
    for (int64_t i = 0; i < video.size(); ++i) rhs += double(video[i]) * double(g.d_input[i]);
    REQUIRE(std::abs(lhs - rhs) <= 1e-5 * std::max(1.0, std::abs(lhs)));
}

TEST_CASE("sampler flow gradients match finite differences", "[sampler][gradcheck]") {
    auto results = gradcheck::check_sampler();
    REQUIRE(results.size() == 3);
    for (const auto& r : results) {
        INFO(r.component << " worst rel err " << r.worst_rel_err);
        CHECK(r.pass);
        CHECK(r.tolerance == 1e-4);
    }
}

TEST_CASE("flow projection and round-trips", "[sampler]") {
    VoxelFlowField flow = constant_flow(1, 4, 4, 1.0f, -2.0f, 0.5f);
    auto [motion, mask] = project_flow(flow);
    CHECK(motion.at(0, 0, 2, 2) == 1.0f);
    CHECK(motion.at(0, 1, 2, 2) == -2.0f);
    CHECK(mask.at(0, 0, 2, 2) == 0.5f);
    Tensor disp = frame_displacement(flow);
    CHECK(disp.at(0, 0, 1, 1) == 2.0f);
    CHECK(disp.at(0, 1, 1, 1) == -4.0f);

    VoxelFlowField zero = constant_flow(1, 4, 4, 0, 0, 0);
    auto [zm, zk] = project_flow(zero);
    for (int64_t i = 0; i < zm.size(); ++i) REQUIRE(zm[i] == 0.0f);
    for (int64_t i = 0; i < zk.size(); ++i) REQUIRE(zk[i] == 0.0f);

    Tensor packed = flow_to_tensor(flow);
    REQUIRE(packed.shape() == std::vector<int>{1, 3, 4, 4});
    VoxelFlowField back = tensor_to_flow(packed);
    for (int64_t i = 0; i < flow.delta_x.size(); ++i) {
        REQUIRE(back.delta_x[i] == flow.delta_x[i]);
        REQUIRE(back.delta_y[i] == flow.delta_y[i]);
        REQUIRE(back.delta_t[i] == flow.delta_t[i]);
    }
}

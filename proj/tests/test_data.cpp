#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "dvf/data.hpp"

using namespace dvf;
using Catch::Approx;

namespace {

std::string tmp_path(const std::string& name) {
    static const std::filesystem::path dir = [] {
        auto d = std::filesystem::temp_directory_path() / "dvf_data_tests";
        std::filesystem::create_directories(d);
        return d;
    }();
    return (dir / name).string();
}

void write_raw(const std::string& path, const std::string& bytes) {
    std::ofstream os(path, std::ios::binary);
    os.write(bytes.data(), std::streamsize(bytes.size()));
}

bool same_values(const Tensor& a, const Tensor& b) {
    return a.same_shape(b) && std::memcmp(a.data(), b.data(), size_t(a.size()) * 4) == 0;
}

} // namespace

TEST_CASE("pixel normalization endpoints and exhaustive round trip", "[data]") {
    CHECK(normalize_u8(0) == -1.0f);
    CHECK(normalize_u8(255) == 1.0f);
    CHECK(normalize_u8(128) == Approx(0.00392157f).margin(1e-6));

    for (int v = 0; v <= 255; ++v)
        REQUIRE(int(denormalize_u8(normalize_u8(uint8_t(v)))) == v);

    CHECK(denormalize_u8(-1.5f) == 0);   // clamped below
    CHECK(denormalize_u8(2.0f) == 255);  // clamped above
    CHECK(denormalize_u8(0.0f) == 128);  // 127.5 rounds half up
}

TEST_CASE("image tensor conversion round trip", "[data]") {
    std::mt19937 rng(11);
    ImageU8 img;
    img.h = 4;
    img.w = 5;
    img.c = 3;
    img.pixels.resize(60);
    for (auto& p : img.pixels) p = uint8_t(rng() % 256);

    Tensor t = normalize(img);
    REQUIRE(t.rank() == 3);
    CHECK(t.extent(0) == 3);
    CHECK(t.extent(1) == 4);
    CHECK(t.extent(2) == 5);
    CHECK(t(1, 2, 3) == normalize_u8(img.at(2, 3, 1)));

    ImageU8 back = denormalize(t);
    REQUIRE(back.pixels == img.pixels);

    Tensor unit = to_unit(t);
    CHECK(unit(0, 0, 0) == Approx(float(img.at(0, 0, 0)) / 255.0f).margin(1e-7));

    Tensor bad({2, 4, 4});
    CHECK_THROWS_AS(denormalize(bad), std::invalid_argument);
}

TEST_CASE("square scene moves at constant velocity", "[data]") {
    SceneSpec spec;
    spec.height = 32;
    spec.width = 32;
    spec.frames = 3;
    spec.seed = 5;
    Sprite sq;
    sq.kind = SpriteKind::square;
    sq.size = 8.0f;
    sq.x = 10.0f;
    sq.y = 12.0f;
    sq.vx = 2.0f;
    sq.vy = 0.0f;
    spec.sprites.push_back(sq);

    RenderedScene scene = render_scene(spec);
    REQUIRE(scene.video.rank() == 4);
    CHECK(scene.video.extent(0) == 3);
    CHECK(scene.video.extent(1) == 1);
    CHECK(scene.video.extent(2) == 32);
    CHECK(scene.video.extent(3) == 32);
    for (int i = 0; i < scene.video.size(); ++i) {
        REQUIRE(scene.video[i] >= -1.0f);
        REQUIRE(scene.video[i] <= 1.0f);
    }

    // Integer velocity over a static flat background: frame l+1 is frame l
    // shifted by exactly (2, 0) pixels wherever both columns exist.
    for (int l = 0; l + 1 < 3; ++l)
        for (int y = 0; y < 32; ++y)
            for (int x = 2; x < 32; ++x)
                REQUIRE(scene.video(l + 1, 0, y, x) == scene.video(l, 0, y, x - 2));

    // Ground-truth flow: velocity inside the square's support, zero beyond it.
    for (int l = 0; l < 3; ++l) {
        const float cx = 10.0f + 2.0f * l;
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) {
                const bool inside = std::abs(x - cx) <= 4.0f && std::abs(y - 12.0f) <= 4.0f;
                REQUIRE(scene.flow[l](0, y, x) == (inside ? 2.0f : 0.0f));
                REQUIRE(scene.flow[l](1, y, x) == 0.0f);
            }
    }

    // Bit-identical rerun.
    RenderedScene again = render_scene(spec);
    REQUIRE(same_values(again.video, scene.video));
    for (int l = 0; l < 3; ++l) REQUIRE(same_values(again.flow[l], scene.flow[l]));
}

TEST_CASE("static scene renders identical frames with zero flow", "[data]") {
    SceneSpec spec;
    spec.frames = 4;
    spec.seed = 9;
    Sprite d;
    d.kind = SpriteKind::disk;
    d.size = 10.0f;
    d.x = 16.25f;
    d.y = 15.5f;
    spec.sprites.push_back(d);

    RenderedScene scene = render_scene(spec);
    for (int l = 1; l < 4; ++l)
        REQUIRE(std::memcmp(scene.video.data(), scene.video.data() + l * 32 * 32, 32 * 32 * 4) == 0);
    for (const Tensor& f : scene.flow)
        for (int i = 0; i < f.size(); ++i) REQUIRE(f[i] == 0.0f);
}

TEST_CASE("fractional velocity keeps ground-truth flow exact", "[data]") {
    SceneSpec spec;
    spec.frames = 5;
    spec.seed = 21;
    Sprite d;
    d.kind = SpriteKind::disk;
    d.size = 9.0f;
    d.x = 12.0f;
    d.y = 14.0f;
    d.vx = 0.5f;
    d.vy = 0.25f;
    spec.sprites.push_back(d);

    RenderedScene scene = render_scene(spec);
    bool any_inside = false;
    for (int l = 0; l < 5; ++l) {
        const float cx = 12.0f + 0.5f * l, cy = 14.0f + 0.25f * l;
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) {
                const bool inside = std::hypot(x - cx, y - cy) <= 4.5f;
                any_inside = any_inside || inside;
                REQUIRE(scene.flow[l](0, y, x) == (inside ? 0.5f : 0.0f));
                REQUIRE(scene.flow[l](1, y, x) == (inside ? 0.25f : 0.0f));
            }
    }
    REQUIRE(any_inside);

    // Sub-pixel motion must actually change the rendering.
    bool changed = false;
    for (int i = 0; i < 32 * 32 && !changed; ++i)
        changed = scene.video[i] != scene.video[i + 32 * 32];
    CHECK(changed);
}

TEST_CASE("scene validation rejects bad specs", "[data]") {
    SceneSpec spec;
    spec.frames = 2;
    CHECK_THROWS_WITH(render_scene(spec), Catch::Matchers::ContainsSubstring("at least 3"));
    spec.frames = 3;
    spec.channels = 2;
    CHECK_THROWS_AS(render_scene(spec), std::invalid_argument);
    spec.channels = 1;
    spec.height = 0;
    CHECK_THROWS_AS(render_scene(spec), std::invalid_argument);
    spec.height = 32;
    Sprite s;
    s.size = -1.0f;
    spec.sprites.push_back(s);
    CHECK_THROWS_AS(render_scene(spec), std::invalid_argument);
}

TEST_CASE("every sprite kind and background renders deterministically", "[data]") {
    for (int bg = 0; bg < 3; ++bg) {
        for (int kind = 0; kind < 3; ++kind) {
            SceneSpec spec;
            spec.height = 24;
            spec.width = 20;
            spec.channels = (bg + kind) % 2 ? 3 : 1;
            spec.frames = 3;
            spec.seed = uint64_t(100 + bg * 3 + kind);
            spec.background = static_cast<BackgroundKind>(bg);
            Sprite s;
            s.kind = static_cast<SpriteKind>(kind);
            s.size = 7.0f;
            s.x = 9.5f;
            s.y = 11.25f;
            s.vx = 1.5f;
            s.vy = -0.75f;
            spec.sprites.push_back(s);

            RenderedScene a = render_scene(spec);
            RenderedScene b = render_scene(spec);
            REQUIRE(same_values(a.video, b.video));
            for (int i = 0; i < a.video.size(); ++i) {
                REQUIRE(a.video[i] >= -1.0f);
                REQUIRE(a.video[i] <= 1.0f);
            }
            // The sprite must be visible against the background somewhere.
            bool moving = false;
            const int fsz = spec.channels * 24 * 20;
            for (int i = 0; i < fsz && !moving; ++i) moving = a.video[i] != a.video[i + fsz];
            REQUIRE(moving);
        }
    }

    // Backgrounds alone are static across frames.
    for (int bg = 0; bg < 3; ++bg) {
        SceneSpec spec;
        spec.frames = 3;
        spec.seed = 7;
        spec.background = static_cast<BackgroundKind>(bg);
        RenderedScene scene = render_scene(spec);
        const int fsz = 32 * 32;
        for (int l = 1; l < 3; ++l)
            REQUIRE(std::memcmp(scene.video.data(), scene.video.data() + l * fsz, fsz * 4) == 0);
    }
}

TEST_CASE("triplet assembly picks the documented frames", "[data]") {
    // Five constant frames with distinct values make slicing mistakes obvious.
    std::vector<Tensor> frames;
    for (int l = 0; l < 5; ++l) frames.push_back(Tensor::full({1, 4, 4}, 0.1f * float(l)));
    Tensor video = stack_frames(frames);
    REQUIRE(video.rank() == 4);
    CHECK(video.extent(0) == 5);

    SECTION("interpolation uses (i, i+2) -> i+1") {
        TripletSample t = make_triplet(video, 1, SynthesisMode::interpolation);
        REQUIRE(t.input.extent(0) == 2);
        CHECK(t.input(0, 0, 0) == Approx(0.1f));
        CHECK(t.input(1, 0, 0) == Approx(0.3f));
        CHECK(t.target.extent(0) == 1);
        CHECK(t.target(0, 0, 0) == Approx(0.2f));
        CHECK(t.steps == 1);
        CHECK(t.channels == 1);
        CHECK(t.gt_flow.size() == 0);
    }

    SECTION("extrapolation uses (i, i+1) -> i+2 .. i+1+D") {
        TripletSample t = make_triplet(video, 0, SynthesisMode::extrapolation, 3);
        CHECK(t.input(0, 0, 0) == Approx(0.0f));
        CHECK(t.input(1, 0, 0) == Approx(0.1f));
        REQUIRE(t.target.extent(0) == 3);
        CHECK(t.target(0, 0, 0) == Approx(0.2f));
        CHECK(t.target(1, 0, 0) == Approx(0.3f));
        CHECK(t.target(2, 0, 0) == Approx(0.4f));
        CHECK(t.steps == 3);
    }

    SECTION("out-of-range and invalid step counts are rejected") {
        CHECK_THROWS_AS(make_triplet(video, 3, SynthesisMode::interpolation), std::invalid_argument);
        CHECK_THROWS_AS(make_triplet(video, -1, SynthesisMode::interpolation), std::invalid_argument);
        CHECK_THROWS_AS(make_triplet(video, 1, SynthesisMode::extrapolation, 3), std::invalid_argument);
        CHECK_THROWS_AS(make_triplet(video, 0, SynthesisMode::extrapolation, 0), std::invalid_argument);
        CHECK_THROWS_AS(make_triplet(video, 0, SynthesisMode::interpolation, 2), std::invalid_argument);
        CHECK_NOTHROW(make_triplet(video, 0, SynthesisMode::extrapolation, 3));
        CHECK_NOTHROW(make_triplet(video, 2, SynthesisMode::interpolation));
    }
}

TEST_CASE("triplet ground truth scales velocity by the input gap", "[data]") {
    SceneSpec spec;
    spec.frames = 5;
    spec.seed = 3;
    Sprite sq;
    sq.size = 8.0f;
    sq.x = 12.0f;
    sq.y = 16.0f;
    sq.vx = 1.0f;
    sq.vy = 0.0f;
    spec.sprites.push_back(sq);
    RenderedScene scene = render_scene(spec);

    // Interpolation: inputs two frames apart, so input0->input1 displacement is 2v.
    TripletSample ti = make_triplet(scene, 0, SynthesisMode::interpolation);
    REQUIRE(ti.gt_flow.rank() == 3);
    CHECK(ti.gt_flow(0, 16, 13) == 2.0f);  // inside the square at frame 1 (center x=13)
    CHECK(ti.gt_flow(1, 16, 13) == 0.0f);
    CHECK(ti.gt_flow(0, 0, 0) == 0.0f);

    // Extrapolation: inputs one frame apart, displacement is v.
    TripletSample te = make_triplet(scene, 0, SynthesisMode::extrapolation, 1);
    CHECK(te.gt_flow(0, 16, 14) == 1.0f);  // inside the square at frame 2 (center x=14)
    CHECK(te.gt_flow(0, 0, 0) == 0.0f);
}

TEST_CASE("motion filter separates static from moving samples", "[data]") {
    SceneSpec moving;
    moving.frames = 3;
    moving.seed = 4;
    Sprite sq;
    sq.size = 8.0f;
    sq.x = 12.0f;
    sq.y = 16.0f;
    sq.vx = 2.0f;
    moving.sprites.push_back(sq);
    TripletSample t = make_triplet(render_scene(moving), 0, SynthesisMode::interpolation);
    CHECK(has_obvious_motion(t));

    SceneSpec still = moving;
    still.sprites[0].vx = 0.0f;
    TripletSample s = make_triplet(render_scene(still), 0, SynthesisMode::interpolation);
    CHECK_FALSE(has_obvious_motion(s));

    CHECK(has_obvious_motion(t, 0.0f));
    CHECK_FALSE(has_obvious_motion(t, 1e9f));
}

TEST_CASE("hand-built 2x2 ppm fixture decodes to known bytes", "[data]") {
    const std::string path = tmp_path("fixture.ppm");
    std::string bytes = "P6\n2 2\n255\n";
    const uint8_t rgb[12] = {10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110, 120};
    bytes.append(reinterpret_cast<const char*>(rgb), 12);
    write_raw(path, bytes);

    ImageU8 img = read_ppm(path);
    REQUIRE(img.c == 3);
    REQUIRE(img.h == 2);
    REQUIRE(img.w == 2);
    CHECK(img.at(0, 0, 0) == 10);
    CHECK(img.at(0, 1, 2) == 60);
    CHECK(img.at(1, 0, 1) == 80);
    CHECK(img.at(1, 1, 0) == 100);

    Tensor t = normalize(img);
    CHECK(t(0, 0, 0) == normalize_u8(10));
    CHECK(t(2, 1, 1) == normalize_u8(120));
}

TEST_CASE("ppm and pgm files round trip", "[data]") {
    std::mt19937 rng(31);
    for (int c : {1, 3}) {
        ImageU8 img;
        img.h = 5;
        img.w = 7;
        img.c = c;
        img.pixels.resize(size_t(5) * 7 * c);
        for (auto& p : img.pixels) p = uint8_t(rng() % 256);
        const std::string path = tmp_path(c == 3 ? "rt.ppm" : "rt.pgm");
        write_ppm(path, img);
        ImageU8 back = read_ppm(path);
        REQUIRE(back.c == c);
        REQUIRE(back.h == 5);
        REQUIRE(back.w == 7);
        REQUIRE(back.pixels == img.pixels);
    }

    // Header comments are legal.
    const std::string cpath = tmp_path("comment.pgm");
    std::string bytes = "P5\n# a comment\n2 1\n255\n";
    bytes.push_back(char(7));
    bytes.push_back(char(200));
    write_raw(cpath, bytes);
    ImageU8 img = read_ppm(cpath);
    CHECK(img.at(0, 0) == 7);
    CHECK(img.at(0, 1) == 200);
}

TEST_CASE("ppm parse errors name the byte offset", "[data]") {
    const std::string path = tmp_path("bad.ppm");

    write_raw(path, "P7\n2 2\n255\n............");
    CHECK_THROWS_WITH(read_ppm(path), Catch::Matchers::ContainsSubstring("byte offset 0"));

    write_raw(path, "P6\n2 2\n254\nxxxxxxxxxxxx");
    CHECK_THROWS_WITH(read_ppm(path), Catch::Matchers::ContainsSubstring("maxval") &&
                                          Catch::Matchers::ContainsSubstring("byte offset"));

    write_raw(path, "P6\n2 2\n255\nshort");
    CHECK_THROWS_WITH(read_ppm(path), Catch::Matchers::ContainsSubstring("truncated"));

    write_raw(path, "P6\n0 2\n255\n");
    CHECK_THROWS_AS(read_ppm(path), std::runtime_error);

    write_raw(path, "P6\n2 x\n255\n");
    CHECK_THROWS_WITH(read_ppm(path), Catch::Matchers::ContainsSubstring("height"));
}

TEST_CASE("video files round trip bit-exactly", "[data]") {
    std::mt19937 rng(17);
    std::uniform_real_distribution<float> d(-1.0f, 1.0f);
    Tensor video({3, 1, 6, 5});
    for (int i = 0; i < video.size(); ++i) video[i] = d(rng);

    const std::string path = tmp_path("clip.dvfv");
    write_video(path, video);
    Tensor back = read_video(path);
    REQUIRE(same_values(back, video));

    // Frozen header layout: magic, then H, W, L, C as little-endian u32.
    std::ifstream is(path, std::ios::binary);
    char magic[4];
    uint32_t dims[4];
    is.read(magic, 4);
    is.read(reinterpret_cast<char*>(dims), 16);
    REQUIRE(std::memcmp(magic, "DVFV", 4) == 0);
    CHECK(dims[0] == 6);
    CHECK(dims[1] == 5);
    CHECK(dims[2] == 3);
    CHECK(dims[3] == 1);
}

TEST_CASE("video parse errors name the byte offset", "[data]") {
    const std::string path = tmp_path("bad.dvfv");

    write_raw(path, "DVFT________________");
    CHECK_THROWS_WITH(read_video(path), Catch::Matchers::ContainsSubstring("byte offset 0"));

    {
        // Valid magic, zero height.
        std::string bytes = "DVFV";
        uint32_t dims[4] = {0, 5, 3, 1};
        bytes.append(reinterpret_cast<const char*>(dims), 16);
        write_raw(path, bytes);
        CHECK_THROWS_WITH(read_video(path), Catch::Matchers::ContainsSubstring("byte offset 4"));
    }
    {
        // Bad channel count.
        std::string bytes = "DVFV";
        uint32_t dims[4] = {4, 4, 3, 2};
        bytes.append(reinterpret_cast<const char*>(dims), 16);
        write_raw(path, bytes);
        CHECK_THROWS_WITH(read_video(path), Catch::Matchers::ContainsSubstring("channel count"));
    }
    {
        // Truncated frame data: no partial tensor comes back.
        Tensor video = Tensor::full({3, 1, 4, 4}, 0.5f);
        write_video(path, video);
        std::error_code ec;
        std::filesystem::resize_file(path, 30, ec);
        REQUIRE_FALSE(ec);
        CHECK_THROWS_WITH(read_video(path), Catch::Matchers::ContainsSubstring("truncated"));
    }
}

TEST_CASE("manifests are newline-separated relative paths", "[data]") {
    const std::string path = tmp_path("manifest.txt");
    std::vector<std::string> entries = {"scenes/scene000.dvfv", "scenes/scene001.dvfv", "x.dvfv"};
    write_manifest(path, entries);
    CHECK(read_manifest(path) == entries);

    std::ifstream is(path, std::ios::binary);
    std::string content((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    CHECK(content == "scenes/scene000.dvfv\nscenes/scene001.dvfv\nx.dvfv\n");
}

TEST_CASE("frame slicing and stacking are inverses", "[data]") {
    std::mt19937 rng(23);
    std::uniform_real_distribution<float> d(-1.0f, 1.0f);
    std::vector<Tensor> frames;
    for (int l = 0; l < 3; ++l) {
        Tensor f({2, 4, 4});
        for (int i = 0; i < f.size(); ++i) f[i] = d(rng);
        frames.push_back(std::move(f));
    }
    Tensor video = stack_frames(frames);
    for (int l = 0; l < 3; ++l) REQUIRE(same_values(frame_slice(video, l), frames[l]));
    CHECK_THROWS_AS(frame_slice(video, 3), std::invalid_argument);

    frames.push_back(Tensor({2, 4, 5}));
    CHECK_THROWS_AS(stack_frames(frames), std::invalid_argument);
}

TEST_CASE("random corpus specs are valid, seeded, and bounded", "[data]") {
    CorpusOptions opt;
    opt.frames = 5;
    std::mt19937 rng(77);
    std::mt19937 rng2(77);
    for (int i = 0; i < 20; ++i) {
        SceneSpec a = random_scene_spec(rng, opt);
        SceneSpec b = random_scene_spec(rng2, opt);
        REQUIRE_NOTHROW(a.validate());
        CHECK(a.frames == 5);
        CHECK(a.height == 32);
        REQUIRE(!a.sprites.empty());
        CHECK(a.sprites.size() <= 2);
        for (const Sprite& s : a.sprites) {
            const float speed = std::hypot(s.vx, s.vy);
            CHECK(speed >= opt.min_speed - 1e-4f);
            CHECK(speed <= opt.max_speed + 1e-4f);
            CHECK(s.size > 0.0f);
        }
        // Same seed, same draw sequence.
        CHECK(a.seed == b.seed);
        CHECK(a.sprites[0].x == b.sprites[0].x);
        CHECK(a.sprites[0].vx == b.sprites[0].vx);
    }
}

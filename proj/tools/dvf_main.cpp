// Command-line front end: scene generation, training, frame synthesis,
// evaluation, and finite-difference self-checks.
//
// Exit codes: 0 success, 1 validation error (bad flags/config/shapes),
// 2 runtime failure (I/O, parse errors, divergence, failed gradient check).

#include "dvf/gradcheck.hpp"
#include "dvf/trainer.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace dvf;

namespace {

// ---------------------------------------------------------------------------
// Flag parsing: --key value or --key=value, validated against an allow-list
// before any work starts.
// ---------------------------------------------------------------------------

struct Flags {
    std::vector<std::pair<std::string, std::string>> items;

    const std::string* find(const std::string& key) const {
        for (const auto& [k, v] : items)
            if (k == key) return &v;
        return nullptr;
    }
    bool has(const std::string& key) const { return find(key) != nullptr; }
    std::string get(const std::string& key, const std::string& fallback) const {
        const std::string* v = find(key);
        return v ? *v : fallback;
    }
    std::string require(const std::string& key) const {
        const std::string* v = find(key);
        if (!v) throw std::invalid_argument("missing required flag --" + key);
        return *v;
    }
};

Flags parse_flags(int argc, char** argv, int first, std::initializer_list<const char*> allowed) {
    Flags f;
    for (int i = first; i < argc; ++i) {
        std::string tok = argv[i];
        if (tok.rfind("--", 0) != 0)
            throw std::invalid_argument("unexpected argument '" + tok +
                                        "' (flags are --key value or --key=value)");
        std::string key = tok.substr(2), val;
        if (auto eq = key.find('='); eq != std::string::npos) {
            val = key.substr(eq + 1);
            key = key.substr(0, eq);
        } else {
            if (i + 1 >= argc) throw std::invalid_argument("flag --" + key + " needs a value");
            val = argv[++i];
        }
        bool known = false;
        for (const char* a : allowed) known = known || key == a;
        if (!known) throw std::invalid_argument("unknown flag --" + key);
        f.items.emplace_back(std::move(key), std::move(val));
    }
    return f;
}

long parse_long(const std::string& val, const std::string& what) {
    long out = 0;
    auto [p, ec] = std::from_chars(val.data(), val.data() + val.size(), out);
    if (ec != std::errc() || p != val.data() + val.size())
        throw std::invalid_argument(what + ": invalid integer '" + val + "'");
    return out;
}

int parse_int(const std::string& val, const std::string& what) {
    long v = parse_long(val, what);
    if (v < INT32_MIN || v > INT32_MAX) throw std::invalid_argument(what + ": out of range '" + val + "'");
    return int(v);
}

uint64_t parse_u64(const std::string& val, const std::string& what) {
    uint64_t out = 0;
    auto [p, ec] = std::from_chars(val.data(), val.data() + val.size(), out);
    if (ec != std::errc() || p != val.data() + val.size())
        throw std::invalid_argument(what + ": invalid unsigned integer '" + val + "'");
    return out;
}

float parse_float(const std::string& val, const std::string& what) {
    char* end = nullptr;
    float out = std::strtof(val.c_str(), &end);
    if (end != val.c_str() + val.size() || val.empty())
        throw std::invalid_argument(what + ": invalid number '" + val + "'");
    return out;
}

bool parse_bool(const std::string& val, const std::string& what) {
    if (val == "1" || val == "true" || val == "yes") return true;
    if (val == "0" || val == "false" || val == "no") return false;
    throw std::invalid_argument(what + ": expected 0/1, got '" + val + "'");
}

SynthesisMode parse_mode(const std::string& val, const std::string& what) {
    if (val == "interp" || val == "interpolation") return SynthesisMode::interpolation;
    if (val == "extrap" || val == "extrapolation") return SynthesisMode::extrapolation;
    throw std::invalid_argument(what + ": expected interp|extrap, got '" + val + "'");
}

std::vector<int> parse_int_list(const std::string& val, const std::string& what) {
    std::vector<int> out;
    std::string item;
    std::istringstream ss(val);
    while (std::getline(ss, item, ',')) out.push_back(parse_int(item, what));
    if (out.empty()) throw std::invalid_argument(what + ": empty list");
    return out;
}

// ---------------------------------------------------------------------------
// key=value config files, one setting per line, '#' comments.
// ---------------------------------------------------------------------------

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t");
    size_t b = s.find_last_not_of(" \t");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

TrainConfig parse_train_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open: " + path);
    auto bad = [&](int lineno, const std::string& what) {
        throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": " + what);
    };

    TrainConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) bad(lineno, "malformed line (expected key=value): '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key.empty() || val.empty()) bad(lineno, "malformed line (empty key or value)");

        const std::string what = "key '" + key + "'";
        try {
            if (key == "lr") cfg.lr = parse_float(val, what);
            else if (key == "beta1") cfg.beta1 = parse_float(val, what);
            else if (key == "beta2") cfg.beta2 = parse_float(val, what);
            else if (key == "batch") cfg.batch = parse_int(val, what);
            else if (key == "lambda1") cfg.lambda1 = parse_float(val, what);
            else if (key == "lambda2") cfg.lambda2 = parse_float(val, what);
            else if (key == "eps_charb") cfg.eps_charb = parse_float(val, what);
            else if (key == "init_std") cfg.init_std = parse_float(val, what);
            else if (key == "steps") cfg.steps = parse_long(val, what);
            else if (key == "seed") cfg.seed = parse_u64(val, what);
            else if (key == "eval_every") cfg.eval_every = parse_long(val, what);
            else if (key == "mode") cfg.mode = parse_mode(val, what);
            else if (key == "D") cfg.D = parse_int(val, what);
            else if (key == "scales") cfg.scales = parse_int_list(val, what);
            else if (key == "channels") cfg.channels = parse_int(val, what);
            else if (key == "widths") {
                auto w = parse_int_list(val, what);
                if (w.size() != 3) bad(lineno, "widths needs exactly 3 comma-separated values");
                cfg.widths = {w[0], w[1], w[2]};
            } else if (key == "bottleneck") cfg.bottleneck = parse_int(val, what);
            else if (key == "fusion_width") cfg.fusion_width = parse_int(val, what);
            else if (key == "flow_range") cfg.flow_range = parse_float(val, what);
            else if (key == "use_batchnorm") cfg.use_batchnorm = parse_bool(val, what);
            else bad(lineno, "unknown key '" + key + "'");
        } catch (const std::invalid_argument& e) {
            // Re-anchor value errors to the offending line.
            std::string msg = e.what();
            if (msg.rfind(path, 0) == 0) throw;
            bad(lineno, msg);
        }
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Corpus directory layout: manifest.txt lists "sceneNNN.dvfv <seed>" lines;
// per scene a DVFV video and an optional (L,2,H,W) ground-truth flow stack.
// ---------------------------------------------------------------------------

std::string flow_path_for(const std::string& video_name) {
    std::string stem = video_name;
    if (auto dot = stem.rfind('.'); dot != std::string::npos) stem.resize(dot);
    return stem + "_flow.dvft";
}

Tensor load_dvft(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    try {
        return read_tensor(is);
    } catch (const std::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

void save_dvft(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    write_tensor(os, t);
    if (!os) throw std::runtime_error("write failed: " + path);
}

std::vector<RenderedScene> load_corpus(const std::string& dir) {
    std::vector<std::string> entries = read_manifest(dir + "/manifest.txt");
    std::vector<RenderedScene> scenes;
    for (const std::string& entry : entries) {
        std::istringstream ss(entry);
        std::string name;
        uint64_t seed = 0;
        ss >> name >> seed;
        RenderedScene s;
        s.video = read_video(dir + "/" + name);
        s.seed = seed;
        const std::string fpath = dir + "/" + flow_path_for(name);
        if (fs::exists(fpath)) {
            Tensor stack = load_dvft(fpath);
            const int L = s.video.extent(0), H = s.video.extent(2), W = s.video.extent(3);
            if (stack.rank() != 4 || stack.extent(0) != L || stack.extent(1) != 2 ||
                stack.extent(2) != H || stack.extent(3) != W)
                throw std::runtime_error(fpath + ": flow stack shape " + stack.shape_string() +
                                         " does not match the video");
            const size_t plane = size_t(2) * H * W;
            for (int l = 0; l < L; ++l) {
                Tensor f({2, H, W});
                std::memcpy(f.data(), stack.data() + size_t(l) * plane, plane * 4);
                s.flow.push_back(std::move(f));
            }
        }
        scenes.push_back(std::move(s));
    }
    if (scenes.empty()) throw std::runtime_error(dir + "/manifest.txt: manifest lists no scenes");
    return scenes;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int run_datagen(int argc, char** argv) {
    Flags f = parse_flags(argc, argv, 2,
                          {"out", "scenes", "frames", "seed", "height", "width", "channels",
                           "min-speed", "max-speed", "min-sprites", "max-sprites"});
    const std::string out = f.require("out");
    const int scenes = parse_int(f.get("scenes", "10"), "--scenes");
    const uint64_t seed = parse_u64(f.get("seed", "1"), "--seed");
    CorpusOptions opt;
    opt.frames = parse_int(f.get("frames", "5"), "--frames");
    opt.height = parse_int(f.get("height", "32"), "--height");
    opt.width = parse_int(f.get("width", "32"), "--width");
    opt.channels = parse_int(f.get("channels", "1"), "--channels");
    opt.min_speed = parse_float(f.get("min-speed", "1"), "--min-speed");
    opt.max_speed = parse_float(f.get("max-speed", "3"), "--max-speed");
    opt.min_sprites = parse_int(f.get("min-sprites", "1"), "--min-sprites");
    opt.max_sprites = parse_int(f.get("max-sprites", "2"), "--max-sprites");

    if (scenes < 1) throw std::invalid_argument("--scenes must be >= 1");
    if (opt.min_sprites < 1 || opt.max_sprites < opt.min_sprites)
        throw std::invalid_argument("sprite count range is empty");
    if (!(opt.min_speed >= 0.0f) || opt.max_speed < opt.min_speed)
        throw std::invalid_argument("speed range is empty");
    {
        // Validate canvas/frame settings before touching the output path.
        SceneSpec probe;
        probe.height = opt.height;
        probe.width = opt.width;
        probe.channels = opt.channels;
        probe.frames = opt.frames;
        probe.validate();
    }

    fs::create_directories(out);
    std::mt19937 rng(uint32_t(seed ^ (seed >> 32)));
    std::vector<std::string> manifest;
    for (int i = 0; i < scenes; ++i) {
        SceneSpec spec = random_scene_spec(rng, opt);
        RenderedScene scene = render_scene(spec);
        char name[32];
        std::snprintf(name, sizeof name, "scene%03d", i);
        write_video(out + "/" + name + ".dvfv", scene.video);

        const int L = scene.video.extent(0), H = scene.video.extent(2), W = scene.video.extent(3);
        Tensor stack({L, 2, H, W});
        const size_t plane = size_t(2) * H * W;
        for (int l = 0; l < L; ++l)
            std::memcpy(stack.data() + size_t(l) * plane, scene.flow.at(size_t(l)).data(), plane * 4);
        save_dvft(out + "/" + std::string(name) + "_flow.dvft", stack);

        manifest.push_back(std::string(name) + ".dvfv " + std::to_string(spec.seed));
    }
    write_manifest(out + "/manifest.txt", manifest);
    std::cout << "wrote " << scenes << " scenes (" << opt.frames << " frames, " << opt.height << "x"
              << opt.width << ", " << opt.channels << " channel) to " << out << "\n";
    return 0;
}

std::string format_lr(float lr) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.5f", double(lr));
    return buf;
}

int run_train(int argc, char** argv) {
    Flags f = parse_flags(argc, argv, 2, {"config", "data", "out", "log-every"});
    TrainConfig cfg = parse_train_config(f.require("config"));
    const std::string data_dir = f.require("data");
    const std::string out = f.get("out", "checkpoint.dvfw");

    std::vector<RenderedScene> scenes = load_corpus(data_dir);
    const Tensor& v0 = scenes[0].video;
    const int C = v0.extent(1), H = v0.extent(2), W = v0.extent(3);
    if (cfg.channels != C)
        throw std::invalid_argument("config channels=" + std::to_string(cfg.channels) + " but " +
                                    data_dir + " holds " + std::to_string(C) + "-channel frames");

    Dataset data = make_dataset(scenes, cfg.mode, cfg.D, true);
    Trainer t(cfg, H, W);

    std::ostringstream hdr;
    hdr << "train: mode=" << mode_name(t.cfg.mode) << " D=" << t.cfg.D << " lr=" << format_lr(t.cfg.lr)
        << " batch=" << t.cfg.batch << " steps=" << t.cfg.steps << " eval_every=" << t.cfg.eval_every
        << " flow_range=" << t.cfg.flow_range << " scales=";
    for (size_t i = 0; i < t.cfg.scales.size(); ++i)
        hdr << (i ? "," : "") << t.cfg.scales[i];
    std::cout << hdr.str() << "\n";
    std::cout << "dataset: " << data.train.size() << " train / " << data.eval.size()
              << " eval triplets (" << H << "x" << W << ", " << C << " channel)\n";

    TrainOptions opt;
    opt.checkpoint_path = out;
    opt.log_every = parse_long(f.get("log-every", "100"), "--log-every");
    opt.log = [](const std::string& s) { std::cout << s << "\n"; };
    train(t, data, opt);
    std::cout << "checkpoint: " << out << "\n";
    return 0;
}

// Grayscale dump of one flow plane, mapped from [lo, hi] onto the u8 range.
void write_plane_pgm(const std::string& path, const Tensor& plane, int ch, float lo, float hi) {
    const int H = plane.extent(2), W = plane.extent(3);
    Tensor img({1, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const float t01 = (plane.at(0, ch, y, x) - lo) / (hi - lo);
            img.at(0, y, x) = 2.0f * std::clamp(t01, 0.0f, 1.0f) - 1.0f;
        }
    write_ppm(path, denormalize(img));
}

int run_synth(int argc, char** argv) {
    Flags f = parse_flags(argc, argv, 2, {"checkpoint", "input", "out", "mode", "steps"});
    Trainer t = load_checkpoint(f.require("checkpoint"));
    Tensor video = read_video(f.require("input"));
    const std::string out = f.require("out");

    if (f.has("mode") && parse_mode(f.get("mode", ""), "--mode") != t.cfg.mode)
        throw std::invalid_argument("--mode does not match the checkpoint (trained for " +
                                    std::string(mode_name(t.cfg.mode)) + ")");
    if (f.has("steps") && parse_int(f.get("steps", ""), "--steps") != t.cfg.D)
        throw std::invalid_argument("--steps does not match the checkpoint (trained for D=" +
                                    std::to_string(t.cfg.D) + ")");

    const int L = video.extent(0), C = video.extent(1), H = video.extent(2), W = video.extent(3);
    if (L != 2)
        throw std::invalid_argument("synthesis input must hold exactly 2 frames, got " + std::to_string(L));
    if (C != t.cfg.channels)
        throw std::invalid_argument("input has " + std::to_string(C) + " channels, checkpoint expects " +
                                    std::to_string(t.cfg.channels));
    const int div = 8 << t.pyr.octaves();
    if (H % div != 0 || W % div != 0)
        throw std::invalid_argument("input extents must be divisible by " + std::to_string(div) +
                                    " (8 per resolution octave), got " + std::to_string(H) + "x" +
                                    std::to_string(W));

    fs::create_directories(out);
    Tensor input = video;
    input.reshape({1, 2 * C, H, W});
    std::vector<VoxelFlowField> flows = t.predict(input);

    const std::string ext = C == 3 ? ".ppm" : ".pgm";
    const float R = t.cfg.flow_range;
    for (int d = 0; d < int(flows.size()); ++d) {
        const std::string tag = "_step" + std::to_string(d + 1);
        Tensor pred = sample_forward(input, flows[size_t(d)]);
        pred.reshape({C, H, W});
        write_ppm(out + "/pred" + tag + ext, denormalize(pred));

        Tensor ft = flow_to_tensor(flows[size_t(d)]);
        ft.reshape({3, H, W});
        save_dvft(out + "/flow" + tag + ".dvft", ft);

        auto [motion, mask] = project_flow(flows[size_t(d)]);
        write_plane_pgm(out + "/motion_x" + tag + ".pgm", motion, 0, -R, R);
        write_plane_pgm(out + "/motion_y" + tag + ".pgm", motion, 1, -R, R);
        write_plane_pgm(out + "/mask" + tag + ".pgm", mask, 0, 0.0f, 1.0f);
    }
    std::cout << "wrote " << flows.size() << " synthesized frame(s) + flow dumps to " << out << "\n";
    return 0;
}

int run_eval(int argc, char** argv) {
    Flags f = parse_flags(argc, argv, 2, {"checkpoint", "data"});
    Trainer t = load_checkpoint(f.require("checkpoint"));
    std::vector<RenderedScene> scenes = load_corpus(f.require("data"));
    Dataset data = make_dataset(scenes, t.cfg.mode, t.cfg.D, true);

    EvalReport rep = evaluate(t, data.eval);
    std::cout << rep.lines();

    std::printf("\n%-5s %-7s %9s %7s %7s %10s %10s\n", "step", "region", "psnr_db", "ssim", "epe",
                "avg_psnr", "copy_psnr");
    for (int d = 0; d < t.cfg.D; ++d) {
        const MetricReport& full = rep.full[size_t(d)];
        const MetricReport& motion = rep.motion[size_t(d)];
        std::printf("%-5d %-7s %9.3f %7.4f %7s %10.3f %10.3f\n", d + 1, "full", double(full.psnr_db),
                    double(full.ssim), "-", double(rep.baseline_avg_full[size_t(d)]),
                    double(rep.baseline_copy_full[size_t(d)]));
        char epe[16] = "-";
        if (motion.has_epe()) std::snprintf(epe, sizeof epe, "%.3f", double(motion.epe));
        std::printf("%-5d %-7s %9.3f %7.4f %7s %10.3f %10.3f\n", d + 1, "motion", double(motion.psnr_db),
                    double(motion.ssim), epe, double(rep.baseline_avg_motion[size_t(d)]),
                    double(rep.baseline_copy_motion[size_t(d)]));
    }
    return 0;
}

int run_gradcheck(int argc, char** argv) {
    Flags f = parse_flags(argc, argv, 2, {"scope", "corrupt", "seed"});
    gradcheck::Options opt;
    opt.seed = parse_u64(f.get("seed", "1234"), "--seed");
    opt.corrupt = f.get("corrupt", "");
    std::vector<gradcheck::CheckResult> results = gradcheck::run_scope(f.get("scope", "all"), opt);
    if (!opt.corrupt.empty()) {
        bool found = false;
        for (const auto& r : results) found = found || r.component == opt.corrupt;
        if (!found)
            throw std::invalid_argument("--corrupt: no component named '" + opt.corrupt +
                                        "' in this scope");
    }
    if (!gradcheck::print_results(std::cout, results)) throw std::runtime_error("gradient check failed");
    return 0;
}

int usage(std::ostream& os) {
    os << "usage: dvf <subcommand> [--key value ...]\n"
          "\n"
          "  datagen   --out DIR [--scenes N] [--frames L] [--seed S] [--height H] [--width W]\n"
          "            [--channels C] [--min-speed V] [--max-speed V] [--min-sprites N] [--max-sprites N]\n"
          "  train     --config FILE --data DIR [--out CKPT] [--log-every N]\n"
          "  synth     --checkpoint CKPT --input VIDEO --out DIR [--mode interp|extrap] [--steps D]\n"
          "  eval      --checkpoint CKPT --data DIR\n"
          "  gradcheck [--scope kernels|sampler|losses|full|all] [--seed S] [--corrupt COMPONENT]\n"
          "\n"
          "Config files hold one key=value per line ('#' comments); keys mirror the training\n"
          "configuration: lr beta1 beta2 batch lambda1 lambda2 eps_charb init_std steps seed\n"
          "eval_every mode D scales channels widths bottleneck fusion_width flow_range use_batchnorm.\n";
    return 1;
}

} // namespace

int main(int argc, char** argv) {
    try {
        if (argc < 2) return usage(std::cerr);
        const std::string cmd = argv[1];
        if (cmd == "datagen") return run_datagen(argc, argv);
        if (cmd == "train") return run_train(argc, argv);
        if (cmd == "synth") return run_synth(argc, argv);
        if (cmd == "eval") return run_eval(argc, argv);
        if (cmd == "gradcheck") return run_gradcheck(argc, argv);
        if (cmd == "help" || cmd == "--help" || cmd == "-h") {
            usage(std::cout);
            return 0;
        }
        throw std::invalid_argument("unknown subcommand '" + cmd +
                                    "' (expected datagen|train|synth|eval|gradcheck)");
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include <json.hpp>

#include "glow/blur/dataset.hpp"
#include "glow/blur/pattern_stats.hpp"
#include "glow/core/checkpoint.hpp"
#include "glow/core/image.hpp"
#include "glow/eval/metrics.hpp"
#include "glow/pipeline/pipeline.hpp"
#include "glow/semantic/embedder.hpp"

namespace fs = std::filesystem;
using namespace glow;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    GLOW_CHECK_IO(f.good(), "cannot read ", path);
    return std::string((std::istreambuf_iterator<char>(f)),
                       std::istreambuf_iterator<char>());
}

std::vector<blur::BlurSpec> specs_from_json(const nlohmann::json& arr) {
    std::vector<blur::BlurSpec> specs;
    for (const auto& j : arr) {
        blur::BlurSpec s;
        s.family = blur::family_from_name(j.at("family").get<std::string>());
        if (j.contains("angle_deg")) s.angle_deg = j.at("angle_deg").get<double>();
        if (j.contains("magnitude_px"))
            s.magnitude_px = j.at("magnitude_px").get<double>();
        if (j.contains("sigma")) s.sigma = j.at("sigma").get<double>();
        if (j.contains("n_samples")) s.n_samples = j.at("n_samples").get<int64_t>();
        s.validate();
        specs.push_back(s);
    }
    GLOW_CHECK_CFG(!specs.empty(), "spec file lists no blur specs");
    return specs;
}

int cmd_synth(const std::string& sources, const std::string& out,
              const std::string& spec_file, uint64_t seed) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(slurp(spec_file));
    } catch (const std::exception& e) {
        GLOW_CHECK_CFG(false, "spec file parse error: ", e.what());
    }
    auto specs = specs_from_json(j.contains("specs") ? j.at("specs") : j);
    std::map<std::string, std::string> captions;
    if (j.is_object() && j.contains("captions"))
        captions = j.at("captions").get<std::map<std::string, std::string>>();
    auto m = blur::build_dataset(out, sources, specs, captions,
                                 pipeline::env_seed_override(seed));
    std::printf("wrote %zu samples to %s (%zu sources skipped)\n",
                m.samples.size(), out.c_str(), m.skipped.size());
    return 0;
}

int cmd_textures(const std::string& out, int64_t count, int64_t size,
                 int64_t channels, uint64_t seed) {
    fs::create_directories(out);
    for (int64_t i = 0; i < count; ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "tex_%05lld.png",
                      static_cast<long long>(i));
        write_png(make_texture(size, size, channels, derive_seed(seed, uint64_t(i))),
                  (fs::path(out) / name).string());
    }
    std::printf("wrote %lld textures to %s\n", static_cast<long long>(count),
                out.c_str());
    return 0;
}

int cmd_analyze(const std::string& manifest_path, const std::string& model_path,
                const std::string& report_path, const std::string& overlay_dir) {
    auto manifest = blur::load_manifest(manifest_path);
    std::unique_ptr<pipeline::Pipeline> pipe;
    blur::MotionPredictor predictor;
    if (!model_path.empty()) {
        pipe = pipeline::Pipeline::from_checkpoint(Checkpoint::load(model_path));
        GLOW_CHECK_CFG(pipe->motion_net(),
                       "checkpoint was trained without the motion module");
        predictor = [&pipe](const ImageGrid& img) {
            return pipe->motion_net()->predict(img);
        };
    }
    auto hist = blur::pattern_stats(manifest, model_path.empty(), predictor);
    std::ofstream out(report_path);
    GLOW_CHECK_IO(out.good(), "cannot write report ", report_path);
    out << blur::pattern_histogram_to_json(hist);
    std::printf("pattern report written to %s (mode angle bin %lld)\n",
                report_path.c_str(), static_cast<long long>(hist.angle_mode_bin()));

    if (!overlay_dir.empty()) {
        fs::create_directories(overlay_dir);
        for (const auto& s : manifest.samples) {
            ImageGrid img = read_png(manifest.resolve(s.blurred_path));
            motion::MotionField field;
            if (predictor) {
                field = predictor(img);
            } else {
                field = motion::MotionField(img.h, img.w);
                for (int64_t y = 0; y < img.h; ++y)
                    for (int64_t x = 0; x < img.w; ++x) {
                        field.at(y, x, 0) = s.mean_dx;
                        field.at(y, x, 1) = s.mean_dy;
                    }
            }
            // 10x10 patch grid, segments scaled 2x the offset magnitude
            auto grid = motion::patch_dominant_directions(
                field, std::min<int64_t>(10, std::min(img.h, img.w)));
            ImageGrid rgb(img.h, img.w, 3);
            for (int64_t y = 0; y < img.h; ++y)
                for (int64_t x = 0; x < img.w; ++x)
                    for (int64_t c = 0; c < 3; ++c)
                        rgb.at(y, x, c) = img.at(y, x, img.c == 3 ? c : 0);
            for (int64_t r = 0; r < grid.g; ++r)
                for (int64_t c = 0; c < grid.g; ++c) {
                    const double cy = (r + 0.5) * double(img.h) / double(grid.g);
                    const double cx = (c + 0.5) * double(img.w) / double(grid.g);
                    const auto& v = grid.at(r, c);
                    draw_segment(rgb, cx - v[0], cy - v[1], cx + v[0], cy + v[1],
                                 {1.0, 0.2, 0.1});
                }
            write_png(rgb, (fs::path(overlay_dir) / (s.id + "_overlay.png")).string());
        }
        std::printf("overlays written to %s\n", overlay_dir.c_str());
    }
    return 0;
}

int cmd_train_codec(const std::string& config_path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(slurp(config_path));
    } catch (const std::exception& e) {
        GLOW_CHECK_CFG(false, "config parse error: ", e.what());
    }
    codec::CodecConfig cc;
    if (j.contains("codec")) {
        const auto& c = j.at("codec");
        if (c.contains("f")) cc.f = c.at("f").get<int64_t>();
        if (c.contains("c_lat")) cc.c_lat = c.at("c_lat").get<int64_t>();
        if (c.contains("width")) cc.width = c.at("width").get<int64_t>();
        if (c.contains("in_channels"))
            cc.in_channels = c.at("in_channels").get<int64_t>();
    }
    std::vector<ImageGrid> imgs;
    if (j.contains("manifest")) {
        auto m = blur::load_manifest(j.at("manifest").get<std::string>());
        for (const auto& s : m.samples) {
            ImageGrid img = read_png(m.resolve(s.sharp_path));
            imgs.push_back(cc.in_channels == 1 ? to_gray(img) : img);
        }
    } else if (j.contains("sources")) {
        std::vector<std::string> files;
        for (const auto& e :
             fs::directory_iterator(j.at("sources").get<std::string>()))
            if (e.is_regular_file() && e.path().extension() == ".png")
                files.push_back(e.path().string());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            ImageGrid img = read_png(f);
            imgs.push_back(cc.in_channels == 1 ? to_gray(img) : img);
        }
    }
    GLOW_CHECK_CFG(!imgs.empty(), "config must name a 'manifest' or 'sources' with images");
    const int64_t iters = j.value("iterations", int64_t(2000));
    const int64_t batch = j.value("batch_size", int64_t(8));
    const double lr = j.value("lr", 1e-4);
    const uint64_t seed = pipeline::env_seed_override(j.value("seed", uint64_t(0)));
    const std::string out = j.value("checkpoint_out", std::string("codec.ckpt"));
    const std::string log = j.value("run_log", std::string());
    auto res = pipeline::train_codec(imgs, cc, iters, batch, lr, seed, log);
    res.checkpoint.save(out);
    std::printf("codec trained for %lld iterations, final loss %.5f -> %s\n",
                static_cast<long long>(iters), res.losses.back(), out.c_str());
    return 0;
}

int cmd_train_stage(const std::string& config_path, const std::string& stage,
                    const std::string& init_path) {
    pipeline::TrainConfig cfg = pipeline::load_train_config(config_path);
    GLOW_CHECK_CFG(cfg.stage == stage, "config stage '", cfg.stage,
                   "' does not match the ", stage, " subcommand");
    pipeline::TrainResult res;
    if (stage == "finetune") {
        std::string ip = init_path.empty() ? cfg.checkpoint_in : init_path;
        GLOW_CHECK_CFG(!ip.empty(), "finetune needs --init or checkpoint_in");
        res = pipeline::run_finetune(cfg, Checkpoint::load(ip));
    } else if (stage == "bpp") {
        res = pipeline::run_bpp(cfg);
    } else {
        res = pipeline::run_mixed(cfg);
    }
    for (const auto& w : res.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    std::printf("%s finished: %lld iterations, first loss %.5f, last-10-mean ",
                stage.c_str(), static_cast<long long>(cfg.iterations),
                res.first_losses.front());
    std::printf("written to %s\n", cfg.checkpoint_out.empty()
                                       ? "(no checkpoint_out)"
                                       : cfg.checkpoint_out.c_str());
    return 0;
}

int cmd_deblur(const std::string& in, const std::string& ckpt_path,
               const std::string& caption, const std::string& embeddings,
               int64_t steps, uint64_t seed, const std::string& out) {
    auto pipe = pipeline::Pipeline::from_checkpoint(Checkpoint::load(ckpt_path));
    ImageGrid img = read_png(in);
    std::optional<std::string> cap;
    if (!caption.empty()) cap = caption;
    std::vector<std::string> warnings;
    Tensor ext;
    const Tensor* extp = nullptr;
    if (!embeddings.empty()) {
        // single-image path: take the first record of the JSON-lines file
        std::ifstream f(embeddings);
        GLOW_CHECK_IO(f.good(), "cannot read embeddings ", embeddings);
        std::string line;
        GLOW_CHECK_CFG(std::getline(f, line) && !line.empty(),
                       "embeddings file is empty");
        auto j = nlohmann::json::parse(line);
        const auto& tk = j.at("tokens");
        ext = Tensor::uninit({static_cast<int64_t>(tk.size()),
                              static_cast<int64_t>(tk.at(0).size())});
        for (size_t r = 0; r < tk.size(); ++r)
            for (size_t c = 0; c < tk.at(r).size(); ++c)
                ext.at2(int64_t(r), int64_t(c)) = tk.at(r).at(c).get<double>();
        extp = &ext;
        if (std::getline(f, line) && !line.empty())
            warnings.push_back("embeddings file has multiple records; using the first");
    }
    ImageGrid restored = pipe->deblur(img, cap, steps, seed, &warnings, extp);
    for (const auto& w : warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    write_png(restored, out);
    std::printf("deblurred %s -> %s (%lld ddim steps)\n", in.c_str(), out.c_str(),
                static_cast<long long>(steps));
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& manifests_csv,
             const std::string& report_path, int64_t steps, uint64_t seed) {
    auto ckpt = Checkpoint::load(ckpt_path);
    auto pipe = pipeline::Pipeline::from_checkpoint(ckpt);
    std::vector<std::string> manifests;
    std::string cur;
    for (char c : manifests_csv) {
        if (c == ',') {
            if (!cur.empty()) manifests.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) manifests.push_back(cur);
    GLOW_CHECK_CFG(!manifests.empty(), "no manifests given");

    nlohmann::ordered_json out;
    out["schema_version"] = 1;
    out["reports"] = nlohmann::ordered_json::array();
    for (const auto& mp : manifests) {
        auto manifest = blur::load_manifest(mp);
        auto report = pipe->evaluate(manifest, steps, seed,
                                     fs::path(ckpt_path).stem().string());
        report.ckpt_hash = ckpt.content_hash();
        out["reports"].push_back(nlohmann::ordered_json::parse(
            eval::report_to_json(report)));
        std::fputs(eval::report_to_table(report).c_str(), stdout);
    }
    std::ofstream f(report_path);
    GLOW_CHECK_IO(f.good(), "cannot write report ", report_path);
    f << out.dump(2) << "\n";
    std::printf("report written to %s\n", report_path.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"glow: pattern-controlled blur synthesis, restoration training "
                 "and evaluation"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "materialize a blurred/sharp dataset");
    std::string sources, out_dir, spec_file;
    uint64_t seed = 0;
    synth->add_option("--sources", sources, "directory of source PNGs")->required();
    synth->add_option("--out", out_dir, "output dataset directory")->required();
    synth->add_option("--spec", spec_file, "JSON blur spec file")->required();
    synth->add_option("--seed", seed, "master seed");

    // textures
    auto* tex = app.add_subcommand("textures", "generate procedural source textures");
    std::string tex_out;
    int64_t tex_count = 100, tex_size = 64, tex_channels = 1;
    uint64_t tex_seed = 0;
    tex->add_option("--out", tex_out)->required();
    tex->add_option("--count", tex_count);
    tex->add_option("--size", tex_size);
    tex->add_option("--channels", tex_channels);
    tex->add_option("--seed", tex_seed);

    // analyze
    auto* analyze = app.add_subcommand("analyze", "blur pattern statistics");
    std::string an_manifest, an_model, an_report, an_overlay;
    analyze->add_option("--manifest", an_manifest)->required();
    analyze->add_option("--model", an_model, "checkpoint for image-based stats");
    analyze->add_option("--report", an_report)->required();
    analyze->add_option("--overlay", an_overlay, "directory for motion overlays");

    // train-codec
    auto* tcodec = app.add_subcommand("train-codec", "pretrain the autoencoder");
    std::string tc_config;
    tcodec->add_option("--config", tc_config)->required();

    // train-bpp / finetune / train-mixed
    auto* tbpp = app.add_subcommand("train-bpp", "blur pattern pretraining");
    std::string bpp_config;
    tbpp->add_option("--config", bpp_config)->required();
    auto* tft = app.add_subcommand("finetune", "joint fine-tuning from a checkpoint");
    std::string ft_config, ft_init;
    tft->add_option("--config", ft_config)->required();
    tft->add_option("--init", ft_init, "init checkpoint (falls back to checkpoint_in)");
    auto* tmix = app.add_subcommand("train-mixed", "single-stage mixed training");
    std::string mx_config;
    tmix->add_option("--config", mx_config)->required();

    // deblur
    auto* dbl = app.add_subcommand("deblur", "restore one image");
    std::string d_in, d_ckpt, d_caption, d_embeddings, d_out;
    int64_t d_steps = 20;
    uint64_t d_seed = 0;
    dbl->add_option("--in", d_in)->required();
    dbl->add_option("--ckpt", d_ckpt)->required();
    dbl->add_option("--caption", d_caption);
    dbl->add_option("--embeddings", d_embeddings, "JSON-lines external embedding");
    dbl->add_option("--steps", d_steps);
    dbl->add_option("--seed", d_seed);
    dbl->add_option("--out", d_out)->required();

    // eval
    auto* ev = app.add_subcommand("eval", "metric report over manifests");
    std::string e_ckpt, e_manifests, e_report;
    int64_t e_steps = 20;
    uint64_t e_seed = 0;
    ev->add_option("--ckpt", e_ckpt)->required();
    ev->add_option("--manifests", e_manifests, "comma-separated manifest paths")->required();
    ev->add_option("--report", e_report)->required();
    ev->add_option("--steps", e_steps);
    ev->add_option("--seed", e_seed);

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(sources, out_dir, spec_file, seed);
        if (tex->parsed())
            return cmd_textures(tex_out, tex_count, tex_size, tex_channels, tex_seed);
        if (analyze->parsed())
            return cmd_analyze(an_manifest, an_model, an_report, an_overlay);
        if (tcodec->parsed()) return cmd_train_codec(tc_config);
        if (tbpp->parsed()) return cmd_train_stage(bpp_config, "bpp", "");
        if (tft->parsed()) return cmd_train_stage(ft_config, "finetune", ft_init);
        if (tmix->parsed()) return cmd_train_stage(mx_config, "mixed", "");
        if (dbl->parsed())
            return cmd_deblur(d_in, d_ckpt, d_caption, d_embeddings, d_steps,
                              d_seed, d_out);
        if (ev->parsed()) return cmd_eval(e_ckpt, e_manifests, e_report, e_steps, e_seed);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const DivergenceError& e) {
        std::fprintf(stderr, "training diverged: %s\n", e.what());
        return 3;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

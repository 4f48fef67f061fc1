#include "glow/pipeline/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace glow::pipeline {

namespace fs = std::filesystem;
using ad::Var;
using nlohmann::ordered_json;

// ---------------- config plumbing ----------------

void ModelConfig::sync_and_validate(const ModuleToggles& toggles) {
    codec.validate();
    pre.in_channels = codec.in_channels;
    motion.in_channels = codec.in_channels;
    dit.c_lat = codec.c_lat;
    dit.text_dim = embedder.text_dim;
    dit.shallow_channels = pre.shallow_feature_channels;
    dit.use_text = toggles.text;
    pre.validate();
    motion.validate();
    dit.validate();
    embedder.validate();
    GLOW_CHECK_CFG(diffusion_T >= 2, "model: diffusion_T must be >= 2");
}

void TrainConfig::validate() const {
    GLOW_CHECK_CFG(stage == "bpp" || stage == "finetune" || stage == "mixed",
                   "config: stage must be bpp, finetune or mixed");
    GLOW_CHECK_CFG(!datasets.empty(), "config: at least one dataset required");
    double wsum = 0.0;
    for (const auto& [path, w] : datasets) {
        GLOW_CHECK_CFG(w > 0.0, "config: dataset weights must be positive");
        wsum += w;
    }
    GLOW_CHECK_CFG(wsum > 0.0, "config: zero total dataset weight");
    GLOW_CHECK_CFG(iterations >= 1, "config: iterations must be >= 1");
    GLOW_CHECK_CFG(batch_size >= 1, "config: batch_size must be >= 1");
    GLOW_CHECK_CFG(lr > 0.0, "config: lr must be positive");
    GLOW_CHECK_CFG(caption_dropout >= 0.0 && caption_dropout < 1.0,
                   "config: caption_dropout must lie in [0,1)");
}

uint64_t env_seed_override(uint64_t fallback) {
    const char* v = std::getenv("GLOW_SEED");
    if (!v || !*v) return fallback;
    char* end = nullptr;
    const unsigned long long parsed = std::strtoull(v, &end, 10);
    GLOW_CHECK_CFG(end && *end == '\0', "GLOW_SEED is not an integer: ", v);
    return static_cast<uint64_t>(parsed);
}

namespace {

ordered_json model_to_json(const ModelConfig& m) {
    ordered_json j;
    j["pre"] = {{"width", m.pre.width},
                {"depth", m.pre.depth},
                {"n_stages", m.pre.n_stages},
                {"shallow_feature_channels", m.pre.shallow_feature_channels}};
    j["codec"] = {{"f", m.codec.f},
                  {"c_lat", m.codec.c_lat},
                  {"width", m.codec.width},
                  {"in_channels", m.codec.in_channels}};
    j["dit"] = {{"d_model", m.dit.d_model},
                {"n_heads", m.dit.n_heads},
                {"n_blocks", m.dit.n_blocks},
                {"mlp_ratio", m.dit.mlp_ratio},
                {"attn_eps", m.dit.attn_eps}};
    j["motion"] = {{"width", m.motion.width}};
    j["embedder"] = {{"text_dim", m.embedder.text_dim},
                     {"max_tokens", m.embedder.max_tokens},
                     {"vocab_hash_buckets", m.embedder.vocab_hash_buckets}};
    j["diffusion_T"] = m.diffusion_T;
    return j;
}

template <class T>
void maybe(const ordered_json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

ModelConfig model_from_json(const ordered_json& j) {
    ModelConfig m;
    if (j.contains("pre")) {
        const auto& p = j.at("pre");
        maybe(p, "width", m.pre.width);
        maybe(p, "depth", m.pre.depth);
        maybe(p, "n_stages", m.pre.n_stages);
        maybe(p, "shallow_feature_channels", m.pre.shallow_feature_channels);
    }
    if (j.contains("codec")) {
        const auto& p = j.at("codec");
        maybe(p, "f", m.codec.f);
        maybe(p, "c_lat", m.codec.c_lat);
        maybe(p, "width", m.codec.width);
        maybe(p, "in_channels", m.codec.in_channels);
    }
    if (j.contains("dit")) {
        const auto& p = j.at("dit");
        maybe(p, "d_model", m.dit.d_model);
        maybe(p, "n_heads", m.dit.n_heads);
        maybe(p, "n_blocks", m.dit.n_blocks);
        maybe(p, "mlp_ratio", m.dit.mlp_ratio);
        maybe(p, "attn_eps", m.dit.attn_eps);
    }
    if (j.contains("motion")) maybe(j.at("motion"), "width", m.motion.width);
    if (j.contains("embedder")) {
        const auto& p = j.at("embedder");
        maybe(p, "text_dim", m.embedder.text_dim);
        maybe(p, "max_tokens", m.embedder.max_tokens);
        maybe(p, "vocab_hash_buckets", m.embedder.vocab_hash_buckets);
    }
    maybe(j, "diffusion_T", m.diffusion_T);
    return m;
}

ordered_json toggles_to_json(const ModuleToggles& t) {
    return {{"pre_restore", t.pre_restore}, {"motion", t.motion}, {"text", t.text}};
}

ModuleToggles toggles_from_json(const ordered_json& j) {
    ModuleToggles t;
    maybe(j, "pre_restore", t.pre_restore);
    maybe(j, "motion", t.motion);
    maybe(j, "text", t.text);
    return t;
}

}  // namespace

std::string train_config_to_json_text(const TrainConfig& cfg) {
    ordered_json j;
    j["stage"] = cfg.stage;
    j["datasets"] = ordered_json::array();
    for (const auto& [path, w] : cfg.datasets)
        j["datasets"].push_back({{"manifest", path}, {"weight", w}});
    j["iterations"] = cfg.iterations;
    j["batch_size"] = cfg.batch_size;
    j["lr"] = cfg.lr;
    j["seed"] = cfg.seed;
    j["modules"] = toggles_to_json(cfg.modules);
    j["model"] = model_to_json(cfg.model);
    j["codec_checkpoint"] = cfg.codec_checkpoint;
    j["checkpoint_in"] = cfg.checkpoint_in;
    j["checkpoint_out"] = cfg.checkpoint_out;
    j["run_log"] = cfg.run_log;
    j["caption_dropout"] = cfg.caption_dropout;
    j["loss_weights"] = {{"pre", cfg.pre_loss_weight},
                         {"motion", cfg.motion_loss_weight},
                         {"diffusion", cfg.diffusion_loss_weight}};
    return j.dump(2) + "\n";
}

TrainConfig train_config_from_json_text(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const std::exception& e) {
        GLOW_CHECK_CFG(false, "config parse error: ", e.what());
    }
    TrainConfig cfg;
    try {
        cfg.stage = j.at("stage").get<std::string>();
        for (const auto& d : j.at("datasets"))
            cfg.datasets.emplace_back(d.at("manifest").get<std::string>(),
                                      d.contains("weight")
                                          ? d.at("weight").get<double>()
                                          : 1.0);
        maybe(j, "iterations", cfg.iterations);
        maybe(j, "batch_size", cfg.batch_size);
        maybe(j, "lr", cfg.lr);
        maybe(j, "seed", cfg.seed);
        if (j.contains("modules")) cfg.modules = toggles_from_json(j.at("modules"));
        if (j.contains("model")) cfg.model = model_from_json(j.at("model"));
        maybe(j, "codec_checkpoint", cfg.codec_checkpoint);
        maybe(j, "checkpoint_in", cfg.checkpoint_in);
        maybe(j, "checkpoint_out", cfg.checkpoint_out);
        maybe(j, "run_log", cfg.run_log);
        maybe(j, "caption_dropout", cfg.caption_dropout);
        if (j.contains("loss_weights")) {
            const auto& w = j.at("loss_weights");
            maybe(w, "pre", cfg.pre_loss_weight);
            maybe(w, "motion", cfg.motion_loss_weight);
            maybe(w, "diffusion", cfg.diffusion_loss_weight);
        }
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        GLOW_CHECK_CFG(false, "config field error: ", e.what());
    }
    cfg.seed = env_seed_override(cfg.seed);
    cfg.validate();
    return cfg;
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream f(path);
    GLOW_CHECK_CFG(f.good(), "cannot read config ", path);
    std::string text((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
    return train_config_from_json_text(text);
}

// ---------------- pipeline ----------------

Pipeline::Pipeline(const ModelConfig& cfg, const ModuleToggles& toggles,
                   uint64_t seed)
    : cfg_(cfg), toggles_(toggles) {
    cfg_.sync_and_validate(toggles_);
    codec_ = std::make_unique<codec::Codec>(cfg_.codec, derive_seed(seed, "codec"));
    codec_->params().set_trainable(false);
    if (toggles_.pre_restore)
        pre_ = std::make_unique<prerestore::PreRestoreNet>(
            cfg_.pre, derive_seed(seed, "pre_restore"));
    if (toggles_.motion)
        motion_ = std::make_unique<motion::MotionNet>(cfg_.motion,
                                                      derive_seed(seed, "motion"));
    dit_ = std::make_unique<dit::LinearDiT>(cfg_.dit, derive_seed(seed, "dit"));
    sched_ = diffusion::make_schedule(cfg_.diffusion_T);
}

std::unique_ptr<Pipeline> Pipeline::from_checkpoint(const Checkpoint& ckpt) {
    GLOW_CHECK_CFG(ckpt.config.contains("model") && ckpt.config.contains("toggles"),
                   "checkpoint lacks a pipeline config echo");
    ModelConfig mc = model_from_json(ckpt.config.at("model"));
    ModuleToggles tg = toggles_from_json(ckpt.config.at("toggles"));
    auto p = std::make_unique<Pipeline>(mc, tg, /*seed=*/0);
    unpack_store(ckpt, "codec.", p->codec_->params());
    const Tensor* lm = ckpt.find("codec.latent_mean");
    const Tensor* ls = ckpt.find("codec.latent_std");
    GLOW_CHECK_IO(lm && ls, "checkpoint lacks codec latent statistics");
    p->codec_->latent_mean() = *lm;
    p->codec_->latent_std() = *ls;
    if (p->pre_) unpack_store(ckpt, "pre.", p->pre_->params());
    if (p->motion_) unpack_store(ckpt, "motion.", p->motion_->params());
    unpack_store(ckpt, "dit.", p->dit_->params());
    return p;
}

void Pipeline::load_codec_checkpoint(const Checkpoint& codec_ckpt) {
    unpack_store(codec_ckpt, "codec.", codec_->params());
    const Tensor* lm = codec_ckpt.find("codec.latent_mean");
    const Tensor* ls = codec_ckpt.find("codec.latent_std");
    GLOW_CHECK_IO(lm && ls, "codec checkpoint lacks latent statistics");
    codec_->latent_mean() = *lm;
    codec_->latent_std() = *ls;
    codec_->params().set_trainable(false);
}

Checkpoint Pipeline::to_checkpoint() const {
    Checkpoint ckpt;
    ckpt.config["model"] = model_to_json(cfg_);
    ckpt.config["toggles"] = toggles_to_json(toggles_);
    pack_store(ckpt, "codec.", codec_->params());
    ckpt.put("codec.latent_mean", codec_->latent_mean());
    ckpt.put("codec.latent_std", codec_->latent_std());
    if (pre_) pack_store(ckpt, "pre.", pre_->params());
    if (motion_) pack_store(ckpt, "motion.", motion_->params());
    pack_store(ckpt, "dit.", dit_->params());
    return ckpt;
}

int64_t Pipeline::trainable_parameter_count() const {
    int64_t n = 0;
    if (pre_) n += pre_->params().count_scalars();
    if (motion_) n += motion_->params().count_scalars();
    n += dit_->params().count_scalars();
    return n;
}

std::vector<nn::ParamStore*> Pipeline::trainable_stores() {
    std::vector<nn::ParamStore*> stores;
    if (pre_) stores.push_back(&pre_->params());
    if (motion_) stores.push_back(&motion_->params());
    stores.push_back(&dit_->params());
    return stores;
}

// Anchored noise parameterization: the DiT predicts the deviation of the
// sharp latent from the coarse conditioning latent; the implied x0 estimate
// is z_coarse + delta, converted to an eps prediction for the eps-MSE loss
// and the DDIM update. A fresh (zero-gated) model therefore reproduces the
// coarse latent exactly instead of emitting unstructured noise.
namespace {
constexpr double kAnchorNoiseFloor = 5e-3;

diffusion::DenoiserFn anchored_denoiser(const dit::LinearDiT& net,
                                        const dit::DenoiseCondition& cond,
                                        const diffusion::NoiseSchedule& sched) {
    return [&net, &cond, &sched](const Var& x_t, const std::vector<int64_t>& t) {
        Var delta = net.forward(x_t, cond, t);
        Var x0_hat = ad::add(cond.coarse_latent, delta);
        std::vector<double> cs(t.size()), inv_cn(t.size());
        for (size_t i = 0; i < t.size(); ++i) {
            const double ab = sched.at(t[i]);
            cs[i] = std::sqrt(ab);
            inv_cn[i] = 1.0 / std::sqrt(std::max(1.0 - ab, kAnchorNoiseFloor));
        }
        return ad::scale_per_batch(
            ad::sub(x_t, ad::scale_per_batch(x0_hat, cs)), inv_cn);
    };
}
}  // namespace

Pipeline::StepLosses Pipeline::train_step(const Batch& batch, nn::Adam& opt,
                                          Rng& rng, double caption_dropout,
                                          double wp, double wm, double wd) {
    const int64_t b = batch.blurred.dim(0);
    const int64_t h = batch.blurred.dim(2), w = batch.blurred.dim(3);
    opt.zero_grad();
    StepLosses out;

    Var xb(batch.blurred);
    Var xs(batch.sharp);
    std::vector<Var> terms;

    Var coarse, shallow;
    if (pre_) {
        auto po = pre_->forward(xb);
        coarse = po.coarse;
        shallow = po.shallow;
        Var lp = ad::l1_loss(coarse, xs);
        out.pre = lp.val()[0];
        terms.push_back(ad::scale(lp, wp));
    } else {
        coarse = xb;
        shallow = Var(Tensor::zeros({b, cfg_.pre.shallow_feature_channels, h, w}));
    }

    Var field;
    if (motion_) {
        field = motion_->forward(xb);
        Var lm = ad::l1_loss(field, Var(batch.motion_target));
        out.motion = lm.val()[0];
        terms.push_back(ad::scale(lm, wm));
    } else {
        field = Var(Tensor::zeros({b, 2, h, w}));
    }

    Var z_coarse = codec_->encode_var(coarse);
    Tensor x0 = codec_->encode(batch.sharp).data;

    std::vector<bool> dropped(static_cast<size_t>(b), false);
    if (toggles_.text) {
        for (int64_t i = 0; i < b; ++i) {
            dropped[static_cast<size_t>(i)] = rng.uniform() < caption_dropout;
            if (dropped[static_cast<size_t>(i)] ||
                batch.captions[static_cast<size_t>(i)].is_null)
                ++out.null_captions;
        }
    }
    dit::DenoiseCondition cond{z_coarse, shallow, field,
                               dit_->make_text_tokens(batch.captions, dropped)};
    diffusion::DenoiserFn model = anchored_denoiser(*dit_, cond, sched_);
    Var ldiff = diffusion::denoise_loss(model, x0, sched_, rng);
    out.diffusion = ldiff.val()[0];
    terms.push_back(ad::scale(ldiff, wd));

    Var total = terms[0];
    for (size_t i = 1; i < terms.size(); ++i) total = ad::add(total, terms[i]);
    out.total = total.val()[0];
    if (!std::isfinite(out.total))
        throw DivergenceError("training loss is not finite");

    ad::backward(total);
    opt.clip_grad_norm(1.0);
    opt.step();
    return out;
}

// ---------------- inference ----------------

namespace {
ImageGrid pad_replicate(const ImageGrid& img, int64_t multiple) {
    const int64_t ph = (multiple - img.h % multiple) % multiple;
    const int64_t pw = (multiple - img.w % multiple) % multiple;
    if (ph == 0 && pw == 0) return img;
    ImageGrid out(img.h + ph, img.w + pw, img.c);
    for (int64_t y = 0; y < out.h; ++y)
        for (int64_t x = 0; x < out.w; ++x)
            for (int64_t ch = 0; ch < img.c; ++ch)
                out.at(y, x, ch) = img.at(std::min(y, img.h - 1),
                                          std::min(x, img.w - 1), ch);
    return out;
}

int64_t lcm64(int64_t a, int64_t b) { return a / std::gcd(a, b) * b; }
}  // namespace

ImageGrid Pipeline::deblur_plane(const ImageGrid& plane,
                                 const std::optional<Var>& text, int64_t steps,
                                 uint64_t seed) const {
    ad::NoGradGuard ng;
    int64_t mult = cfg_.codec.f;
    if (pre_) mult = lcm64(mult, cfg_.pre.divisor());
    if (motion_) mult = lcm64(mult, motion::MotionConfig::stride);
    const ImageGrid padded = pad_replicate(plane, mult);
    const int64_t b = 1, h = padded.h, w = padded.w;

    Var xb(image_to_tensor(padded));
    Var coarse, shallow;
    if (pre_) {
        auto po = pre_->forward(xb);
        coarse = po.coarse;
        shallow = po.shallow;
    } else {
        coarse = xb;
        shallow = Var(Tensor::zeros({b, cfg_.pre.shallow_feature_channels, h, w}));
    }
    Var field = motion_ ? motion_->forward(xb)
                        : Var(Tensor::zeros({b, 2, h, w}));

    Var z_coarse = codec_->encode_var(coarse);
    dit::DenoiseCondition cond{z_coarse, shallow, field, text};
    diffusion::DenoiserFn model = anchored_denoiser(*dit_, cond, sched_);
    Tensor z = diffusion::ddim_sample(model, z_coarse.val().shape, sched_,
                                      steps, seed);

    // Compose with the coarse estimate so the codec's reconstruction error on
    // the coarse image cancels; identity inputs pass through.
    Tensor dec_z = codec_->decode_var(Var(z)).val();
    Tensor dec_coarse = codec_->decode_var(z_coarse).val();
    Tensor outt = coarse.val();
    for (int64_t i = 0; i < outt.numel(); ++i)
        outt[i] = std::clamp(outt[i] + dec_z[i] - dec_coarse[i], 0.0, 1.0);

    ImageGrid out = tensor_to_image(outt);
    if (out.h == plane.h && out.w == plane.w) return out;
    ImageGrid cropped(plane.h, plane.w, 1);
    for (int64_t y = 0; y < plane.h; ++y)
        for (int64_t x = 0; x < plane.w; ++x)
            cropped.at(y, x, 0) = out.at(y, x, 0);
    return cropped;
}

ImageGrid Pipeline::deblur(const ImageGrid& blurred,
                           const std::optional<std::string>& caption,
                           int64_t steps, uint64_t seed,
                           std::vector<std::string>* warnings,
                           const Tensor* external_text) const {
    GLOW_CHECK_CFG(steps >= 1 && steps <= sched_.T,
                   "deblur: steps must lie in [1, ", sched_.T, "]");
    auto warn = [&](const std::string& m) {
        if (warnings) warnings->push_back(m);
    };

    std::optional<Var> text;
    const bool caption_given = caption.has_value() || external_text != nullptr;
    if (caption_given && !toggles_.text) {
        warn("caption given but the text module was disabled at train time; "
             "dropping caption");
    } else if (toggles_.text) {
        if (external_text) {
            GLOW_CHECK_CFG(external_text->rank() == 2 &&
                               external_text->dim(1) == cfg_.embedder.text_dim,
                           "external embedding dim mismatch");
            text = Var(external_text->reshaped(
                {1, external_text->dim(0), external_text->dim(1)}));
        } else {
            auto emb = semantic::embed_caption(caption.value_or(""), cfg_.embedder);
            text = dit_->make_text_tokens({emb}, {false});
        }
    }

    GLOW_CHECK(cfg_.codec.in_channels == 1,
               "deblur: multi-channel models are out of the desk scope");
    if (blurred.c == 1) return deblur_plane(blurred, text, steps, seed);
    GLOW_CHECK(blurred.c == 3, "deblur: images must have 1 or 3 channels");
    ImageGrid out(blurred.h, blurred.w, 3);
    for (int64_t ch = 0; ch < 3; ++ch) {
        ImageGrid plane(blurred.h, blurred.w, 1);
        for (int64_t y = 0; y < blurred.h; ++y)
            for (int64_t x = 0; x < blurred.w; ++x)
                plane.at(y, x, 0) = blurred.at(y, x, ch);
        ImageGrid rp = deblur_plane(plane, text, steps,
                                    derive_seed(seed, static_cast<uint64_t>(ch)));
        for (int64_t y = 0; y < blurred.h; ++y)
            for (int64_t x = 0; x < blurred.w; ++x)
                out.at(y, x, ch) = rp.at(y, x, 0);
    }
    return out;
}

eval::MetricReport Pipeline::evaluate(const blur::DatasetManifest& manifest,
                                      int64_t steps, uint64_t seed,
                                      const std::string& model_id) const {
    eval::MetricReport report;
    report.model_id = model_id;
    report.dataset_id = fs::path(manifest.dir).filename().string();
    report.seed = seed;
    for (const auto& s : manifest.samples) {
        ImageGrid blurred = read_png(manifest.resolve(s.blurred_path));
        ImageGrid sharp = read_png(manifest.resolve(s.sharp_path));
        if (cfg_.codec.in_channels == 1) {
            blurred = to_gray(blurred);
            sharp = to_gray(sharp);
        }
        std::optional<std::string> caption;
        if (toggles_.text && !s.caption.empty()) caption = s.caption;
        ImageGrid restored = deblur(blurred, caption, steps, derive_seed(seed, s.id));
        eval::SampleMetrics m;
        m.id = s.id;
        m.psnr_db = eval::psnr(restored, sharp);
        m.ssim = eval::ssim(restored, sharp);
        m.sharpness_proxy = eval::sharpness_proxy(restored);
        report.per_sample.push_back(std::move(m));
    }
    report.finalize();
    return report;
}

// ---------------- training drivers ----------------

namespace {

struct LoadedDataset {
    blur::DatasetManifest manifest;
    double weight = 1.0;
    std::vector<ImageGrid> blurred, sharp;
    std::vector<std::array<double, 2>> mean_offsets;
    std::vector<semantic::CaptionEmbedding> captions;
};

std::vector<LoadedDataset> load_datasets(const TrainConfig& cfg) {
    std::vector<LoadedDataset> out;
    double wsum = 0.0;
    for (const auto& [path, w] : cfg.datasets) wsum += w;
    for (const auto& [path, w] : cfg.datasets) {
        LoadedDataset d;
        d.manifest = blur::load_manifest(path);
        GLOW_CHECK_CFG(!d.manifest.samples.empty(), "empty dataset manifest ", path);
        d.weight = w / wsum;
        for (const auto& s : d.manifest.samples) {
            ImageGrid b = read_png(d.manifest.resolve(s.blurred_path));
            ImageGrid sh = read_png(d.manifest.resolve(s.sharp_path));
            if (cfg.model.codec.in_channels == 1) {
                b = to_gray(b);
                sh = to_gray(sh);
            }
            d.blurred.push_back(std::move(b));
            d.sharp.push_back(std::move(sh));
            d.mean_offsets.push_back({s.mean_dx, s.mean_dy});
            d.captions.push_back(
                semantic::embed_caption(s.caption, cfg.model.embedder));
        }
        out.push_back(std::move(d));
    }
    return out;
}

Pipeline::Batch make_batch(const LoadedDataset& d, int64_t batch_size, Rng& rng) {
    Pipeline::Batch batch;
    std::vector<ImageGrid> bs, ss;
    std::vector<std::array<double, 2>> offs;
    for (int64_t i = 0; i < batch_size; ++i) {
        const auto idx = static_cast<size_t>(
            rng.uniform_int(static_cast<int64_t>(d.blurred.size())));
        bs.push_back(d.blurred[idx]);
        ss.push_back(d.sharp[idx]);
        offs.push_back(d.mean_offsets[idx]);
        batch.captions.push_back(d.captions[idx]);
    }
    batch.blurred = images_to_tensor(bs);
    batch.sharp = images_to_tensor(ss);
    const int64_t h = batch.blurred.dim(2), w = batch.blurred.dim(3);
    batch.motion_target = Tensor({batch_size, 2, h, w});
    for (int64_t b = 0; b < batch_size; ++b)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                batch.motion_target.at4(b, 0, y, x) = offs[static_cast<size_t>(b)][0];
                batch.motion_target.at4(b, 1, y, x) = offs[static_cast<size_t>(b)][1];
            }
    return batch;
}

TrainResult run_stage(const TrainConfig& cfg, const Checkpoint* init) {
    cfg.validate();
    TrainResult result;

    std::unique_ptr<Pipeline> pipe;
    nlohmann::ordered_json provenance = nlohmann::ordered_json::array();
    if (init) {
        GLOW_CHECK_CFG(cfg.stage == "finetune",
                       "init checkpoint only applies to the finetune stage");
        bool has_bpp = false;
        for (const auto& rec : init->provenance)
            if (rec.value("stage", "") == "bpp") has_bpp = true;
        if (!has_bpp)
            result.warnings.push_back(
                "finetune init checkpoint has no bpp stage in its provenance; "
                "proceeding anyway");
        pipe = Pipeline::from_checkpoint(*init);
        provenance = init->provenance;
    } else {
        GLOW_CHECK_CFG(cfg.stage != "finetune",
                       "finetune requires an init checkpoint");
        if (cfg.stage == "mixed")
            GLOW_CHECK_CFG(cfg.datasets.size() >= 2,
                           "mixed stage requires at least two datasets");
        ModelConfig mc = cfg.model;
        pipe = std::make_unique<Pipeline>(mc, cfg.modules, cfg.seed);
        GLOW_CHECK_CFG(!cfg.codec_checkpoint.empty(),
                       "a pretrained codec checkpoint is required");
        pipe->load_codec_checkpoint(Checkpoint::load(cfg.codec_checkpoint));
    }
    if (init && !cfg.codec_checkpoint.empty())
        pipe->load_codec_checkpoint(Checkpoint::load(cfg.codec_checkpoint));

    auto datasets = load_datasets(cfg);
    nn::Adam opt(pipe->trainable_stores(), cfg.lr);

    std::ofstream log;
    if (!cfg.run_log.empty()) {
        log.open(cfg.run_log);
        GLOW_CHECK_IO(log.good(), "cannot write run log ", cfg.run_log);
    }

    std::vector<int64_t> sampling_counts(datasets.size(), 0);
    Checkpoint last_good = pipe->to_checkpoint();
    int64_t total_null_captions = 0;

    auto write_ckpt = [&](Checkpoint& ckpt, bool diverged, int64_t at_iter) {
        ordered_json rec;
        rec["stage"] = cfg.stage;
        rec["seed"] = cfg.seed;
        rec["iterations"] = cfg.iterations;
        rec["batch_size"] = cfg.batch_size;
        rec["lr"] = cfg.lr;
        rec["datasets"] = ordered_json::array();
        for (const auto& [p, w] : cfg.datasets)
            rec["datasets"].push_back({{"manifest", p}, {"weight", w}});
        rec["modules"] = toggles_to_json(cfg.modules);
        if (diverged) {
            rec["diverged_at_iteration"] = at_iter;
            rec["note"] = "checkpoint holds the last good snapshot";
        }
        ckpt.provenance = provenance;
        ckpt.provenance.push_back(std::move(rec));
        ckpt.rng_state = derive_seed(cfg.seed, static_cast<uint64_t>(at_iter));
        if (!cfg.checkpoint_out.empty()) ckpt.save(cfg.checkpoint_out);
    };

    for (int64_t it = 0; it < cfg.iterations; ++it) {
        Rng rng(derive_seed(cfg.seed, static_cast<uint64_t>(it)));
        std::vector<double> weights;
        for (const auto& d : datasets) weights.push_back(d.weight);
        const size_t dsi = pick_dataset_index(weights, rng);
        ++sampling_counts[dsi];
        Pipeline::Batch batch = make_batch(datasets[dsi], cfg.batch_size, rng);

        double lr = cfg.lr;
        if (cfg.stage == "finetune")
            lr = cfg.lr * 0.5 *
                 (1.0 + std::cos(3.14159265358979323846 * static_cast<double>(it) /
                                 static_cast<double>(cfg.iterations)));
        opt.set_lr(lr);

        Pipeline::StepLosses losses;
        try {
            losses = pipe->train_step(batch, opt, rng, cfg.caption_dropout,
                                      cfg.pre_loss_weight, cfg.motion_loss_weight,
                                      cfg.diffusion_loss_weight);
        } catch (const DivergenceError&) {
            write_ckpt(last_good, /*diverged=*/true, it);
            throw;
        }
        total_null_captions += losses.null_captions;
        if (static_cast<int64_t>(result.first_losses.size()) < 10)
            result.first_losses.push_back(losses.total);

        if (log.is_open()) {
            ordered_json rec;
            rec["iter"] = it;
            rec["lr"] = lr;
            rec["dataset"] = datasets[dsi].manifest.dir;
            rec["loss_pre"] = losses.pre;
            rec["loss_motion"] = losses.motion;
            rec["loss_diffusion"] = losses.diffusion;
            rec["total"] = losses.total;
            rec["null_captions"] = losses.null_captions;
            log << rec.dump() << "\n";
        }
        if ((it + 1) % cfg.snapshot_interval == 0)
            last_good = pipe->to_checkpoint();
    }

    if (log.is_open()) {
        ordered_json rec;
        rec["sampling_counts"] = sampling_counts;
        rec["total_null_captions"] = total_null_captions;
        rec["batches"] = cfg.iterations;
        log << rec.dump() << "\n";
    }

    result.checkpoint = pipe->to_checkpoint();
    write_ckpt(result.checkpoint, /*diverged=*/false, cfg.iterations);
    return result;
}

}  // namespace

TrainResult run_bpp(const TrainConfig& cfg) {
    GLOW_CHECK_CFG(cfg.stage == "bpp", "run_bpp: stage must be 'bpp'");
    return run_stage(cfg, nullptr);
}

TrainResult run_finetune(const TrainConfig& cfg, const Checkpoint& init) {
    GLOW_CHECK_CFG(cfg.stage == "finetune", "run_finetune: stage must be 'finetune'");
    return run_stage(cfg, &init);
}

TrainResult run_mixed(const TrainConfig& cfg) {
    GLOW_CHECK_CFG(cfg.stage == "mixed", "run_mixed: stage must be 'mixed'");
    return run_stage(cfg, nullptr);
}

CodecTrainResult train_codec(const std::vector<ImageGrid>& sharp_images,
                             const codec::CodecConfig& ccfg, int64_t iterations,
                             int64_t batch_size, double lr, uint64_t seed,
                             const std::string& run_log) {
    GLOW_CHECK_CFG(!sharp_images.empty(), "train_codec: no images");
    codec::Codec cdc(ccfg, derive_seed(seed, "codec_init"));
    nn::Adam opt({&cdc.params()}, lr);

    std::ofstream log;
    if (!run_log.empty()) {
        log.open(run_log);
        GLOW_CHECK_IO(log.good(), "cannot write run log ", run_log);
    }

    CodecTrainResult result;
    std::vector<Tensor> tensors;
    tensors.reserve(sharp_images.size());
    for (const auto& img : sharp_images) tensors.push_back(image_to_tensor(img));

    for (int64_t it = 0; it < iterations; ++it) {
        Rng rng(derive_seed(seed, static_cast<uint64_t>(it)));
        std::vector<ImageGrid> pick;
        for (int64_t i = 0; i < batch_size; ++i)
            pick.push_back(sharp_images[static_cast<size_t>(rng.uniform_int(
                static_cast<int64_t>(sharp_images.size())))]);
        const double loss = cdc.train_step(images_to_tensor(pick), opt);
        result.losses.push_back(loss);
        if (log.is_open())
            log << ordered_json({{"iter", it}, {"loss", loss}}).dump() << "\n";
    }
    cdc.calibrate_latent_norm(tensors);

    Checkpoint ckpt;
    ckpt.config["codec"] = {{"f", ccfg.f},
                            {"c_lat", ccfg.c_lat},
                            {"width", ccfg.width},
                            {"in_channels", ccfg.in_channels}};
    pack_store(ckpt, "codec.", cdc.params());
    ckpt.put("codec.latent_mean", cdc.latent_mean());
    ckpt.put("codec.latent_std", cdc.latent_std());
    ordered_json rec;
    rec["stage"] = "codec";
    rec["seed"] = seed;
    rec["iterations"] = iterations;
    rec["batch_size"] = batch_size;
    rec["lr"] = lr;
    ckpt.provenance.push_back(std::move(rec));
    result.checkpoint = std::move(ckpt);
    return result;
}

size_t pick_dataset_index(const std::vector<double>& weights, Rng& rng) {
    GLOW_CHECK(!weights.empty(), "pick_dataset_index: no weights");
    const double r = rng.uniform();
    double acc = 0.0;
    for (size_t i = 0; i < weights.size(); ++i) {
        acc += weights[i];
        if (r < acc) return i;
    }
    return weights.size() - 1;
}

}  // namespace glow::pipeline

#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "glow/blur/dataset.hpp"
#include "glow/codec/codec.hpp"
#include "glow/core/checkpoint.hpp"
#include "glow/diffusion/diffusion.hpp"
#include "glow/dit/model.hpp"
#include "glow/eval/metrics.hpp"
#include "glow/motion/net.hpp"
#include "glow/prerestore/net.hpp"
#include "glow/semantic/embedder.hpp"

namespace glow::pipeline {

struct ModuleToggles {
    bool pre_restore = true;
    bool motion = true;
    bool text = true;
};

struct ModelConfig {
    prerestore::PreRestoreConfig pre;
    codec::CodecConfig codec;
    dit::DiTConfig dit;
    motion::MotionConfig motion;
    semantic::EmbedderConfig embedder;
    int64_t diffusion_T = 1000;

    // Keeps the cross-module dims consistent (latent channels, text dim,
    // shallow channels, image channels).
    void sync_and_validate(const ModuleToggles& toggles);
};

struct TrainConfig {
    std::string stage;  // bpp | finetune | mixed
    std::vector<std::pair<std::string, double>> datasets;  // manifest, weight
    int64_t iterations = 2000;
    int64_t batch_size = 8;
    double lr = 1e-4;
    uint64_t seed = 0;
    ModuleToggles modules;
    ModelConfig model;
    std::string codec_checkpoint;  // pretrained codec, frozen during training
    std::string checkpoint_in;     // finetune init
    std::string checkpoint_out;
    std::string run_log;  // JSONL training log (optional)
    double caption_dropout = 0.1;
    double pre_loss_weight = 1.0;
    double motion_loss_weight = 0.1;
    double diffusion_loss_weight = 1.0;
    int64_t snapshot_interval = 50;  // last-good checkpoint cadence

    void validate() const;
};

// JSON round trip for config files; GLOW_SEED env var overrides the seed on
// load when set.
TrainConfig train_config_from_json_text(const std::string& text);
TrainConfig load_train_config(const std::string& path);
std::string train_config_to_json_text(const TrainConfig& cfg);

// The full model stack behind one checkpoint.
class Pipeline {
public:
    Pipeline(const ModelConfig& cfg, const ModuleToggles& toggles, uint64_t seed);

    static std::unique_ptr<Pipeline> from_checkpoint(const Checkpoint& ckpt);

    void load_codec_checkpoint(const Checkpoint& codec_ckpt);

    Checkpoint to_checkpoint() const;  // params + config echo (caller appends provenance)

    // Full restoration chain: pre-restore -> encode(coarse) -> predict motion
    // -> embed caption -> ddim -> decode, composed with the coarse estimate so
    // codec reconstruction error cancels. RGB inputs run per channel.
    ImageGrid deblur(const ImageGrid& blurred,
                     const std::optional<std::string>& caption, int64_t steps,
                     uint64_t seed,
                     std::vector<std::string>* warnings = nullptr,
                     const Tensor* external_text = nullptr) const;

    eval::MetricReport evaluate(const blur::DatasetManifest& manifest,
                                int64_t steps, uint64_t seed,
                                const std::string& model_id = "model") const;

    const ModelConfig& config() const { return cfg_; }
    const ModuleToggles& toggles() const { return toggles_; }
    int64_t trainable_parameter_count() const;

    codec::Codec& codec() { return *codec_; }
    prerestore::PreRestoreNet* pre() { return pre_.get(); }
    motion::MotionNet* motion_net() { return motion_.get(); }
    dit::LinearDiT& dit_model() { return *dit_; }
    const diffusion::NoiseSchedule& schedule() const { return sched_; }

    // One training step over a prepared batch; returns the loss terms.
    struct StepLosses {
        double pre = 0.0, motion = 0.0, diffusion = 0.0, total = 0.0;
        int64_t null_captions = 0;
    };
    struct Batch {
        Tensor blurred;        // [B,C,H,W]
        Tensor sharp;          // [B,C,H,W]
        Tensor motion_target;  // [B,2,H,W]
        std::vector<semantic::CaptionEmbedding> captions;
    };
    StepLosses train_step(const Batch& batch, nn::Adam& opt, Rng& rng,
                          double caption_dropout, double wp, double wm,
                          double wd);

    std::vector<nn::ParamStore*> trainable_stores();

private:
    struct InferencePieces;
    ModelConfig cfg_;
    ModuleToggles toggles_;
    std::unique_ptr<codec::Codec> codec_;
    std::unique_ptr<prerestore::PreRestoreNet> pre_;
    std::unique_ptr<motion::MotionNet> motion_;
    std::unique_ptr<dit::LinearDiT> dit_;
    diffusion::NoiseSchedule sched_;

    ImageGrid deblur_plane(const ImageGrid& plane,
                           const std::optional<ad::Var>& text, int64_t steps,
                           uint64_t seed) const;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<std::string> warnings;
    std::vector<double> first_losses;  // first 10 totals, for determinism checks
};

// Stage drivers. run_finetune warns (and proceeds) when the init checkpoint
// carries no bpp stage; run_mixed requires at least two datasets.
TrainResult run_bpp(const TrainConfig& cfg);
TrainResult run_finetune(const TrainConfig& cfg, const Checkpoint& init);
TrainResult run_mixed(const TrainConfig& cfg);

// Codec pretraining on sharp images.
struct CodecTrainResult {
    Checkpoint checkpoint;
    std::vector<double> losses;
};
CodecTrainResult train_codec(const std::vector<ImageGrid>& sharp_images,
                             const codec::CodecConfig& cfg, int64_t iterations,
                             int64_t batch_size, double lr, uint64_t seed,
                             const std::string& run_log = "");

uint64_t env_seed_override(uint64_t fallback);

// Mixture sampling used by the training loop: one weighted draw per
// iteration. Weights must be normalized.
size_t pick_dataset_index(const std::vector<double>& weights, Rng& rng);

}  // namespace glow::pipeline

#pragma once

#include "igi/checkpoint.hpp"
#include "igi/losses.hpp"
#include "igi/pipeline.hpp"
#include "igi/synthetic.hpp"

#include <optional>
#include <random>
#include <string>

namespace igi {

enum class Stage { Prior, S1, S2, S3 };
const char* stage_name(Stage stage);
Stage parse_stage(const std::string& name);

struct LossLogEntry {
  int step = 0;
  std::string stage;
  std::string term;
  double value = 0.0;
};

// Append-only loss curve. With a path, every entry is also written as a tab-separated line.
class LossLog {
 public:
  LossLog(std::string path = {});
  void append(int step, const std::string& stage, const std::string& term, double value);
  void append(int step, const std::string& stage, const LossReport& report);
  const std::vector<LossLogEntry>& entries() const { return entries_; }
  std::vector<double> series(const std::string& stage, const std::string& term) const;

 private:
  std::string path_;
  std::vector<LossLogEntry> entries_;
};

// Everything a training run touches. Discriminators live here, not in the checkpointed models.
struct TrainingContext {
  TrainingContext(Config c, World w, InversionModels m)
      : config(std::move(c)), world(std::move(w)), models(std::move(m)) {}

  Config config;
  World world;
  InversionModels models;
  ProxyNetwork proxy{nullptr};
  LatentDiscriminator latent_disc{nullptr};
  std::array<ImageDiscriminator, kNumVariants> dual_disc{nullptr, nullptr, nullptr};
  ImageDiscriminator rec_disc{nullptr};
  ImageDiscriminator fusion_disc{nullptr};
  ImageDiscriminator prior_disc{nullptr};
  SyntheticDataset data;
  bool coarse_cached = false;
  LossLog log;
  std::mt19937_64 rng;
};

// World with the prior generator of config.world.prior_checkpoint, when set.
World make_training_world(const Config& config);
TrainingContext make_context(const Config& config, const std::string& log_path = {});

// Lazily sample the training identities and, once E_latent is trained, cache coarse renders.
void ensure_training_data(TrainingContext& ctx);
void ensure_coarse_cache(TrainingContext& ctx);

// One adversarial update of the prior generator against procedural "real" images. The
// discriminator sees rgb (blurred early on, and at prior_resolution_start for the first half of
// training) stacked with the landmark contour map of the shared head pose and expression.
struct PriorBatch {
  torch::Tensor real;       // B x 3 x H x W
  torch::Tensor landmarks;  // B x 1 x H x W
  std::vector<FrameGeometry> geometry;
  std::vector<Camera> cameras;
};
PriorBatch sample_prior_batch(const World& world, std::mt19937_64& rng, int batch);
torch::Tensor prior_disc_input(const torch::Tensor& images, const torch::Tensor& landmarks,
                               const TrainingConfig& config, int step, int total_steps);
LossReport gan_prior_step(Generator& generator, ImageDiscriminatorImpl& disc, torch::optim::Optimizer& g_opt,
                          torch::optim::Optimizer& d_opt, const PriorBatch& batch, const TrainingConfig& config,
                          int step, int total_steps, std::uint64_t seed);

void train_prior(TrainingContext& ctx, int steps);
void train_latent(TrainingContext& ctx, int steps);
void train_refiners(TrainingContext& ctx, Variant variant, int steps);
void train_recurrent(TrainingContext& ctx, int steps);
void train_fusion(TrainingContext& ctx, int steps);

std::string checkpoint_path(const std::string& dir, Stage stage);
Checkpoint make_checkpoint(const TrainingContext& ctx, Stage stage);
// Restore models (and the generator) from a stage checkpoint.
void load_checkpoint(TrainingContext& ctx, const Checkpoint& checkpoint);

// Run one stage. s2 needs the s1 checkpoint in dir and s3 needs s2; the result is written to
// checkpoint_path(dir, stage) and loss lines are appended to dir/loss_log.tsv.
std::string run_stage(const Config& config, Stage stage, const std::string& dir);

// A trained system restored from any stage checkpoint.
struct TrainedSystem {
  Config config;
  World world;
  InversionModels models;
  ProxyNetwork proxy{nullptr};
};
TrainedSystem load_system(const std::string& checkpoint_file);

}  // namespace igi

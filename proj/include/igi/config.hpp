#pragma once

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace igi {

struct WorldConfig {
  std::uint64_t face_seed = 7;
  std::uint64_t generator_seed = 1;
  int shape_dims = 4;
  int expression_dims = 4;
  int mesh_rings = 24;
  int mesh_segments = 48;
  std::string prior_checkpoint;  // empty: the seeded, untrained prior generator
};

struct CameraConfig {
  double radius = 2.7;
  double focal_scale = 2.0;
  int resolution = 32;
  double yaw_range = 0.6;
  double pitch_range = 0.3;
};

struct GeneratorConfig {
  int w_dim = 64;
  int style_layers = 6;
  int mapping_layers = 2;
  std::vector<int> tex_resolutions{8, 16, 32};
  std::vector<int> tex_channels{32, 32, 16};
  std::vector<int> static_channels{64, 64, 48};  // g_static features at the three modulation points
  int const_channels = 64;
  int plane_resolution = 32;
  int plane_channels = 16;
  int raw_channels = 16;
  int decoder_hidden = 32;
  int samples_per_ray = 24;
  double box_half_extent = 0.65;
  double shell_sharpness = 30.0;  // density prior slope around the head ellipsoid
  std::vector<double> head_radii{0.45, 0.5, 0.46};
};

struct EncoderConfig {
  std::vector<int> unet_channels{16, 32, 48, 64};  // encoder channels at 32, 16, 8, 4
  std::vector<int> decoder_channels{48, 32, 16};   // decoder channels at 8, 16, 32
  int latent_channels = 32;
  int head_hidden = 32;
  int uv_resolution = 32;
};

struct RecurrentConfig {
  int kernel = 3;
  double update_gate_bias = -4.0;  // initial z bias when distilled from the one-shot decoder
  int window = 4;                  // ConvFusion window
  int max_sequence = 32;
  int rendered_frames = 4;
  int warm_start_cycles = 1;
};

struct TrainingConfig {
  double lambda_lpips_s1 = 0.5;
  double lambda_id_s1 = 0.25;
  double lambda_lpips_s2 = 1.0;
  double lambda_tri = 0.001;
  double lambda_tex = 0.001;
  double lambda_raw = 1.0;
  double lambda_adv = 0.1;
  double lr_encoder = 1e-4;
  double lr_discriminator = 1e-3;
  double lr_latent_discriminator = 1e-4;
  double lr_generator = 2.5e-3;
  double r1_gamma = 1.0;
  double density_reg_std = 0.004;  // fraction of the volume extent
  double density_reg_weight = 0.25;
  double blur_sigma = 1.0;         // initial blur on discriminator inputs (pixels)
  double blur_fraction = 0.1;      // fraction of prior steps over which the blur decays linearly
  int prior_resolution_start = 16;
  double adv_start_fraction = 0.75;  // stage 2/3: adversarial fine-tuning starts after this fraction
  int batch = 4;
  int s3_batch = 2;  // sequences per stage-3 step; each renders rendered_frames targets
  int prior_steps = 100;
  int s1_steps = 600;
  int s2_steps = 600;
  int s3_steps = 400;
  int train_identities = 64;
  int eval_identities = 16;
  int sequence_length = 40;
  std::uint64_t data_seed = 1000;
  std::uint64_t eval_seed = 9000;
  std::uint64_t proxy_seed = 77;
};

struct EvalConfig {
  int source_span = 24;      // sources are sampled evenly from the first source_span frames
  int long_source_span = 32; // span for long-sequence evaluations
  int eval_frames = 8;       // evaluation frames are the last eval_frames of each sequence
};

struct Config {
  std::uint64_t seed = 0;
  WorldConfig world;
  CameraConfig camera;
  GeneratorConfig generator;
  EncoderConfig encoders;
  RecurrentConfig recurrent;
  TrainingConfig training;
  EvalConfig eval;

  static Config load(const std::string& path);
  void save(const std::string& path) const;
  std::string hash() const;  // short digest of the serialized config
};

void to_json(nlohmann::json& j, const Config& c);
void from_json(const nlohmann::json& j, Config& c);

}  // namespace igi

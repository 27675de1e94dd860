#include "igi/config.hpp"

#include "igi/common.hpp"

#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

namespace igi {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(WorldConfig, face_seed, generator_seed, shape_dims, expression_dims,
                                                mesh_rings, mesh_segments, prior_checkpoint)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CameraConfig, radius, focal_scale, resolution, yaw_range, pitch_range)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GeneratorConfig, w_dim, style_layers, mapping_layers, tex_resolutions,
                                                tex_channels, static_channels, const_channels, plane_resolution,
                                                plane_channels, raw_channels, decoder_hidden, samples_per_ray,
                                                box_half_extent, shell_sharpness, head_radii)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EncoderConfig, unet_channels, decoder_channels, latent_channels,
                                                head_hidden, uv_resolution)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RecurrentConfig, kernel, update_gate_bias, window, max_sequence,
                                                rendered_frames, warm_start_cycles)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainingConfig, lambda_lpips_s1, lambda_id_s1, lambda_lpips_s2,
                                                lambda_tri, lambda_tex, lambda_raw, lambda_adv, lr_encoder,
                                                lr_discriminator, lr_latent_discriminator, lr_generator, r1_gamma,
                                                density_reg_std, density_reg_weight, blur_sigma, blur_fraction,
                                                prior_resolution_start, adv_start_fraction, batch, s3_batch, prior_steps,
                                                s1_steps, s2_steps, s3_steps, train_identities, eval_identities,
                                                sequence_length, data_seed, eval_seed, proxy_seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EvalConfig, source_span, long_source_span, eval_frames)

void to_json(nlohmann::json& j, const Config& c) {
  j = nlohmann::json{{"seed", c.seed},
                     {"world", c.world},
                     {"camera", c.camera},
                     {"generator", c.generator},
                     {"encoders", c.encoders},
                     {"recurrent", c.recurrent},
                     {"training", c.training},
                     {"eval", c.eval}};
}

void from_json(const nlohmann::json& j, Config& c) {
  const Config defaults;
  c.seed = j.value("seed", defaults.seed);
  c.world = j.value("world", defaults.world);
  c.camera = j.value("camera", defaults.camera);
  c.generator = j.value("generator", defaults.generator);
  c.encoders = j.value("encoders", defaults.encoders);
  c.recurrent = j.value("recurrent", defaults.recurrent);
  c.training = j.value("training", defaults.training);
  c.eval = j.value("eval", defaults.eval);
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingPrerequisite("cannot open config file: " + path);
  nlohmann::json j;
  in >> j;
  return j.get<Config>();
}

void Config::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config file: " + path);
  out << nlohmann::json(*this).dump(2) << '\n';
}

std::string Config::hash() const {
  // FNV-1a over the canonical dump; stable across runs and platforms.
  const std::string text = nlohmann::json(*this).dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace igi

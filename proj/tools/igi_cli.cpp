#include "igi/baselines.hpp"
#include "igi/checkpoint.hpp"
#include "igi/common.hpp"
#include "igi/image_io.hpp"
#include "igi/manifest.hpp"
#include "igi/schedule.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace igi;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "igi_out";
};

Config load_config(const Globals& g) {
  Config c = g.config_path.empty() ? Config{} : Config::load(g.config_path);
  if (g.seed) c.seed = *g.seed;
  return c;
}

std::string frame_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%04d.ppm", i);
  return buf;
}

// Frames of a manifest as observations, images read relative to the manifest.
std::vector<FrameObservation> load_frames(const Manifest& m, const fs::path& base, FrameRole role) {
  std::vector<FrameObservation> out;
  for (const FrameRecord* r : m.with_role(role)) {
    FrameObservation f;
    f.image = read_ppm((base / r->image).string());
    f.params = r->params;
    f.camera = r->camera();
    out.push_back(std::move(f));
  }
  return out;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << '\n';
}

void synth_data(const Globals& g, const std::string& split, int identities, int frames) {
  const Config c = load_config(g);
  World world = make_training_world(c);
  const bool eval = split == "eval";
  require(eval || split == "train", "split must be train or eval");
  const std::uint64_t base = eval ? c.training.eval_seed : c.training.data_seed;
  const int count = identities > 0 ? identities : (eval ? c.training.eval_identities : c.training.train_identities);
  const int length = frames > 0 ? frames : c.training.sequence_length;
  for (int i = 0; i < count; ++i) {
    const SyntheticSample s = sample_synthetic_identity(world, base + static_cast<std::uint64_t>(i), length);
    const fs::path dir = fs::path(g.out) / split / ("id_" + std::to_string(base + static_cast<std::uint64_t>(i)));
    Manifest m;
    for (int k = 0; k < length; ++k) {
      const SyntheticFrame& f = s.frames[static_cast<std::size_t>(k)];
      FrameRecord r;
      r.image = "images/" + frame_name(k);
      r.params = f.params;
      r.yaw = f.camera.yaw();
      r.pitch = f.camera.pitch();
      r.radius = f.camera.radius();
      r.intrinsics = f.camera.intrinsics();
      r.role = k >= length - c.eval.eval_frames ? FrameRole::Eval
                                                : (k < c.eval.source_span ? FrameRole::Source : FrameRole::Driving);
      write_ppm((dir / r.image).string(), f.image);
      m.frames.push_back(r);
    }
    m.save((dir / "manifest.json").string());
  }
  std::cout << "wrote " << count << " identities to " << (fs::path(g.out) / split).string() << '\n';
}

void train(const Globals& g, const std::string& stage) {
  const Config c = load_config(g);
  const std::string path = run_stage(c, parse_stage(stage), g.out);
  std::cout << "checkpoint " << path << '\n';
}

void invert(const Globals& g, const std::string& checkpoint, const std::string& manifest_path, bool one_shot,
            bool stream) {
  require(one_shot != stream, "choose exactly one of --one-shot and --stream");
  TrainedSystem sys = load_system(checkpoint);
  const Manifest m = Manifest::load(manifest_path);
  const auto sources = load_frames(m, fs::path(manifest_path).parent_path(), FrameRole::Source);
  torch::NoGradGuard no_grad;
  Checkpoint out;
  out.put_config(sys.config);
  if (one_shot) {
    put_avatar(out, invert_one_shot(sys.world, sys.models, sources.front()), sys.world.generator);
  } else {
    AvatarSession session = start_session(sys.world, sys.models, sources.front());
    for (const auto& f : sources) {
      update_session(sys.world, sys.models, session, f);
      std::cout << "frame " << session.state.t << " folded\n";
    }
    put_session(out, session);
    put_avatar(out, session_avatar(sys.models, session), sys.world.generator);
  }
  const std::string path = (fs::path(g.out) / "avatar.ckpt").string();
  out.save(path);
  std::cout << "avatar " << path << '\n';
}

void animate_cmd(const Globals& g, const std::string& checkpoint, const std::string& avatar_path,
                 const std::string& manifest_path, const std::string& role) {
  TrainedSystem sys = load_system(checkpoint);
  const Avatar avatar = get_avatar(Checkpoint::load(avatar_path));
  const Manifest m = Manifest::load(manifest_path);
  torch::NoGradGuard no_grad;
  int k = 0;
  for (const FrameRecord* r : m.with_role(parse_role(role))) {
    const RenderOutput out = animate(sys.world, avatar, r->params, r->camera());
    write_ppm((fs::path(g.out) / "frames" / frame_name(k++)).string(), out.rgb[0]);
  }
  std::cout << "rendered " << k << " frames\n";
}

SyntheticDataset eval_data(TrainedSystem& sys) {
  const TrainingConfig& t = sys.config.training;
  return make_dataset(sys.world, t.eval_seed, t.eval_identities, t.sequence_length);
}

void eval_cmd(const Globals& g, const std::string& checkpoint, const std::string& method, const std::string& variant,
              std::vector<int> sources) {
  TrainedSystem sys = load_system(checkpoint);
  const SyntheticDataset data = eval_data(sys);
  MethodSpec spec{parse_method(method), Variant::Full};
  for (int v = 0; v < kNumVariants; ++v)
    if (variant == variant_name(static_cast<Variant>(v))) spec.variant = static_cast<Variant>(v);
  nlohmann::json j = nlohmann::json::array();
  for (int n : sources) {
    const MetricsReport r = evaluate_method(sys.world, sys.models, *sys.proxy, data, spec, n, sys.config.eval);
    j.push_back({{"method", method}, {"sources", n}, {"metrics", to_json(r, true)}});
    std::cout << method << " n=" << n << " l1=" << r.l1 << " psnr=" << r.psnr << " lpips=" << r.lpips
              << " csim=" << r.csim << " akd=" << r.akd << " fid=" << r.fid << '\n';
  }
  write_json(fs::path(g.out) / "eval.json", j);
}

void ablate_cmd(const Globals& g, const std::string& checkpoint) {
  const Checkpoint c = Checkpoint::load(checkpoint);
  for (int v = 0; v < kNumVariants; ++v) {
    const std::string block = std::string("e_tex.") + variant_name(static_cast<Variant>(v));
    if (!c.has_module(block)) throw MissingPrerequisite("checkpoint lacks variant " + block);
  }
  const std::string stage = c.meta.value("stage", std::string{});
  if (stage != "s2" && stage != "s3") throw MissingPrerequisite("ablation needs a stage-2 or stage-3 checkpoint");
  TrainedSystem sys = load_system(checkpoint);
  const SyntheticDataset data = eval_data(sys);
  const auto rows = ablation_suite(sys.world, sys.models, *sys.proxy, data, sys.config.eval);
  for (const auto& r : rows) std::cout << r.name << " l1=" << r.metrics.l1 << " psnr=" << r.metrics.psnr << '\n';
  write_json(fs::path(g.out) / "ablation.json", to_json(rows));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Incremental 3D GAN inversion of animatable head avatars"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config_path, "JSON config file")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "override the config seed");
  app.add_option("--out", g.out, "output directory");

  std::string split = "eval";
  int identities = 0, frames = 0;
  auto* synth = app.add_subcommand("synth-data", "sample synthetic identities to manifests and PPM frames");
  synth->add_option("--split", split, "train or eval");
  synth->add_option("--identities", identities, "identity count (default from config)");
  synth->add_option("--frames", frames, "frames per identity (default from config)");

  std::string stage;
  auto* train_cmd = app.add_subcommand("train", "run one training stage");
  train_cmd->add_option("stage", stage, "prior | s1 | s2 | s3")->required()->check(CLI::IsMember({"prior", "s1", "s2", "s3"}));

  std::string checkpoint, manifest, avatar, role = "driving";
  bool one_shot = false, stream = false;
  auto* inv = app.add_subcommand("invert", "invert the source frames of a manifest");
  inv->add_option("--checkpoint", checkpoint)->required();
  inv->add_option("--manifest", manifest)->required();
  inv->add_flag("--one-shot", one_shot, "first source frame only");
  inv->add_flag("--stream", stream, "fold all source frames through a recurrent session");

  auto* anim = app.add_subcommand("animate", "render an avatar with the motion of a manifest");
  anim->add_option("--checkpoint", checkpoint)->required();
  anim->add_option("--avatar", avatar)->required();
  anim->add_option("--manifest", manifest)->required();
  anim->add_option("--role", role, "frames to drive with: source | driving | eval");

  std::string method = "recurrent", variant = "full";
  std::vector<int> sources{1};
  auto* ev = app.add_subcommand("eval", "held-out metrics on the synthetic evaluation identities");
  ev->add_option("--checkpoint", checkpoint)->required();
  ev->add_option("--method", method, "coarse | one_shot | recurrent | convfusion | feature_average");
  ev->add_option("--variant", variant, "one-shot variant: full | wo_nt_enc | etri_offsets");
  ev->add_option("--sources", sources, "source frame counts");

  auto* abl = app.add_subcommand("ablate", "encoder ablation table");
  abl->add_option("--checkpoint", checkpoint)->required();

  CLI11_PARSE(app, argc, argv);
  if (seed_opt->count() > 0) g.seed = seed;
  try {
    if (*synth) synth_data(g, split, identities, frames);
    if (*train_cmd) train(g, stage);
    if (*inv) invert(g, checkpoint, manifest, one_shot, stream);
    if (*anim) animate_cmd(g, checkpoint, avatar, manifest, role);
    if (*ev) eval_cmd(g, checkpoint, method, variant, sources);
    if (*abl) ablate_cmd(g, checkpoint);
  } catch (const MissingPrerequisite& e) {
    std::cerr << "missing prerequisite: " << e.what() << '\n';
    return 3;
  } catch (const InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

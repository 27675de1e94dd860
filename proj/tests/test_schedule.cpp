#include "support.hpp"

#include <filesystem>
#include <fstream>
#include <numeric>

using namespace igi;
using igi::test::max_abs_diff;
namespace fs = std::filesystem;

namespace {

// Small enough for several stages inside one test.
Config tiny_config() {
  Config c;
  c.training.train_identities = 2;
  c.training.sequence_length = 6;
  c.training.batch = 2;
  c.training.s3_batch = 1;
  c.training.s1_steps = 3;
  c.training.s2_steps = 3;
  c.training.s3_steps = 3;
  c.recurrent.rendered_frames = 2;
  return c;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

bool block_equal(const Checkpoint& a, const Checkpoint& b, const std::string& block) {
  const std::string prefix = block + "/";
  int n = 0;
  for (const auto& [name, t] : a.tensors) {
    if (name.rfind(prefix, 0) != 0) continue;
    ++n;
    if (!b.has(name) || !torch::equal(t, b.get(name))) return false;
  }
  return n > 0;
}

double block_mean(const std::vector<double>& s, std::size_t begin, std::size_t end) {
  return std::accumulate(s.begin() + static_cast<std::ptrdiff_t>(begin), s.begin() + static_cast<std::ptrdiff_t>(end),
                         0.0) /
         static_cast<double>(end - begin);
}

}  // namespace

TEST_CASE("stage names round-trip") {
  for (Stage s : {Stage::Prior, Stage::S1, Stage::S2, Stage::S3}) CHECK(parse_stage(stage_name(s)) == s);
  CHECK_THROWS_AS(parse_stage("s4"), InvalidArgument);
  CHECK(checkpoint_path("/tmp/x", Stage::S2) == "/tmp/x/s2.ckpt");
}

TEST_CASE("loss log keeps series and writes tab-separated lines") {
  const fs::path dir = fresh_dir("igi_test_losslog");
  fs::create_directories(dir);
  const std::string path = (dir / "log.tsv").string();
  LossLog log(path);
  LossReport r;
  r.add("l1", torch::tensor(0.5, torch::kFloat64), 1.0);
  r.add("lpips", torch::tensor(0.25, torch::kFloat64), 2.0);
  log.append(0, "s1", r);
  log.append(1, "s1", "total", 0.75);
  CHECK(log.series("s1", "total") == std::vector<double>{1.0, 0.75});
  CHECK(log.series("s1", "lpips") == std::vector<double>{0.25});
  CHECK(log.series("s2", "total").empty());
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  REQUIRE(lines.size() == 4);
  CHECK(lines[0] == "0\ts1\tl1\t0.5");
  CHECK(lines[2] == "0\ts1\ttotal\t1");
  CHECK(lines[3] == "1\ts1\ttotal\t0.75");
}

TEST_CASE("synthetic identities: deterministic ground truth from the frozen generator") {
  World& world = igi::test::shared_world();
  const SyntheticSample a = sample_synthetic_identity(world, 55, 3);
  const SyntheticSample b = sample_synthetic_identity(world, 55, 3);
  const SyntheticSample c = sample_synthetic_identity(world, 56, 3);
  REQUIRE(a.frames.size() == 3);
  CHECK(torch::equal(a.w.wplus, b.w.wplus));
  CHECK_FALSE(torch::equal(a.w.wplus, c.w.wplus));
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(torch::equal(a.frames[i].image, b.frames[i].image));
    CHECK(a.frames[i].image.sizes() == torch::IntArrayRef({3, 32, 32}));
    CHECK(a.frames[i].raw.size(0) == world.config.generator.raw_channels);
    CHECK(a.frames[i].image.min().item<double>() >= 0.0);
    CHECK(a.frames[i].image.max().item<double>() <= 1.0);
  }
  torch::NoGradGuard no_grad;
  const NeuralTexture tex = world.generator->g_tex(a.w);
  for (std::size_t s = 0; s < tex.scales.size(); ++s) CHECK(torch::equal(tex.scales[s], a.tex.scales[s]));
  CHECK(torch::equal(world.generator->g_static(a.w).planes, a.tri.planes));
  const SyntheticFrame& f = a.frames[1];
  const RenderOutput r = world.generator->synthesize(a.w, {&f.geometry}, {f.camera});
  CHECK(max_abs_diff(r.rgb[0], f.image) < 1e-5);
  CHECK(max_abs_diff(r.raw[0], f.raw) < 1e-5);
  // Shape is constant along a trajectory.
  CHECK(a.frames[0].params.shape == a.frames[2].params.shape);
}

TEST_CASE("even source indices") {
  CHECK(even_sources(1, 24) == std::vector<int>{0});
  CHECK(even_sources(4, 24) == std::vector<int>{0, 6, 12, 18});
  CHECK(even_sources(24, 24).back() == 23);
  const auto s = even_sources(32, 32);
  CHECK(s.size() == 32);
  CHECK(std::adjacent_find(s.begin(), s.end(), std::greater_equal<int>()) == s.end());
}

TEST_CASE("prior step reports its terms and updates the generator") {
  Config c;
  c.training.batch = 2;
  TrainingContext ctx = make_context(c);
  std::mt19937_64 rng(4);
  const PriorBatch batch = sample_prior_batch(ctx.world, rng, 2);
  CHECK(batch.real.sizes() == torch::IntArrayRef({2, 3, 32, 32}));
  CHECK(batch.landmarks.sizes() == torch::IntArrayRef({2, 1, 32, 32}));
  CHECK(prior_disc_input(batch.real, batch.landmarks, c.training, 0, 10).size(1) == 4);
  CHECK(torch::equal(prior_disc_input(batch.real, batch.landmarks, c.training, 9, 10).narrow(1, 0, 3), batch.real));

  Generator& g = ctx.world.generator;
  set_trainable(*g, true);
  const torch::Tensor before = g->mapping->parameters().front().detach().clone();
  torch::optim::Adam g_opt(g->parameters(), torch::optim::AdamOptions(1e-3).betas({0.0, 0.99}));
  torch::optim::Adam d_opt(ctx.prior_disc->parameters(), torch::optim::AdamOptions(1e-3).betas({0.0, 0.99}));
  const LossReport r = gan_prior_step(g, *ctx.prior_disc, g_opt, d_opt, batch, c.training, 0, 10, 3);
  CHECK(r.terms.at("adv_g").weight == 1.0);
  CHECK(r.terms.at("density_reg").weight == c.training.density_reg_weight);
  CHECK(r.terms.at("adv_d").weight == 0.0);
  CHECK(r.terms.at("r1").weight == 0.0);
  CHECK(r.total_value() == doctest::Approx(r.term("adv_g") + 0.25 * r.term("density_reg")).epsilon(1e-6));
  CHECK_FALSE(torch::equal(before, g->mapping->parameters().front()));
}

TEST_CASE("stages need their predecessors' checkpoints") {
  const fs::path dir = fresh_dir("igi_test_prereq");
  const Config c = tiny_config();
  CHECK_THROWS_AS(run_stage(c, Stage::S2, dir.string()), MissingPrerequisite);
  CHECK_THROWS_AS(run_stage(c, Stage::S3, dir.string()), MissingPrerequisite);
}

TEST_CASE("each stage only changes its own trainable set") {
  const fs::path dir = fresh_dir("igi_test_freeze");
  const Config c = tiny_config();
  TrainingContext fresh = make_context(c);
  const Checkpoint c0 = make_checkpoint(fresh, Stage::S1);
  const Checkpoint c1 = Checkpoint::load(run_stage(c, Stage::S1, dir.string()));
  const Checkpoint c2 = Checkpoint::load(run_stage(c, Stage::S2, dir.string()));
  const Checkpoint c3 = Checkpoint::load(run_stage(c, Stage::S3, dir.string()));
  CHECK(c3.meta.at("stage") == "s3");

  const std::vector<std::string> refiners{"e_tex.full",        "e_tri.full",         "e_tex.wo_nt_enc",
                                          "e_tri.wo_nt_enc",   "e_tex.etri_offsets", "e_tri.etri_offsets"};
  const std::vector<std::string> sequence{"tex_rec", "tri_rec", "tex_fusion", "tri_fusion"};

  {  // s1 trains the latent encoder only
    CHECK_FALSE(block_equal(c0, c1, "e_latent"));
    CHECK(block_equal(c0, c1, "generator"));
    for (const auto& b : refiners) CHECK(block_equal(c0, c1, b));
    for (const auto& b : sequence) CHECK(block_equal(c0, c1, b));
  }
  {  // s2 trains the one-shot refiners only
    CHECK(block_equal(c1, c2, "e_latent"));
    CHECK(block_equal(c1, c2, "generator"));
    for (const auto& b : refiners) CHECK_FALSE(block_equal(c1, c2, b));
  }
  {  // s3 leaves every backbone bit-identical
    CHECK(block_equal(c2, c3, "e_latent"));
    CHECK(block_equal(c2, c3, "generator"));
    CHECK(block_equal(c2, c3, "proxy"));
    for (const auto& b : refiners) CHECK(block_equal(c2, c3, b));
    for (const auto& b : sequence) CHECK_FALSE(block_equal(c2, c3, b));
  }
  {  // loss curves are appended for every stage
    std::ifstream in(dir / "loss_log.tsv");
    std::set<std::string> stages;
    for (std::string line; std::getline(in, line);) {
      const auto a = line.find('\t'), b = line.find('\t', a + 1);
      stages.insert(line.substr(a + 1, b - a - 1));
    }
    for (const char* s : {"s1", "s2.full", "s2.wo_nt_enc", "s2.etri_offsets", "s3.recurrent", "s3.fusion"})
      CHECK(stages.count(s) == 1);
  }
  {  // checkpoint restore reproduces the trained models
    TrainingContext other = make_context(c);
    load_checkpoint(other, c3);
    const Checkpoint again = make_checkpoint(other, Stage::S3);
    for (const auto& [name, t] : c3.tensors) CHECK(torch::equal(t, again.get(name)));
    const TrainedSystem sys = load_system((dir / "s3.ckpt").string());
    CHECK(sys.config.hash() == c.hash());
    for (const auto& [name, m] : sys.models.named_modules()) CHECK_FALSE(m->is_training());
  }
}

TEST_CASE("smoke run: 200 refiner steps on 4 identities decrease the smoothed loss") {
  // Reconstruction phase only: the adversarial term of the fine-tuning phase is a minimax objective
  // and is not expected to decrease.
  Config c;
  c.training.train_identities = 4;
  c.training.adv_start_fraction = 1.0;
  TrainingContext ctx = make_context(c);
  train_refiners(ctx, Variant::Full, 200);
  const std::vector<double> total = ctx.log.series("s2.full", "total");
  REQUIRE(total.size() == 200);
  std::vector<double> blocks;
  for (std::size_t b = 0; b < 4; ++b) blocks.push_back(block_mean(total, 50 * b, 50 * (b + 1)));
  for (std::size_t b = 1; b < blocks.size(); ++b) CHECK(blocks[b] < blocks[b - 1]);
  CHECK(block_mean(total, 180, 200) < 0.7 * block_mean(total, 0, 20));
}

#include "igi/schedule.hpp"

#include "igi/common.hpp"
#include "igi/layers.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace igi {

namespace F = torch::nn::functional;

const char* stage_name(Stage stage) {
  switch (stage) {
    case Stage::Prior: return "prior";
    case Stage::S1: return "s1";
    case Stage::S2: return "s2";
    case Stage::S3: return "s3";
  }
  return "unknown";
}

Stage parse_stage(const std::string& name) {
  for (Stage s : {Stage::Prior, Stage::S1, Stage::S2, Stage::S3})
    if (name == stage_name(s)) return s;
  throw InvalidArgument("unknown stage: " + name);
}

LossLog::LossLog(std::string path) : path_(std::move(path)) {}

void LossLog::append(int step, const std::string& stage, const std::string& term, double value) {
  entries_.push_back({step, stage, term, value});
  if (path_.empty()) return;
  std::ofstream out(path_, std::ios::app);
  out << step << '\t' << stage << '\t' << term << '\t' << value << '\n';
}

void LossLog::append(int step, const std::string& stage, const LossReport& report) {
  for (const auto& [name, term] : report.terms) append(step, stage, name, term.value.item<double>());
  append(step, stage, "total", report.total_value());
}

std::vector<double> LossLog::series(const std::string& stage, const std::string& term) const {
  std::vector<double> out;
  for (const auto& e : entries_)
    if (e.stage == stage && e.term == term) out.push_back(e.value);
  return out;
}

World make_training_world(const Config& config) {
  World world = make_world(config);
  if (!config.world.prior_checkpoint.empty()) {
    const Checkpoint prior = Checkpoint::load(config.world.prior_checkpoint);
    prior.load_module("generator", *world.generator);
  }
  return world;
}

TrainingContext make_context(const Config& config, const std::string& log_path) {
  World world = make_training_world(config);
  InversionModels models = make_models(world);
  TrainingContext ctx(config, std::move(world), std::move(models));
  const int res = config.camera.resolution;
  SeedScope seed(config.seed + 202);
  ctx.proxy = ProxyNetwork(config.training.proxy_seed);
  ctx.latent_disc = LatentDiscriminator(config.generator.w_dim);
  for (auto& d : ctx.dual_disc) d = ImageDiscriminator(6, res);
  ctx.rec_disc = ImageDiscriminator(6, res);
  ctx.fusion_disc = ImageDiscriminator(6, res);
  ctx.prior_disc = ImageDiscriminator(4, res);
  ctx.log = LossLog(log_path);
  ctx.rng.seed(config.seed * 1000003 + 17);
  return ctx;
}

void ensure_training_data(TrainingContext& ctx) {
  if (!ctx.data.identities.empty()) return;
  const TrainingConfig& t = ctx.config.training;
  ctx.data = make_dataset(ctx.world, t.data_seed, t.train_identities, t.sequence_length);
}

void ensure_coarse_cache(TrainingContext& ctx) {
  ensure_training_data(ctx);
  if (ctx.coarse_cached) return;
  ctx.models.latent->eval();
  cache_coarse_renders(ctx.world, *ctx.models.latent, ctx.data);
  ctx.coarse_cached = true;
}

namespace {

int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

torch::Tensor frame_tex_input(const SyntheticFrame& f, TexInput kind) {
  const torch::Tensor res = residual(f.image, f.coarse);
  if (kind == TexInput::Posed) return image_inputs(f.image, res);
  return tex_inputs({f.projector.apply(f.image), f.projector.visibility}, {f.projector.apply(res), f.projector.visibility});
}

torch::Tensor frame_tri_input(const SyntheticFrame& f) { return image_inputs(f.image, residual(f.image, f.coarse)); }

CoarseFeatures identity_coarse(TrainingContext& ctx, const SyntheticSample& s) {
  torch::NoGradGuard no_grad;
  return coarse_features(ctx.world, s.coarse_latent);
}

CoarseFeatures stack_coarse(const std::vector<CoarseFeatures>& items) {
  CoarseFeatures out;
  std::vector<torch::Tensor> w, p;
  for (const auto& c : items) {
    w.push_back(c.latent.wplus);
    p.push_back(c.static_planes.planes);
  }
  out.latent.wplus = torch::cat(w, 0);
  out.static_planes.planes = torch::cat(p, 0);
  for (std::size_t s = 0; s < items.front().texture.scales.size(); ++s) {
    std::vector<torch::Tensor> t;
    for (const auto& c : items) t.push_back(c.texture.scales[s]);
    out.texture.scales.push_back(torch::cat(t, 0));
  }
  return out;
}

struct Targets {
  std::vector<const FrameGeometry*> geometry;
  std::vector<Camera> cameras;
  torch::Tensor image;
  torch::Tensor raw;
  NeuralTexture tex;
  torch::Tensor tri;
};

// Targets for samples[i] at frames[i][k], laid out sample-major.
Targets gather_targets(const std::vector<const SyntheticSample*>& samples, const std::vector<std::vector<int>>& frames) {
  Targets t;
  std::vector<torch::Tensor> images, raws, tris;
  std::vector<std::vector<torch::Tensor>> tex;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (int f : frames[i]) {
      const SyntheticFrame& fr = samples[i]->frames[static_cast<std::size_t>(f)];
      t.geometry.push_back(&fr.geometry);
      t.cameras.push_back(fr.camera);
      images.push_back(fr.image);
      raws.push_back(fr.raw);
      tris.push_back(samples[i]->tri.planes);
      tex.resize(samples[i]->tex.scales.size());
      for (std::size_t s = 0; s < tex.size(); ++s) tex[s].push_back(samples[i]->tex.scales[s]);
    }
  }
  t.image = torch::stack(images);
  t.raw = torch::stack(raws);
  t.tri = torch::cat(tris, 0);
  for (auto& s : tex) t.tex.scales.push_back(torch::cat(s, 0));
  return t;
}

struct Rendered {
  RenderOutput render;
  PredictionBundle bundle;
};

// Render the refined avatars of a batch, each at `repeats` target frames.
Rendered render_refined(TrainingContext& ctx, const CoarseFeatures& coarse, const TexOffsets& offsets,
                        const TriRefinement& tri, int64_t repeats, const Targets& targets) {
  const Avatar avatar = refine_avatar(coarse, offsets, tri);
  const TriPlane statics = avatar.statics(ctx.world.generator);
  const LatentCode w{avatar.latent.wplus.repeat_interleave(repeats, 0)};
  NeuralTexture tex;
  for (const auto& s : avatar.texture.scales) tex.scales.push_back(s.repeat_interleave(repeats, 0));
  const TriPlane planes{statics.planes.repeat_interleave(repeats, 0)};
  Rendered r;
  r.render = ctx.world.generator->render_features(w, tex, planes, targets.geometry, targets.cameras);
  r.bundle = {r.render.rgb, tex, planes.planes, r.render.raw};
  return r;
}

PredictionBundle target_bundle(const Targets& t) { return {t.image, t.tex, t.tri, t.raw}; }

torch::optim::Adam adam(const std::vector<torch::Tensor>& params, double lr) {
  return torch::optim::Adam(params, torch::optim::AdamOptions(lr));
}

// Adversarial players use the StyleGAN momentum setting.
torch::optim::Adam adam_gan(const std::vector<torch::Tensor>& params, double lr) {
  return torch::optim::Adam(params, torch::optim::AdamOptions(lr).betas({0.0, 0.99}));
}

// One discriminator update on (real, fake) dual pairs with an R1 penalty at the reals.
void dual_disc_step(ImageDiscriminatorImpl& disc, torch::optim::Optimizer& opt, const torch::Tensor& real_pair,
                    const torch::Tensor& fake_pair, double gamma, LossLog& log, int step, const std::string& stage) {
  set_trainable(disc, true);
  opt.zero_grad();
  const torch::Tensor fake = fake_pair.detach();
  const torch::Tensor d_loss =
      0.5 * (F::softplus(-disc.forward(real_pair)).mean() + F::softplus(disc.forward(fake)).mean());
  const torch::Tensor r1 = r1_penalty([&](const torch::Tensor& x) { return disc.forward(x); }, real_pair, gamma);
  (d_loss + r1).backward();
  opt.step();
  set_trainable(disc, false);
  log.append(step, stage, "adv_d", d_loss.item<double>());
  log.append(step, stage, "r1", r1.item<double>());
}

bool adversarial_phase(const TrainingConfig& t, int step, int steps) {
  return t.lambda_adv > 0.0 && step >= static_cast<int>(t.adv_start_fraction * steps);
}

void progress(const std::string& stage, int step, int steps, double total) {
  if (steps >= 10 && (step + 1) % std::max(1, steps / 10) != 0) return;
  std::cerr << "[" << stage << "] step " << step + 1 << "/" << steps << " total " << total << '\n';
}

}  // namespace

PriorBatch sample_prior_batch(const World& world, std::mt19937_64& rng, int batch) {
  PriorBatch b;
  const int res = world.config.camera.resolution;
  std::vector<torch::Tensor> images, maps;
  for (int i = 0; i < batch; ++i) {
    const auto specs = sample_trajectory(rng, world.face, world.config.camera, 1);
    const FrameSpec& spec = specs.front();
    const Camera cam = world.camera(spec.yaw, spec.pitch);
    const torch::Tensor albedo = procedural_albedo(rng, world.face, 64);
    images.push_back(procedural_image(world.face, spec.params, cam, albedo));
    maps.push_back(landmark_map(world.face.landmarks2d(spec.params, cam), res, res));
    b.geometry.push_back(world.geometry(spec.params));
    b.cameras.push_back(cam);
  }
  b.real = torch::stack(images);
  b.landmarks = torch::stack(maps);
  return b;
}

torch::Tensor prior_disc_input(const torch::Tensor& images, const torch::Tensor& landmarks,
                               const TrainingConfig& config, int step, int total_steps) {
  torch::Tensor x = images;
  const int res = static_cast<int>(images.size(-1));
  if (step < total_steps / 2 && config.prior_resolution_start < res) {
    const int factor = res / config.prior_resolution_start;
    x = F::interpolate(F::avg_pool2d(x, F::AvgPool2dFuncOptions(factor)),
                       F::InterpolateFuncOptions().scale_factor(std::vector<double>{double(factor), double(factor)})
                           .mode(torch::kNearest));
  }
  const double fade = std::max(1.0, config.blur_fraction * total_steps);
  const double sigma = config.blur_sigma * std::max(0.0, 1.0 - step / fade);
  x = gaussian_blur(x, sigma);
  return torch::cat({x, landmarks}, 1);
}

LossReport gan_prior_step(Generator& generator, ImageDiscriminatorImpl& disc, torch::optim::Optimizer& g_opt,
                          torch::optim::Optimizer& d_opt, const PriorBatch& batch, const TrainingConfig& config,
                          int step, int total_steps, std::uint64_t seed) {
  const auto n = static_cast<int64_t>(batch.cameras.size());
  std::vector<const FrameGeometry*> geoms;
  for (const auto& g : batch.geometry) geoms.push_back(&g);
  auto disc_fn = [&](const torch::Tensor& images) {
    return disc.forward(prior_disc_input(images, batch.landmarks, config, step, total_steps));
  };

  auto gen = at::detail::createCPUGenerator(seed);
  const torch::Tensor z = torch::randn({n, generator->config().w_dim}, gen);
  const LatentCode w = generator->broadcast(generator->map(z));
  const NeuralTexture tex = generator->g_tex(w);
  const TriPlane statics = generator->g_static(w);
  const FaceFeatures face = generator->g_face(rasterize_scales(tex, geoms), w);
  const TriPlane planes = generator->compose(face, statics);
  const RenderOutput fake = generator->render(planes, batch.cameras);

  set_trainable(disc, true);
  d_opt.zero_grad();
  const torch::Tensor d_loss =
      0.5 * (F::softplus(-disc_fn(batch.real)).mean() + F::softplus(disc_fn(fake.rgb.detach())).mean());
  const torch::Tensor r1 = r1_penalty(disc_fn, batch.real, config.r1_gamma);
  (d_loss + r1).backward();
  d_opt.step();
  set_trainable(disc, false);

  g_opt.zero_grad();
  LossReport report;
  report.add("adv_g", F::softplus(-disc_fn(fake.rgb)).mean(), 1.0);
  torch::Generator reg_gen = at::detail::createCPUGenerator(seed ^ 0x9e3779b97f4a7c15ULL);
  report.add("density_reg",
             density_regularization(planes, generator->field_decoder(), generator->config().box_half_extent, 256,
                                    config.density_reg_std, reg_gen),
             config.density_reg_weight);
  report.total.backward();
  g_opt.step();
  report.add("adv_d", d_loss.detach(), 0.0);
  report.add("r1", r1.detach(), 0.0);
  return report;
}

void train_prior(TrainingContext& ctx, int steps) {
  const TrainingConfig& t = ctx.config.training;
  Generator& g = ctx.world.generator;
  set_trainable(*g, true);
  g->train();
  auto g_opt = adam_gan(g->parameters(), t.lr_generator);
  auto d_opt = adam_gan(ctx.prior_disc->parameters(), t.lr_discriminator);
  std::mt19937_64 rng(ctx.config.seed * 31 + 5);
  for (int step = 0; step < steps; ++step) {
    const PriorBatch batch = sample_prior_batch(ctx.world, rng, t.batch);
    const LossReport r = gan_prior_step(g, *ctx.prior_disc, g_opt, d_opt, batch, t, step, steps,
                                        ctx.config.seed * 7 + static_cast<std::uint64_t>(step));
    ctx.log.append(step, "prior", r);
    progress("prior", step, steps, r.total_value());
  }
  set_trainable(*g, false);
  g->eval();
}

void train_latent(TrainingContext& ctx, int steps) {
  ensure_training_data(ctx);
  const TrainingConfig& t = ctx.config.training;
  ELatent& enc = ctx.models.latent;
  enc->train();
  set_trainable(*enc, true);
  auto e_opt = adam(enc->parameters(), t.lr_encoder);
  auto d_opt = adam_gan(ctx.latent_disc->parameters(), t.lr_latent_discriminator);
  const int n_frames = static_cast<int>(ctx.data.identities.front().frames.size());
  for (int step = 0; step < steps; ++step) {
    std::vector<const SyntheticFrame*> frames;
    std::vector<const FrameGeometry*> geoms;
    std::vector<Camera> cams;
    std::vector<torch::Tensor> images;
    for (int b = 0; b < t.batch; ++b) {
      const auto& id = ctx.data.identities[static_cast<std::size_t>(uniform_int(ctx.rng, 0, ctx.data.size() - 1))];
      const auto& f = id.frames[static_cast<std::size_t>(uniform_int(ctx.rng, 0, n_frames - 1))];
      geoms.push_back(&f.geometry);
      cams.push_back(f.camera);
      images.push_back(f.image);
    }
    const torch::Tensor target = torch::stack(images);
    const torch::Tensor real_w =
        ctx.world.generator->sample_latent(t.batch, ctx.config.seed * 977 + static_cast<std::uint64_t>(step))
            .wplus.select(1, 0);
    const LatentCode fake = enc->forward(target);

    set_trainable(*ctx.latent_disc, true);
    d_opt.zero_grad();
    latent_adv(*ctx.latent_disc, real_w, fake.wplus.detach()).d_loss.backward();
    d_opt.step();
    set_trainable(*ctx.latent_disc, false);

    e_opt.zero_grad();
    const RenderOutput pred = ctx.world.generator->synthesize(fake, geoms, cams);
    const LossReport r = loss_stage1(pred.rgb, target, fake.wplus, real_w, *ctx.latent_disc, *ctx.proxy, t);
    r.total.backward();
    e_opt.step();
    ctx.log.append(step, "s1", r);
    progress("s1", step, steps, r.total_value());
  }
  set_trainable(*ctx.latent_disc, true);
  set_trainable(*enc, false);
  enc->eval();
  ctx.coarse_cached = false;
}

void train_refiners(TrainingContext& ctx, Variant variant, int steps) {
  ensure_coarse_cache(ctx);
  const TrainingConfig& t = ctx.config.training;
  Refiners& r = ctx.models.variant(variant);
  const std::string stage = std::string("s2.") + variant_name(variant);
  r.tex->train();
  r.tri->train();
  set_trainable(*r.tex, true);
  set_trainable(*r.tri, true);
  std::vector<torch::Tensor> params = r.tex->parameters();
  for (const auto& p : r.tri->parameters()) params.push_back(p);
  auto e_opt = adam(params, t.lr_encoder);
  ImageDiscriminatorImpl& disc = *ctx.dual_disc[static_cast<int>(variant)];
  set_trainable(disc, false);
  auto d_opt = adam_gan(disc.parameters(), t.lr_discriminator);
  const int n_frames = static_cast<int>(ctx.data.identities.front().frames.size());

  for (int step = 0; step < steps; ++step) {
    std::vector<const SyntheticSample*> samples;
    std::vector<std::vector<int>> targets_idx;
    std::vector<CoarseFeatures> coarse;
    std::vector<torch::Tensor> tex_in, tri_in;
    for (int b = 0; b < t.batch; ++b) {
      const auto& id = ctx.data.identities[static_cast<std::size_t>(uniform_int(ctx.rng, 0, ctx.data.size() - 1))];
      const int src = uniform_int(ctx.rng, 0, n_frames - 1);
      const int tgt = uniform_int(ctx.rng, 0, 3) == 0 ? src : uniform_int(ctx.rng, 0, n_frames - 1);
      samples.push_back(&id);
      targets_idx.push_back({tgt});
      coarse.push_back(identity_coarse(ctx, id));
      const SyntheticFrame& f = id.frames[static_cast<std::size_t>(src)];
      tex_in.push_back(frame_tex_input(f, r.tex->input()));
      tri_in.push_back(frame_tri_input(f));
    }
    const Targets targets = gather_targets(samples, targets_idx);
    const TexOffsets offsets = r.tex->forward(torch::stack(tex_in));
    const TriRefinement tri = r.tri->forward(torch::stack(tri_in));
    const Rendered pred = render_refined(ctx, stack_coarse(coarse), offsets, tri, 1, targets);

    const bool adv = adversarial_phase(t, step, steps);
    const torch::Tensor fake_pair = dual_pair(pred.render);
    if (adv)
      dual_disc_step(disc, d_opt, torch::cat({targets.image, targets.image}, 1), fake_pair, t.r1_gamma, ctx.log, step,
                     stage);
    e_opt.zero_grad();
    const LossReport rep =
        loss_stage2(pred.bundle, target_bundle(targets), *ctx.proxy, t, adv ? &disc : nullptr, fake_pair);
    rep.total.backward();
    e_opt.step();
    ctx.log.append(step, stage, rep);
    progress(stage, step, steps, rep.total_value());
  }
  set_trainable(*r.tex, false);
  set_trainable(*r.tri, false);
  r.tex->eval();
  r.tri->eval();
}

namespace {

// Frame-wise backbone activations of a batch of sequences that share their length. Returns
// frames[t][scale] with batch = number of sequences.
std::pair<std::vector<std::vector<torch::Tensor>>, std::vector<std::vector<torch::Tensor>>> sequence_features(
    TrainingContext& ctx, const std::vector<const SyntheticSample*>& samples,
    const std::vector<std::vector<int>>& sources) {
  torch::NoGradGuard no_grad;
  Refiners& full = ctx.models.full();
  const std::size_t n = sources.front().size();
  const auto b = static_cast<int64_t>(samples.size());
  std::vector<torch::Tensor> tex_in, tri_in;
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const SyntheticFrame& f = samples[i]->frames[static_cast<std::size_t>(sources[i][k])];
      tex_in.push_back(frame_tex_input(f, TexInput::UV));
      tri_in.push_back(frame_tri_input(f));
    }
  }
  const UNetFeatures tex = full.tex->unet->forward(torch::stack(tex_in));
  const UNetFeatures tri = full.tri->unet->forward(torch::stack(tri_in));
  std::vector<std::vector<torch::Tensor>> tex_frames(n), tri_frames(n);
  for (std::size_t k = 0; k < n; ++k) {
    for (const auto& p : tex.pre) tex_frames[k].push_back(p.narrow(0, static_cast<int64_t>(k) * b, b));
    for (const auto& p : tri.pre) tri_frames[k].push_back(p.narrow(0, static_cast<int64_t>(k) * b, b));
  }
  return {tex_frames, tri_frames};
}

std::vector<int> sorted_sample(std::mt19937_64& rng, int lo, int hi, int count) {
  std::vector<int> pool;
  for (int i = lo; i < hi; ++i) pool.push_back(i);
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(static_cast<std::size_t>(std::min<int>(count, static_cast<int>(pool.size()))));
  std::sort(pool.begin(), pool.end());
  return pool;
}

// Shared driver for the sequence stages: sample sequences, aggregate with `aggregate`, render
// rendered_frames random targets per sequence and step.
template <typename Aggregate>
void train_sequences(TrainingContext& ctx, int steps, const std::string& stage, std::vector<torch::Tensor> params,
                     ImageDiscriminatorImpl& disc, const std::function<int()>& length, Aggregate aggregate) {
  ensure_coarse_cache(ctx);
  const TrainingConfig& t = ctx.config.training;
  const RecurrentConfig& rc = ctx.config.recurrent;
  auto e_opt = adam(params, t.lr_encoder);
  set_trainable(disc, false);
  auto d_opt = adam_gan(disc.parameters(), t.lr_discriminator);
  const int n_frames = static_cast<int>(ctx.data.identities.front().frames.size());
  const int span = std::min(rc.max_sequence, n_frames);

  for (int step = 0; step < steps; ++step) {
    const int n = length();
    std::vector<const SyntheticSample*> samples;
    std::vector<std::vector<int>> sources, targets_idx;
    std::vector<CoarseFeatures> coarse;
    for (int b = 0; b < t.s3_batch; ++b) {
      const auto& id = ctx.data.identities[static_cast<std::size_t>(uniform_int(ctx.rng, 0, ctx.data.size() - 1))];
      samples.push_back(&id);
      std::vector<int> src{0};
      for (int f : sorted_sample(ctx.rng, 1, span, n - 1)) src.push_back(f);
      sources.push_back(src);
      std::vector<int> tgt;
      for (int k = 0; k < rc.rendered_frames; ++k) tgt.push_back(uniform_int(ctx.rng, 0, n_frames - 1));
      targets_idx.push_back(tgt);
      coarse.push_back(identity_coarse(ctx, id));
    }
    const auto [tex_frames, tri_frames] = sequence_features(ctx, samples, sources);
    const Targets targets = gather_targets(samples, targets_idx);
    const auto [tex_raw, tri_raw] = aggregate(tex_frames, tri_frames, step);
    const TexOffsets offsets = tex_offsets_from_heads(tex_raw);
    const TriRefinement tri = tri_refinement_from_heads(tri_raw, TriOutput::SFT, ctx.config.generator);
    const Rendered pred = render_refined(ctx, stack_coarse(coarse), offsets, tri, rc.rendered_frames, targets);

    const bool adv = adversarial_phase(t, step, steps);
    const torch::Tensor fake_pair = dual_pair(pred.render);
    if (adv)
      dual_disc_step(disc, d_opt, torch::cat({targets.image, targets.image}, 1), fake_pair, t.r1_gamma, ctx.log, step,
                     stage);
    e_opt.zero_grad();
    const LossReport rep =
        loss_stage2(pred.bundle, target_bundle(targets), *ctx.proxy, t, adv ? &disc : nullptr, fake_pair);
    rep.total.backward();
    e_opt.step();
    ctx.log.append(step, stage, rep);
    progress(stage, step, steps, rep.total_value());
  }
}

}  // namespace

void train_recurrent(TrainingContext& ctx, int steps) {
  const RecurrentConfig& rc = ctx.config.recurrent;
  RecurrentDecoder& tex_rec = ctx.models.tex_rec;
  RecurrentDecoder& tri_rec = ctx.models.tri_rec;
  set_trainable(*tex_rec, true);
  set_trainable(*tri_rec, true);
  tex_rec->train();
  tri_rec->train();
  std::vector<torch::Tensor> params = tex_rec->parameters();
  for (const auto& p : tri_rec->parameters()) params.push_back(p);
  const int n_frames = static_cast<int>(ctx.config.training.sequence_length);
  const int span = std::min(rc.max_sequence, n_frames);
  auto length = [&] { return uniform_int(ctx.rng, 1, span); };

  // The supervised fold sees at most rendered_frames inputs; the rest of the sequence only enters
  // through the warm-started initial state.
  auto aggregate = [&](const std::vector<std::vector<torch::Tensor>>& tex_frames,
                       const std::vector<std::vector<torch::Tensor>>& tri_frames, int step) {
    const int64_t b = tex_frames.front().front().size(0);
    const auto opts = tex_frames.front().front().options();
    const int cycles = (step % 2 == 0) ? 0 : rc.warm_start_cycles;
    const std::size_t n = tex_frames.size();
    const std::size_t k = std::min<std::size_t>(n, static_cast<std::size_t>(rc.rendered_frames));
    std::vector<std::size_t> pick;
    for (std::size_t i = 0; i < n; ++i) pick.push_back(i);
    if (cycles == 0) {
      pick.assign(pick.end() - static_cast<std::ptrdiff_t>(k), pick.end());
    } else {
      std::shuffle(pick.begin(), pick.end(), ctx.rng);
      pick.resize(k);
      std::sort(pick.begin(), pick.end());
    }
    std::vector<std::vector<torch::Tensor>> tex_sup, tri_sup;
    for (std::size_t i : pick) {
      tex_sup.push_back(tex_frames[i]);
      tri_sup.push_back(tri_frames[i]);
    }
    const auto h_tex = warm_start(*tex_rec, tex_frames, cycles, b, opts);
    const auto h_tri = warm_start(*tri_rec, tri_frames, cycles, b, opts);
    return std::make_pair(tex_rec->decode(tex_rec->fold(tex_sup, h_tex)), tri_rec->decode(tri_rec->fold(tri_sup, h_tri)));
  };
  train_sequences(ctx, steps, "s3.recurrent", params, *ctx.rec_disc, length, aggregate);
  set_trainable(*tex_rec, false);
  set_trainable(*tri_rec, false);
  tex_rec->eval();
  tri_rec->eval();
}

void train_fusion(TrainingContext& ctx, int steps) {
  ConvFusion& tex_f = ctx.models.tex_fusion;
  ConvFusion& tri_f = ctx.models.tri_fusion;
  set_trainable(*tex_f, true);
  set_trainable(*tri_f, true);
  tex_f->train();
  tri_f->train();
  std::vector<torch::Tensor> params = tex_f->parameters();
  for (const auto& p : tri_f->parameters()) params.push_back(p);
  const int window = ctx.config.recurrent.window;
  auto length = [window] { return window; };
  auto aggregate = [&](const std::vector<std::vector<torch::Tensor>>& tex_frames,
                       const std::vector<std::vector<torch::Tensor>>& tri_frames, int) {
    return std::make_pair(tex_f->forward(tex_frames), tri_f->forward(tri_frames));
  };
  train_sequences(ctx, steps, "s3.fusion", params, *ctx.fusion_disc, length, aggregate);
  set_trainable(*tex_f, false);
  set_trainable(*tri_f, false);
  tex_f->eval();
  tri_f->eval();
}

std::string checkpoint_path(const std::string& dir, Stage stage) {
  return (std::filesystem::path(dir) / (std::string(stage_name(stage)) + ".ckpt")).string();
}

Checkpoint make_checkpoint(const TrainingContext& ctx, Stage stage) {
  Checkpoint c;
  c.put_config(ctx.config);
  c.meta["stage"] = stage_name(stage);
  c.put_face_model(ctx.world.face);
  c.put_module("generator", *ctx.world.generator);
  c.put_module("proxy", *ctx.proxy);
  if (stage == Stage::Prior) return c;
  for (const auto& [name, m] : ctx.models.named_modules()) c.put_module(name, *m);
  return c;
}

void load_checkpoint(TrainingContext& ctx, const Checkpoint& checkpoint) {
  checkpoint.load_module("generator", *ctx.world.generator);
  for (auto& [name, m] : ctx.models.named_modules())
    if (checkpoint.has_module(name)) checkpoint.load_module(name, *m);
  ctx.coarse_cached = false;
}

std::string run_stage(const Config& config, Stage stage, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::string log_path = (std::filesystem::path(dir) / "loss_log.tsv").string();
  TrainingContext ctx = make_context(config, log_path);
  const TrainingConfig& t = config.training;
  auto prerequisite = [&](Stage need) {
    const std::string p = checkpoint_path(dir, need);
    if (!std::filesystem::exists(p))
      throw MissingPrerequisite(std::string("stage ") + stage_name(stage) + " needs " + p);
    load_checkpoint(ctx, Checkpoint::load(p));
  };
  switch (stage) {
    case Stage::Prior:
      train_prior(ctx, t.prior_steps);
      break;
    case Stage::S1:
      train_latent(ctx, t.s1_steps);
      break;
    case Stage::S2:
      prerequisite(Stage::S1);
      for (int v = 0; v < kNumVariants; ++v) train_refiners(ctx, static_cast<Variant>(v), t.s2_steps);
      break;
    case Stage::S3:
      prerequisite(Stage::S2);
      distill_recurrent(ctx.world, ctx.models, config.recurrent.update_gate_bias);
      train_recurrent(ctx, t.s3_steps);
      train_fusion(ctx, t.s3_steps);
      break;
  }
  const std::string out = checkpoint_path(dir, stage);
  make_checkpoint(ctx, stage).save(out);
  return out;
}

TrainedSystem load_system(const std::string& checkpoint_file) {
  const Checkpoint c = Checkpoint::load(checkpoint_file);
  Config config = c.config();
  config.world.prior_checkpoint.clear();
  World world = make_world(config);
  world.face = c.face_model();
  c.load_module("generator", *world.generator);
  InversionModels models = make_models(world);
  for (auto& [name, m] : models.named_modules())
    if (c.has_module(name)) c.load_module(name, *m);
  models.eval_mode();
  ProxyNetwork proxy(config.training.proxy_seed);
  c.load_module("proxy", *proxy);
  return {config, std::move(world), std::move(models), proxy};
}

}  // namespace igi

#include "support.hpp"

using namespace igi;
using igi::test::max_abs_diff;

namespace {

const auto f64 = torch::TensorOptions().dtype(torch::kFloat64);
const double kLn2 = std::log(2.0);

ProxyNetwork proxy64() {
  ProxyNetwork p(77);
  p->to(torch::kFloat64);
  return p;
}

void zero_params(torch::nn::Module& m) {
  torch::NoGradGuard no_grad;
  for (auto& p : m.parameters()) p.zero_();
}

double weighted_sum(const LossReport& r) {
  double s = 0.0;
  for (const auto& [name, term] : r.terms) s += term.weight * term.value.item<double>();
  return s;
}

PredictionBundle random_bundle(const Config& c, int64_t batch) {
  const GeneratorConfig& g = c.generator;
  PredictionBundle b;
  b.image = torch::rand({batch, 3, 16, 16}, f64);
  for (std::size_t s = 0; s < g.tex_resolutions.size(); ++s)
    b.tex.scales.push_back(torch::randn({batch, g.tex_channels[s], g.tex_resolutions[s], g.tex_resolutions[s]}, f64));
  b.tri = torch::randn({batch, 3, g.plane_channels, 8, 8}, f64);
  b.raw = torch::randn({batch, g.raw_channels, 16, 16}, f64);
  return b;
}

}  // namespace

TEST_CASE("stage weights match the configured defaults") {
  const TrainingConfig t;
  CHECK(t.lambda_lpips_s1 == 0.5);
  CHECK(t.lambda_id_s1 == 0.25);
  CHECK(t.lambda_lpips_s2 == 1.0);
  CHECK(t.lambda_tri == 0.001);
  CHECK(t.lambda_tex == 0.001);
  CHECK(t.lambda_raw == 1.0);
  CHECK(t.lambda_adv == 0.1);
  CHECK(t.lr_encoder == 1e-4);
  CHECK(t.lr_discriminator == 1e-3);
}

TEST_CASE("loss_stage1: zero image terms at identity, weights and totals") {
  const TrainingConfig t;
  ProxyNetwork proxy = proxy64();
  LatentDiscriminator disc(8);
  disc->to(torch::kFloat64);
  const torch::Tensor img = torch::rand({2, 3, 16, 16}, f64);
  const torch::Tensor fake = torch::randn({2, 8}, f64), real = torch::randn({2, 8}, f64);
  const LossReport same = loss_stage1(img, img, fake, real, *disc, *proxy, t);
  CHECK(same.term("l1") == 0.0);
  CHECK(same.term("lpips") == 0.0);
  CHECK(std::abs(same.term("id")) < 1e-12);
  CHECK(same.terms.at("lpips").weight == 0.5);
  CHECK(same.terms.at("id").weight == 0.25);
  CHECK(std::abs(same.total_value() - (same.term("adv_e") + same.term("adv_d"))) < 1e-9);

  const LossReport diff = loss_stage1(torch::rand({2, 3, 16, 16}, f64), img, fake, real, *disc, *proxy, t);
  CHECK(std::abs(diff.total_value() - weighted_sum(diff)) < 1e-9);
  for (const char* term : {"l1", "lpips", "id", "adv_d"}) CHECK(diff.term(term) >= 0.0);
  CHECK_THROWS_AS(loss_stage1(img, torch::rand({2, 3, 8, 8}, f64), fake, real, *disc, *proxy, t), InvalidArgument);
}

TEST_CASE("loss_stage1: hand-computed l1 with the perceptual terms switched off") {
  TrainingConfig t;
  t.lambda_lpips_s1 = 0.0;
  t.lambda_id_s1 = 0.0;
  ProxyNetwork proxy = proxy64();
  LatentDiscriminator disc(4);
  disc->to(torch::kFloat64);
  zero_params(*disc);
  // Two of four pixels differ by 0.5: mean absolute difference 0.25.
  torch::Tensor target = torch::zeros({1, 3, 4, 4}, f64);
  torch::Tensor pred = target.clone();
  pred.narrow(3, 0, 2).fill_(0.5);
  const LossReport r = loss_stage1(pred, target, torch::zeros({1, 4}, f64), torch::zeros({1, 4}, f64), *disc, *proxy, t);
  CHECK(r.term("l1") == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(r.total_value() == doctest::Approx(0.25 + 2.0 * kLn2).epsilon(1e-12));
}

TEST_CASE("latent adversarial losses") {
  LatentDiscriminator disc(8);
  disc->to(torch::kFloat64);
  zero_params(*disc);
  const AdversarialLosses zero = latent_adv(*disc, torch::randn({3, 8}, f64), torch::randn({3, 8}, f64));
  CHECK(zero.d_loss.item<double>() == doctest::Approx(kLn2).epsilon(1e-12));
  CHECK(zero.g_loss.item<double>() == doctest::Approx(kLn2).epsilon(1e-12));
  // W+ inputs are scored per layer.
  CHECK(disc->forward(torch::randn({3, 6, 8}, f64)).sizes() == torch::IntArrayRef({3}));

  const torch::Tensor real = torch::full({4}, 40.0, f64), fake = torch::full({4}, -40.0, f64);
  const AdversarialLosses perfect = nonsaturating(real, fake, fake);
  CHECK(perfect.d_loss.item<double>() < 1e-12);
  CHECK(perfect.g_loss.item<double>() == doctest::Approx(40.0).epsilon(1e-9));

  const torch::Tensor logits = torch::randn({5}, f64).requires_grad_(true);
  nonsaturating(torch::zeros({5}, f64), logits.detach(), logits).g_loss.backward();
  CHECK(logits.grad().max().item<double>() < 0.0);
  CHECK_THROWS_AS(latent_adv(*disc, torch::randn({3, 8}, f64), torch::randn({2, 8}, f64)), InvalidArgument);
}

TEST_CASE("dual discriminator: pose-free input, zero logits and symmetry") {
  ImageDiscriminator disc(6, 16);
  CHECK(disc->in_channels() == 6);
  CHECK(disc->conditioning_dims() == 0);
  disc->to(torch::kFloat64);
  zero_params(*disc);
  const torch::Tensor real = torch::rand({2, 6, 16, 16}, f64), fake = torch::rand({2, 6, 16, 16}, f64);
  const AdversarialLosses l = dual_disc_loss(*disc, real, fake);
  CHECK(l.d_loss.item<double>() == doctest::Approx(kLn2).epsilon(1e-12));
  CHECK(l.g_loss.item<double>() == doctest::Approx(kLn2).epsilon(1e-12));

  RenderOutput r;
  r.rgb = torch::rand({2, 3, 16, 16}, f64);
  const torch::Tensor pair = dual_pair(r);
  CHECK(pair.size(1) == 6);
  CHECK(torch::equal(pair.narrow(1, 0, 3), pair.narrow(1, 3, 3)));

  // One-parameter D(x) = theta * mean(x): with equal real and fake batches the D loss is stationary at 0.
  const torch::Tensor x = torch::rand({4, 6, 16, 16}, f64);
  auto d_loss = [&](double theta) {
    const torch::Tensor logits = theta * x.mean({1, 2, 3});
    return nonsaturating(logits, logits, logits).d_loss.item<double>();
  };
  const double eps = 1e-5;
  CHECK(std::abs((d_loss(eps) - d_loss(-eps)) / (2 * eps)) < 1e-8);
}

TEST_CASE("R1 penalty closed forms") {
  const torch::Tensor real = torch::randn({3, 2, 4, 4}, f64);
  CHECK(r1_penalty([](const torch::Tensor& x) { return torch::zeros({x.size(0)}, x.options()) + 1.5; }, real, 1.0)
            .item<double>() == 0.0);
  const torch::Tensor a = torch::randn({2, 4, 4}, f64);
  for (double gamma : {1.0, 0.3, 10.0}) {
    const torch::Tensor pen = r1_penalty([&](const torch::Tensor& x) { return (x * a).sum({1, 2, 3}); }, real, gamma);
    CHECK(pen.item<double>() == doctest::Approx(0.5 * gamma * a.pow(2).sum().item<double>()).epsilon(1e-6));
  }
}

TEST_CASE("density regularization vanishes for a constant field") {
  const TriPlane planes{torch::randn({2, 3, 4, 8, 8}, f64)};
  FieldDecoder constant = [](const torch::Tensor& f, const torch::Tensor&) {
    DecodedField d;
    d.sigma = torch::full({f.size(0), f.size(1)}, 2.0, f.options());
    d.color = torch::zeros({f.size(0), f.size(1), 3}, f.options());
    return d;
  };
  torch::Generator rng = at::detail::createCPUGenerator(3);
  CHECK(density_regularization(planes, constant, 0.65, 128, 0.004, rng).item<double>() == 0.0);
  FieldDecoder varying = [](const torch::Tensor& f, const torch::Tensor&) {
    DecodedField d;
    d.sigma = torch::softplus(f.select(-1, 0));
    d.color = torch::zeros({f.size(0), f.size(1), 3}, f.options());
    return d;
  };
  CHECK(density_regularization(planes, varying, 0.65, 128, 0.004, rng).item<double>() > 0.0);
}

TEST_CASE("loss_stage2: identical bundles, weights, hand case and totals") {
  const Config c;
  const TrainingConfig& t = c.training;
  ProxyNetwork proxy = proxy64();
  const PredictionBundle a = random_bundle(c, 2);
  const LossReport same = loss_stage2(a, a, *proxy, t);
  for (const char* term : {"l1", "lpips", "l_tri", "l_tex", "l_raw"}) CHECK(same.term(term) == 0.0);
  CHECK(same.terms.at("lpips").weight == 1.0);
  CHECK(same.terms.at("l_tri").weight == 0.001);
  CHECK(same.terms.at("l_tex").weight == 0.001);
  CHECK(same.terms.at("l_raw").weight == 1.0);
  CHECK_FALSE(same.has("adv_e"));

  PredictionBundle shifted = a;
  for (auto& s : shifted.tex.scales) s = s + 1.0;
  const LossReport hand = loss_stage2(shifted, a, *proxy, t);
  CHECK(hand.term("l_tex") == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(hand.total_value() == doctest::Approx(0.001).epsilon(1e-9));

  ImageDiscriminator disc(6, 16);
  disc->to(torch::kFloat64);
  const PredictionBundle b = random_bundle(c, 2);
  const LossReport full = loss_stage2(b, a, *proxy, t, disc.get());
  CHECK(full.terms.at("adv_e").weight == 0.1);
  CHECK(std::abs(full.total_value() - weighted_sum(full)) < 1e-9);
  for (const auto& [name, term] : full.terms) CHECK(term.value.item<double>() >= 0.0);

  PredictionBundle image_only{a.image, {}, {}, {}};
  const LossReport img = loss_stage2(b, image_only, *proxy, t);
  CHECK(img.terms.size() == 2);
  CHECK_THROWS_AS(loss_stage2(b, PredictionBundle{torch::rand({2, 3, 8, 8}, f64), {}, {}, {}}, *proxy, t),
                  InvalidArgument);
}

TEST_CASE("loss_stage2 gradient with respect to texture offsets matches finite differences") {
  Config cfg;
  World world = make_world(cfg);
  world.generator->to(torch::kFloat64);
  ProxyNetwork proxy = proxy64();
  const LatentCode w{world.generator->sample_latent(1, 21).wplus.to(torch::kFloat64)};
  std::mt19937_64 rng(22);
  const FrameGeometry g = world.geometry(igi::test::random_params(rng, world.face));
  const Camera cam = camera_from_pose(0.1, 0.05, cfg.camera.radius, Intrinsics::square(16, cfg.camera.focal_scale));
  NeuralTexture tex;
  TriPlane st;
  RenderOutput truth;
  {
    torch::NoGradGuard no_grad;
    tex = world.generator->g_tex(w);
    st = world.generator->g_static(w);
    NeuralTexture gt = tex;
    for (auto& s : gt.scales) s = s + 0.3 * torch::randn_like(s);
    truth = world.generator->render_features(w, gt, st, {&g}, {cam});
  }
  PredictionBundle target{truth.rgb, tex, st.planes, truth.raw};
  for (auto& s : target.tex.scales) s = s + 0.5;
  // Offsets at the coarsest scale; the other scales stay fixed.
  auto loss = [&](const torch::Tensor& off0) {
    NeuralTexture t = tex;
    t.scales[0] = t.scales[0] + off0;
    const RenderOutput r = world.generator->render_features(w, t, st, {&g}, {cam});
    return loss_stage2({r.rgb, t, st.planes, r.raw}, target, *proxy, cfg.training).total;
  };
  const torch::Tensor off = 0.05 * torch::randn_like(tex.scales[0]);
  std::vector<int64_t> coords;
  for (int64_t i = 3; i < off.numel(); i += 101) coords.push_back(i);
  CHECK(igi::test::fd_relative_error(loss, off, coords, 1e-6) < 1e-2);
}

TEST_CASE("proxy metrics are zero at identity and frozen") {
  ProxyNetwork proxy(77);
  const torch::Tensor img = torch::rand({2, 3, 32, 32});
  CHECK(lpips_proxy(*proxy, img, img).item<double>() == 0.0);
  CHECK(csim_proxy(*proxy, img, img).min().item<double>() == doctest::Approx(1.0).epsilon(1e-5));
  for (const auto& p : proxy->parameters()) CHECK_FALSE(p.requires_grad());
  ProxyNetwork again(77);
  const auto pa = proxy->parameters(), pb = again->parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(torch::equal(pa[i], pb[i]));
}

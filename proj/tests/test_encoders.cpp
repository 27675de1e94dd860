#include "support.hpp"

using namespace igi;
using igi::test::bit_equal;
using igi::test::max_abs_diff;

namespace {

const auto f64 = torch::TensorOptions().dtype(torch::kFloat64);

struct Fixture {
  World& world = igi::test::shared_world();
  InversionModels models = make_models(world);
  FrameObservation frame;

  Fixture() {
    torch::NoGradGuard no_grad;
    const SyntheticSample s = sample_synthetic_identity(world, 321, 2);
    frame = observation(s.frames[1]);
    const CoarseFeatures coarse = coarse_features(world, models.latent->forward(frame.image.unsqueeze(0)));
    observe(world, coarse, frame);
  }
};

}  // namespace

TEST_CASE("apply_cs_sft: identity, passthrough, arithmetic and affinity") {
  const torch::Tensor f = torch::randn({2, 6, 4, 4}, f64);
  const torch::Tensor one = torch::ones({2, 3, 4, 4}, f64), zero = torch::zeros({2, 3, 4, 4}, f64);
  CHECK(bit_equal(apply_cs_sft(f, one, zero), f));

  const torch::Tensor a = torch::randn({2, 3, 4, 4}, f64), b = torch::randn({2, 3, 4, 4}, f64);
  const torch::Tensor out = apply_cs_sft(f, a, b);
  CHECK(out.size(1) == 6);
  CHECK(bit_equal(out.narrow(1, 3, 3), f.narrow(1, 3, 3)));

  const torch::Tensor scalar = torch::tensor({2.0, 5.0}, f64).view({1, 2, 1, 1});
  const torch::Tensor s = apply_cs_sft(scalar, torch::full({1, 1, 1, 1}, 3.0, f64), torch::ones({1, 1, 1, 1}, f64));
  CHECK(s[0][0][0][0].item<double>() == 7.0);
  CHECK(s[0][1][0][0].item<double>() == 5.0);

  // alpha * (p F1 + q F2) + beta = p (alpha F1 + beta) + q (alpha F2 + beta) - (p + q - 1) beta
  const torch::Tensor f2 = torch::randn({2, 6, 4, 4}, f64);
  const double p = 0.7, q = -1.3;
  const torch::Tensor lhs = apply_cs_sft(p * f + q * f2, a, b).narrow(1, 0, 3);
  const torch::Tensor rhs = (p * apply_cs_sft(f, a, b) + q * apply_cs_sft(f2, a, b)).narrow(1, 0, 3) - (p + q - 1.0) * b;
  CHECK(max_abs_diff(lhs, rhs) < 1e-12);

  CHECK_THROWS_AS(apply_cs_sft(f, torch::ones({2, 3, 2, 2}, f64), torch::zeros({2, 3, 2, 2}, f64)), InvalidArgument);
  CHECK_THROWS_AS(apply_cs_sft(f, torch::ones({2, 2, 4, 4}, f64), torch::zeros({2, 2, 4, 4}, f64)), InvalidArgument);
  CHECK_THROWS_AS(apply_cs_sft(torch::randn({1, 5, 4, 4}, f64), one, zero), InvalidArgument);
}

TEST_CASE("e_latent: shape, determinism and resolution check") {
  Fixture fx;
  torch::NoGradGuard no_grad;
  const GeneratorConfig& g = fx.world.config.generator;
  const torch::Tensor img = fx.frame.image.unsqueeze(0);
  const LatentCode a = fx.models.latent->forward(img);
  CHECK(a.wplus.sizes() == torch::IntArrayRef({1, g.style_layers, g.w_dim}));
  CHECK(bit_equal(a.wplus, fx.models.latent->forward(img).wplus));
  CHECK(torch::isfinite(a.wplus).all().item<bool>());
  CHECK_THROWS_AS(fx.models.latent->forward(torch::rand({1, 3, 16, 16})), InvalidArgument);
  CHECK_THROWS_AS(fx.models.latent->forward(torch::rand({1, 1, 32, 32})), InvalidArgument);
  // Zero-initialized delta starts at the average latent.
  CHECK(max_abs_diff(a.wplus, fx.world.generator->mean_latent(1).wplus) == 0.0);
}

TEST_CASE("e_tex: zero offsets at initialization with texture-shaped outputs") {
  Fixture fx;
  torch::NoGradGuard no_grad;
  const GeneratorConfig& g = fx.world.config.generator;
  for (Variant v : {Variant::Full, Variant::PosedTex}) {
    ETex& tex = fx.models.variant(v).tex;
    const torch::Tensor in = tex_encoder_inputs(fx.frame, tex->input());
    const TexOffsets off = tex->forward(in);
    REQUIRE(off.scales.size() == g.tex_resolutions.size());
    for (std::size_t s = 0; s < off.scales.size(); ++s) {
      CHECK(off.scales[s].sizes() ==
            torch::IntArrayRef({1, g.tex_channels[s], g.tex_resolutions[s], g.tex_resolutions[s]}));
      CHECK(off.scales[s].abs().max().item<double>() == 0.0);
    }
    const TexOffsets again = tex->forward(in);
    for (std::size_t s = 0; s < off.scales.size(); ++s) CHECK(bit_equal(off.scales[s], again.scales[s]));
  }
  const int uv = fx.world.config.encoders.uv_resolution;
  CHECK_THROWS_AS(fx.models.full().tex->forward(torch::zeros({1, 7, uv / 2, uv / 2})), InvalidArgument);
  CHECK_THROWS_AS(fx.models.full().tex->forward(torch::zeros({1, 6, uv, uv})), InvalidArgument);
}

TEST_CASE("e_tex inputs: visibility-masked texels carry zeros") {
  Fixture fx;
  const torch::Tensor in = tex_encoder_inputs(fx.frame, TexInput::UV)[0];
  CHECK(in.size(0) == 7);
  const torch::Tensor hidden = (in[6] < 0.5).unsqueeze(0).expand({6, -1, -1});
  CHECK(in.narrow(0, 0, 6).masked_select(hidden).abs().max().item<double>() == 0.0);
  CHECK(in[6].sum().item<double>() > 0.0);
  CHECK(bit_equal(in.narrow(0, 0, 3), fx.frame.uv_image.data));
  CHECK(bit_equal(in.narrow(0, 3, 3), fx.frame.uv_residual.data));
}

TEST_CASE("e_tri: identity modulation at initialization matching the static branch") {
  Fixture fx;
  torch::NoGradGuard no_grad;
  const TriRefinement r = fx.models.full().tri->forward(tri_encoder_inputs(fx.frame));
  REQUIRE(r.is_sft());
  const auto& res = fx.world.generator->statics->modulation_resolutions();
  const auto& ch = fx.world.generator->statics->modulation_channels();
  REQUIRE(r.sft.size() == res.size());
  for (std::size_t s = 0; s < res.size(); ++s) {
    CHECK(r.sft.alpha[s].sizes() == torch::IntArrayRef({1, ch[s] / 2, res[s], res[s]}));
    CHECK(r.sft.alpha[s].sizes() == r.sft.beta[s].sizes());
    CHECK(max_abs_diff(r.sft.alpha[s], torch::ones_like(r.sft.alpha[s])) == 0.0);
    CHECK(r.sft.beta[s].abs().max().item<double>() == 0.0);
  }
  const LatentCode w = fx.world.generator->sample_latent(1, 4);
  CHECK(bit_equal(fx.world.generator->g_static(w, &r.sft).planes, fx.world.generator->g_static(w).planes));

  const TriRefinement off = fx.models.variant(Variant::TriOffsets).tri->forward(tri_encoder_inputs(fx.frame));
  REQUIRE_FALSE(off.is_sft());
  const GeneratorConfig& g = fx.world.config.generator;
  CHECK(off.plane_offsets.sizes() ==
        torch::IntArrayRef({1, 3, g.plane_channels, g.plane_resolution, g.plane_resolution}));
  CHECK(off.plane_offsets.abs().max().item<double>() == 0.0);
  CHECK_THROWS_AS(fx.models.full().tri->forward(torch::zeros({1, 6, 16, 16})), InvalidArgument);
}

TEST_CASE("encoder outputs are deterministic in inputs and weights") {
  Fixture fx;
  torch::NoGradGuard no_grad;
  // Perturb the zero-initialized heads so the outputs are non-trivial.
  for (auto& p : fx.models.full().tex->heads->parameters()) p.add_(0.05 * torch::randn_like(p));
  for (auto& p : fx.models.full().tri->heads->parameters()) p.add_(0.05 * torch::randn_like(p));
  const torch::Tensor tin = tex_encoder_inputs(fx.frame, TexInput::UV);
  const torch::Tensor iin = tri_encoder_inputs(fx.frame);
  const TexOffsets a = fx.models.full().tex->forward(tin), b = fx.models.full().tex->forward(tin);
  for (std::size_t s = 0; s < a.scales.size(); ++s) {
    CHECK(bit_equal(a.scales[s], b.scales[s]));
    CHECK(a.scales[s].abs().max().item<double>() > 0.0);
  }
  const TriRefinement c = fx.models.full().tri->forward(iin), d = fx.models.full().tri->forward(iin);
  for (std::size_t s = 0; s < c.sft.size(); ++s) {
    CHECK(bit_equal(c.sft.alpha[s], d.sft.alpha[s]));
    CHECK(bit_equal(c.sft.beta[s], d.sft.beta[s]));
  }

  // Same seed, same weights.
  InversionModels again = make_models(fx.world);
  for (const auto& [name, m] : again.named_modules()) {
    if (name.rfind("e_tex.full", 0) == 0 || name.rfind("e_tri.full", 0) == 0) continue;
    for (const auto& [other_name, other] : fx.models.named_modules()) {
      if (other_name != name) continue;
      const auto pa = m->parameters(), pb = other->parameters();
      REQUIRE(pa.size() == pb.size());
      for (std::size_t i = 0; i < pa.size(); ++i) CHECK(bit_equal(pa[i], pb[i]));
    }
  }
}

#include "oracles.hpp"
#include "support.hpp"

#include <chrono>

using namespace igi;
using igi::test::bit_equal;
using igi::test::max_abs_diff;

namespace {

const auto f64 = torch::TensorOptions().dtype(torch::kFloat64);

GRUWeights random_weights(int cf, int c, int k, double scale = 1.0) {
  return {torch::randn({2 * c, cf + c, k, k}, f64) * scale, torch::randn({2 * c}, f64) * scale,
          torch::randn({c, cf + c, k, k}, f64) * scale, torch::randn({c}, f64) * scale};
}

GRUWeights zero_weights(int cf, int c, int k) {
  return {torch::zeros({2 * c, cf + c, k, k}, f64), torch::zeros({2 * c}, f64), torch::zeros({c, cf + c, k, k}, f64),
          torch::zeros({c}, f64)};
}

}  // namespace

TEST_CASE("ConvGRU step matches the scalar reference for 1x1 kernels") {
  torch::manual_seed(0);
  double worst = 0.0;
  for (int draw = 0; draw < 100; ++draw) {
    const GRUWeights w = random_weights(3, 2, 1);
    const torch::Tensor f = torch::randn({1, 3, 2, 2}, f64), h = torch::randn({1, 2, 2, 2}, f64);
    worst = std::max(worst, max_abs_diff(conv_gru_step(f, h, w), oracle::gru_step_1x1(f, h, w)));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("ConvGRU with zero weights halves the state") {
  const torch::Tensor f = torch::randn({2, 3, 4, 4}, f64), h = torch::randn({2, 5, 4, 4}, f64);
  for (int k : {1, 3}) CHECK(bit_equal(conv_gru_step(f, h, zero_weights(3, 5, k)), 0.5 * h));
}

TEST_CASE("ConvGRU gate layout and shape checks") {
  ConvGRUCell cell(4, 6, 3);
  CHECK(cell->gate_weight.size(0) == 12);
  CHECK(cell->gate_weight.size(1) == 10);
  CHECK(cell->cand_weight.size(0) == 6);
  CHECK(cell->cand_weight.size(1) == 10);
  const GRUWeights w = random_weights(4, 6, 3);
  CHECK_THROWS_AS(conv_gru_step(torch::randn({1, 4, 4, 4}, f64), torch::randn({1, 6, 3, 3}, f64), w), InvalidArgument);
  CHECK_THROWS_AS(conv_gru_step(torch::randn({1, 5, 4, 4}, f64), torch::randn({1, 6, 4, 4}, f64), w), InvalidArgument);
  CHECK_THROWS_AS(conv_gru_step(torch::randn({1, 4, 4, 4}, f64), torch::randn({1, 5, 4, 4}, f64), w), InvalidArgument);
  CHECK_THROWS_AS(ConvGRUCell(4, 6, 2), InvalidArgument);
}

TEST_CASE("ConvGRU state stays bounded by max(|h_prev|, 1)") {
  for (int draw = 0; draw < 20; ++draw) {
    const GRUWeights w = random_weights(3, 4, 3, 2.0);
    const torch::Tensor f = torch::randn({1, 3, 5, 5}, f64) * 3.0, h = torch::randn({1, 4, 5, 5}, f64) * 2.0;
    const torch::Tensor next = conv_gru_step(f, h, w);
    CHECK((next.abs() - torch::clamp_min(h.abs(), 1.0)).max().item<double>() <= 1e-12);
  }
}

TEST_CASE("fold_sequence: empty, single step and order sensitivity") {
  const GRUWeights w = random_weights(3, 4, 3, 0.5);
  const torch::Tensor h0 = torch::randn({1, 4, 4, 4}, f64);
  CHECK(bit_equal(fold_sequence({}, h0, w), h0));
  const torch::Tensor f1 = torch::randn({1, 3, 4, 4}, f64), f2 = torch::randn({1, 3, 4, 4}, f64);
  CHECK(bit_equal(fold_sequence({f1}, h0, w), conv_gru_step(f1, h0, w)));
  CHECK(bit_equal(fold_sequence({f1, f2}, h0, w), conv_gru_step(f2, conv_gru_step(f1, h0, w), w)));
  CHECK(max_abs_diff(fold_sequence({f1, f2}, h0, w), fold_sequence({f2, f1}, h0, w)) > 1e-6);
}

TEST_CASE("warm start: zero cycles, one cycle and fold composition") {
  RecurrentDecoder dec(std::vector<int>{4, 6}, std::vector<int>{4, 8}, 8, std::vector<int>{3, 5}, 3);
  std::vector<std::vector<torch::Tensor>> frames;
  for (int t = 0; t < 3; ++t) frames.push_back({torch::randn({2, 4, 4, 4}), torch::randn({2, 6, 8, 8})});
  const auto opts = torch::TensorOptions().dtype(torch::kFloat32);
  for (const auto& h : warm_start(*dec, frames, 0, 2, opts)) CHECK(h.abs().max().item<double>() == 0.0);

  const auto zero = dec->zero_state(2, opts);
  const auto one = warm_start(*dec, frames, 1, 2, opts);
  const auto ref1 = dec->fold(frames, zero);
  for (std::size_t s = 0; s < one.size(); ++s) {
    CHECK(bit_equal(one[s], ref1[s]));
    CHECK_FALSE(one[s].requires_grad());
  }
  auto doubled = frames;
  doubled.insert(doubled.end(), frames.begin(), frames.end());
  const auto two = warm_start(*dec, frames, 2, 2, opts);
  const auto ref2 = dec->fold(doubled, zero);
  for (std::size_t s = 0; s < two.size(); ++s) CHECK(bit_equal(two[s], ref2[s]));
  CHECK_THROWS_AS(warm_start(*dec, frames, -1, 2, opts), InvalidArgument);
}

TEST_CASE("recurrent decoder distillation reproduces the one-shot decoder with a shut update gate") {
  const Config cfg;
  UNet unet(6, 32, cfg.encoders);
  Heads heads(unet->scale_channels(), 8, std::vector<int>{4, 4, 4});
  torch::NoGradGuard no_grad;
  for (auto& p : heads->parameters()) p.normal_(0.0, 0.1);
  RecurrentDecoder dec(unet->scale_channels(), unet->scale_resolutions(), 8, std::vector<int>{4, 4, 4}, 3);
  dec->distill_from(*unet, *heads, -std::numeric_limits<double>::infinity());
  const UNetFeatures feats = unet->forward(torch::rand({1, 6, 32, 32}));
  const auto state = dec->step(feats.pre, dec->zero_state(1, torch::TensorOptions()));
  for (std::size_t s = 0; s < state.size(); ++s) CHECK(bit_equal(state[s], feats.post[s]));
  const auto a = dec->decode(state), b = heads->forward(feats.post);
  for (std::size_t s = 0; s < a.size(); ++s) CHECK(bit_equal(a[s], b[s]));

  // With the default bias the first step is a slightly damped copy.
  dec->distill_from(*unet, *heads, cfg.recurrent.update_gate_bias);
  const auto damped = dec->step(feats.pre, dec->zero_state(1, torch::TensorOptions()));
  const double z = 1.0 / (1.0 + std::exp(-cfg.recurrent.update_gate_bias));
  for (std::size_t s = 0; s < damped.size(); ++s) CHECK(max_abs_diff(damped[s], (1.0 - z) * feats.post[s]) < 1e-6);
}

TEST_CASE("ConvFusion: distilled window average and window splitting") {
  const Config cfg;
  UNet unet(6, 32, cfg.encoders);
  Heads heads(unet->scale_channels(), 8, std::vector<int>{4, 4, 4});
  ConvFusion fusion(unet->scale_channels(), 8, std::vector<int>{4, 4, 4}, 4, 3);
  torch::NoGradGuard no_grad;
  for (auto& p : heads->parameters()) p.normal_(0.0, 0.1);
  fusion->distill_from(*unet, *heads);
  const UNetFeatures feats = unet->forward(torch::rand({1, 6, 32, 32}));
  // Four copies of one frame reproduce the one-shot decoder.
  const auto single = fusion->forward({feats.pre});
  const auto ref = heads->forward(feats.post);
  for (std::size_t s = 0; s < ref.size(); ++s) CHECK(max_abs_diff(single[s], ref[s]) < 1e-5);

  std::vector<std::vector<torch::Tensor>> frames;
  for (int t = 0; t < 9; ++t) frames.push_back(unet->forward(torch::rand({1, 6, 32, 32})).pre);
  const auto all = fusion->forward(frames);
  const auto w0 = fusion->fuse_window({frames.begin(), frames.begin() + 4});
  const auto w1 = fusion->fuse_window({frames.begin() + 4, frames.begin() + 8});
  const auto w2 = fusion->fuse_window({frames.begin() + 8, frames.end()});
  for (std::size_t s = 0; s < all.size(); ++s)
    CHECK(max_abs_diff(all[s], (w0[s] + w1[s] + w2[s]) / 3.0) < 1e-6);
  CHECK_THROWS_AS(fusion->fuse_window(frames), InvalidArgument);
}

TEST_CASE("session updates equal a batch fold of the same features") {
  World& world = igi::test::shared_world();
  InversionModels models = make_models(world);
  torch::NoGradGuard no_grad;
  // Give the recurrent cells generic weights so the check is not trivially satisfied.
  for (auto* dec : {&models.tex_rec, &models.tri_rec})
    for (auto& cell : (*dec)->cells) {
      cell->gate_weight.normal_(0.0, 0.05);
      cell->gate_bias.normal_(0.0, 0.5);
    }
  const SyntheticSample sample = sample_synthetic_identity(world, 77, 16);
  AvatarSession session = start_session(world, models, observation(sample.frames[0]));
  std::vector<std::vector<std::vector<torch::Tensor>>> tex(3), tri(3);
  for (const auto& frame : sample.frames) {
    FrameObservation f = observation(frame);
    observe(world, session.coarse, f);
    const FrameFeatures feats = frame_features(models, f);
    for (std::size_t s = 0; s < 3; ++s) {
      tex[s].push_back({feats.tex[s]});
      tri[s].push_back({feats.tri[s]});
    }
    update_session(world, models, session, observation(frame));
  }
  CHECK(session.state.t == 16);
  for (std::size_t s = 0; s < 3; ++s) {
    std::vector<torch::Tensor> ft, fr;
    for (const auto& v : tex[s]) ft.push_back(v[0]);
    for (const auto& v : tri[s]) fr.push_back(v[0]);
    const torch::Tensor ht = fold_sequence(ft, torch::zeros_like(session.state.tex[s]), models.tex_rec->cells[s]->weights());
    const torch::Tensor hr = fold_sequence(fr, torch::zeros_like(session.state.tri[s]), models.tri_rec->cells[s]->weights());
    CHECK(bit_equal(ht, session.state.tex[s]));
    CHECK(bit_equal(hr, session.state.tri[s]));
  }
}

TEST_CASE("session state is constant in size and update cost") {
  World& world = igi::test::shared_world();
  InversionModels models = make_models(world);
  torch::NoGradGuard no_grad;
  const SyntheticSample sample = sample_synthetic_identity(world, 78, 32);
  AvatarSession session = start_session(world, models, observation(sample.frames[0]));
  auto bytes = [&] {
    int64_t n = 0;
    for (const auto& h : session.state.tex) n += h.numel() * static_cast<int64_t>(h.element_size());
    for (const auto& h : session.state.tri) n += h.numel() * static_cast<int64_t>(h.element_size());
    return n;
  };
  const int64_t initial = bytes();
  std::vector<std::vector<int64_t>> shapes;
  for (const auto& h : session.state.tex) shapes.push_back(h.sizes().vec());
  std::vector<double> seconds;
  for (const auto& frame : sample.frames) {
    const FrameObservation obs = observation(frame);
    const auto t0 = std::chrono::steady_clock::now();
    update_session(world, models, session, obs);
    seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    CHECK(bytes() == initial);
    for (std::size_t s = 0; s < shapes.size(); ++s) CHECK(session.state.tex[s].sizes().vec() == shapes[s]);
  }
  auto median = [](std::vector<double> v) {
    std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
    return v[v.size() / 2];
  };
  const double early = median({seconds.begin() + 1, seconds.begin() + 8});
  const double late = median({seconds.end() - 7, seconds.end()});
  CHECK(late <= 2.0 * early);
}

TEST_CASE("decode_session is pure and needs at least one frame") {
  World& world = igi::test::shared_world();
  InversionModels models = make_models(world);
  torch::NoGradGuard no_grad;
  const SyntheticSample sample = sample_synthetic_identity(world, 79, 2);
  AvatarSession session = start_session(world, models, observation(sample.frames[0]));
  CHECK_THROWS_AS(decode_session(models, session), InvalidArgument);
  CHECK_THROWS_AS(update_session(world, models, *std::make_unique<AvatarSession>(), observation(sample.frames[0])),
                  InvalidArgument);
  update_session(world, models, session, observation(sample.frames[1]));
  const auto [o1, t1] = decode_session(models, session);
  const auto [o2, t2] = decode_session(models, session);
  const GeneratorConfig& g = world.config.generator;
  for (std::size_t s = 0; s < o1.scales.size(); ++s) {
    CHECK(bit_equal(o1.scales[s], o2.scales[s]));
    CHECK(o1.scales[s].sizes() == torch::IntArrayRef({1, g.tex_channels[s], g.tex_resolutions[s], g.tex_resolutions[s]}));
    // Heads distilled from zero-initialized one-shot heads.
    CHECK(o1.scales[s].abs().max().item<double>() == 0.0);
  }
  for (std::size_t s = 0; s < t1.sft.size(); ++s) {
    CHECK(bit_equal(t1.sft.alpha[s], t2.sft.alpha[s]));
    CHECK(max_abs_diff(t1.sft.alpha[s], torch::ones_like(t1.sft.alpha[s])) == 0.0);
    CHECK(t1.sft.beta[s].abs().max().item<double>() == 0.0);
  }
}

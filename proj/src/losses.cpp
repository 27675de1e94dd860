#include "igi/losses.hpp"

#include "igi/common.hpp"
#include "igi/layers.hpp"

namespace igi {

namespace F = torch::nn::functional;

ProxyNetworkImpl::ProxyNetworkImpl(std::uint64_t seed, int base_channels) {
  SeedScope scope(seed);
  int in = 3;
  for (int s = 0; s < 3; ++s) {
    const int out = base_channels << s;
    torch::nn::Conv2d conv = conv3x3(in, out);
    normal_init(conv, 1.41421356);
    stages_.push_back(register_module("stage" + std::to_string(s), conv));
    in = out;
  }
  set_trainable(*this, false);
  eval();
}

std::vector<torch::Tensor> ProxyNetworkImpl::features(const torch::Tensor& image) {
  require(image.dim() == 4 && image.size(1) == 3, "proxy network expects B x 3 x H x W");
  std::vector<torch::Tensor> out;
  torch::Tensor x = image * 2.0 - 1.0;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    if (s > 0) x = downsample2x(x);
    x = lrelu(stages_[s]->forward(x));
    out.push_back(x);
  }
  return out;
}

torch::Tensor ProxyNetworkImpl::embedding(const torch::Tensor& image) { return features(image).back().mean({2, 3}); }

torch::Tensor lpips_proxy(ProxyNetworkImpl& net, const torch::Tensor& pred, const torch::Tensor& target) {
  require(pred.sizes() == target.sizes(), "lpips proxy: shape mismatch");
  const auto a = net.features(pred);
  const auto b = net.features(target);
  torch::Tensor sum = torch::zeros({}, pred.options());
  for (std::size_t s = 0; s < a.size(); ++s) sum = sum + (a[s] - b[s]).abs().mean();
  return sum / double(a.size());
}

torch::Tensor csim_proxy(ProxyNetworkImpl& net, const torch::Tensor& pred, const torch::Tensor& target) {
  require(pred.sizes() == target.sizes(), "csim proxy: shape mismatch");
  return F::cosine_similarity(net.embedding(pred), net.embedding(target),
                              F::CosineSimilarityFuncOptions().dim(1).eps(1e-8));
}

torch::Tensor id_proxy(ProxyNetworkImpl& net, const torch::Tensor& pred, const torch::Tensor& target) {
  return (1.0 - csim_proxy(net, pred, target)).mean();
}

void LossReport::add(const std::string& name, const torch::Tensor& value, double weight) {
  terms[name] = {value, weight};
  const torch::Tensor w = value * weight;
  total = total.defined() ? total + w : w;
}

double LossReport::term(const std::string& name) const {
  const auto it = terms.find(name);
  require(it != terms.end(), "loss report has no term " + name);
  return it->second.value.item<double>();
}

AdversarialLosses nonsaturating(const torch::Tensor& real_logits, const torch::Tensor& fake_logits_detached,
                                const torch::Tensor& fake_logits) {
  AdversarialLosses out;
  out.d_loss = 0.5 * (F::softplus(-real_logits).mean() + F::softplus(fake_logits_detached).mean());
  out.g_loss = F::softplus(-fake_logits).mean();
  return out;
}

LatentDiscriminatorImpl::LatentDiscriminatorImpl(int w_dim, int hidden, int layers) {
  net_ = torch::nn::Sequential();
  int in = w_dim;
  for (int i = 0; i < layers - 1; ++i) {
    net_->push_back(torch::nn::Linear(in, hidden));
    net_->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)));
    in = hidden;
  }
  net_->push_back(torch::nn::Linear(in, 1));
  net_ = register_module("net", net_);
}

torch::Tensor LatentDiscriminatorImpl::forward(const torch::Tensor& w) {
  if (w.dim() == 3) return net_->forward(w).squeeze(-1).mean(1);
  return net_->forward(w).squeeze(-1);
}

AdversarialLosses latent_adv(LatentDiscriminatorImpl& disc, const torch::Tensor& real_w, const torch::Tensor& fake_w) {
  require(real_w.size(0) == fake_w.size(0), "latent_adv: batch sizes differ");
  return nonsaturating(disc.forward(real_w), disc.forward(fake_w.detach()), disc.forward(fake_w));
}

ImageDiscriminatorImpl::ImageDiscriminatorImpl(int in_channels, int resolution, int base_channels)
    : in_channels_(in_channels) {
  require(resolution >= 4, "discriminator resolution too small");
  net_ = torch::nn::Sequential();
  int c = base_channels;
  net_->push_back(conv3x3(in_channels, c));
  net_->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)));
  int res = resolution;
  while (res > 4) {
    const int out = std::min(c * 2, 4 * base_channels);
    net_->push_back(conv3x3(c, out, 2));
    net_->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)));
    c = out;
    res /= 2;
  }
  net_->push_back(torch::nn::Flatten());
  net_->push_back(torch::nn::Linear(c * res * res, 1));
  net_ = register_module("net", net_);
}

torch::Tensor ImageDiscriminatorImpl::forward(const torch::Tensor& x) {
  require(x.dim() == 4 && x.size(1) == in_channels_, "discriminator input channel mismatch");
  return net_->forward(x).squeeze(-1);
}

torch::Tensor dual_pair(const RenderOutput& render) { return torch::cat({render.rgb, render.rgb}, 1); }

AdversarialLosses dual_disc_loss(ImageDiscriminatorImpl& disc, const torch::Tensor& real_pair,
                                 const torch::Tensor& fake_pair) {
  return nonsaturating(disc.forward(real_pair), disc.forward(fake_pair.detach()), disc.forward(fake_pair));
}

torch::Tensor r1_penalty(const std::function<torch::Tensor(const torch::Tensor&)>& disc, const torch::Tensor& real,
                         double gamma) {
  const torch::Tensor x = real.detach().requires_grad_(true);
  const torch::Tensor logits = disc(x);
  if (!logits.requires_grad()) return torch::zeros({}, real.options());
  const auto grads = torch::autograd::grad({logits.sum()}, {x}, {}, true, true, true);
  if (!grads[0].defined()) return torch::zeros({}, real.options());
  return 0.5 * gamma * grads[0].pow(2).flatten(1).sum(1).mean();
}

torch::Tensor density_regularization(const TriPlane& planes, const FieldDecoder& decoder, double box_half_extent,
                                     int num_points, double relative_std, torch::Generator& rng) {
  const int64_t batch = planes.planes.size(0);
  const auto opts = planes.planes.options().requires_grad(false);
  const torch::Tensor x = (torch::rand({batch, num_points, 3}, rng, opts) * 2.0 - 1.0) * box_half_extent;
  const torch::Tensor delta = torch::randn({batch, num_points, 3}, rng, opts) * (relative_std * 2.0 * box_half_extent);
  const torch::Tensor y = x + delta;
  const DecodedField a = decoder(sample_triplane(planes, x, box_half_extent), x);
  const DecodedField b = decoder(sample_triplane(planes, y, box_half_extent), y);
  return (a.sigma - b.sigma).abs().mean();
}

torch::Tensor mean_abs(const torch::Tensor& a, const torch::Tensor& b) {
  require(a.sizes() == b.sizes(), "L1: shape mismatch");
  return (a - b).abs().mean();
}

torch::Tensor texture_l1(const NeuralTexture& a, const NeuralTexture& b) {
  require(a.scales.size() == b.scales.size() && !a.scales.empty(), "texture L1: scale count mismatch");
  torch::Tensor sum = mean_abs(a.scales[0], b.scales[0]);
  for (std::size_t s = 1; s < a.scales.size(); ++s) sum = sum + mean_abs(a.scales[s], b.scales[s]);
  return sum / double(a.scales.size());
}

LossReport loss_stage1(const torch::Tensor& pred, const torch::Tensor& target, const torch::Tensor& fake_w,
                       const torch::Tensor& real_w, LatentDiscriminatorImpl& disc, ProxyNetworkImpl& proxy,
                       const TrainingConfig& config) {
  require(pred.sizes() == target.sizes(), "stage 1 loss: image shapes differ");
  LossReport r;
  r.add("l1", mean_abs(pred, target), 1.0);
  r.add("lpips", lpips_proxy(proxy, pred, target), config.lambda_lpips_s1);
  r.add("id", id_proxy(proxy, pred, target), config.lambda_id_s1);
  const AdversarialLosses adv = latent_adv(disc, real_w, fake_w);
  r.add("adv_e", adv.g_loss, 1.0);
  r.add("adv_d", adv.d_loss, 1.0);
  return r;
}

LossReport loss_stage2(const PredictionBundle& pred, const PredictionBundle& target, ProxyNetworkImpl& proxy,
                       const TrainingConfig& config, ImageDiscriminatorImpl* disc, const torch::Tensor& fake_pair) {
  require(pred.image.sizes() == target.image.sizes(), "stage 2 loss: image shapes differ");
  LossReport r;
  r.add("l1", mean_abs(pred.image, target.image), 1.0);
  r.add("lpips", lpips_proxy(proxy, pred.image, target.image), config.lambda_lpips_s2);
  if (target.tri.defined()) r.add("l_tri", mean_abs(pred.tri, target.tri), config.lambda_tri);
  if (!target.tex.scales.empty()) r.add("l_tex", texture_l1(pred.tex, target.tex), config.lambda_tex);
  if (target.raw.defined()) r.add("l_raw", mean_abs(pred.raw, target.raw), config.lambda_raw);
  if (disc != nullptr) {
    const torch::Tensor fake = fake_pair.defined() ? fake_pair : torch::cat({pred.image, pred.image}, 1);
    r.add("adv_e", F::softplus(-disc->forward(fake)).mean(), config.lambda_adv);
  }
  return r;
}

}  // namespace igi

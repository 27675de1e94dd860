#pragma once

#include "igi/config.hpp"
#include "igi/generator.hpp"
#include "igi/types.hpp"

#include <functional>
#include <map>
#include <string>

namespace igi {

// Frozen, seed-pinned random conv pyramid standing in for pretrained perceptual and identity
// networks. Three stages at full, 1/2 and 1/4 resolution.
class ProxyNetworkImpl : public torch::nn::Module {
 public:
  explicit ProxyNetworkImpl(std::uint64_t seed, int base_channels = 16);
  std::vector<torch::Tensor> features(const torch::Tensor& image);
  // Global average of the deepest stage, B x C.
  torch::Tensor embedding(const torch::Tensor& image);

 private:
  std::vector<torch::nn::Conv2d> stages_;
};
TORCH_MODULE(ProxyNetwork);

// Mean over stages of the mean absolute feature difference.
torch::Tensor lpips_proxy(ProxyNetworkImpl& net, const torch::Tensor& pred, const torch::Tensor& target);
// Mean of 1 - cos(embedding(pred), embedding(target)).
torch::Tensor id_proxy(ProxyNetworkImpl& net, const torch::Tensor& pred, const torch::Tensor& target);
// Per-sample cosine similarity of embeddings, B.
torch::Tensor csim_proxy(ProxyNetworkImpl& net, const torch::Tensor& pred, const torch::Tensor& target);

struct LossTerm {
  torch::Tensor value;  // unweighted scalar
  double weight = 1.0;
};

struct LossReport {
  torch::Tensor total;
  std::map<std::string, LossTerm> terms;

  void add(const std::string& name, const torch::Tensor& value, double weight);
  double term(const std::string& name) const;
  bool has(const std::string& name) const { return terms.count(name) > 0; }
  double total_value() const { return total.item<double>(); }
};

// Non-saturating logistic losses from discriminator logits. d_loss averages softplus(-real) and
// softplus(fake) over all 2B samples; g_loss is mean softplus(-fake).
struct AdversarialLosses {
  torch::Tensor d_loss;
  torch::Tensor g_loss;
};
AdversarialLosses nonsaturating(const torch::Tensor& real_logits, const torch::Tensor& fake_logits_detached,
                                const torch::Tensor& fake_logits);

class LatentDiscriminatorImpl : public torch::nn::Module {
 public:
  LatentDiscriminatorImpl(int w_dim, int hidden = 128, int layers = 3);
  // w: B x D (or B x L x D, each layer scored separately and averaged) -> B logits.
  torch::Tensor forward(const torch::Tensor& w);

 private:
  torch::nn::Sequential net_{nullptr};
};
TORCH_MODULE(LatentDiscriminator);

AdversarialLosses latent_adv(LatentDiscriminatorImpl& disc, const torch::Tensor& real_w, const torch::Tensor& fake_w);

// Image discriminator. The dual discriminator sees the concatenated raw-rgb and final images
// (6 channels) with no pose input; the prior discriminator sees rgb plus a landmark map.
class ImageDiscriminatorImpl : public torch::nn::Module {
 public:
  ImageDiscriminatorImpl(int in_channels, int resolution, int base_channels = 16);
  torch::Tensor forward(const torch::Tensor& x);
  int in_channels() const { return in_channels_; }
  // Number of non-image conditioning inputs (pose vectors and the like). Always zero here.
  int conditioning_dims() const { return 0; }

 private:
  int in_channels_;
  torch::nn::Sequential net_{nullptr};
};
TORCH_MODULE(ImageDiscriminator);

// Raw rgb and final rgb stacked as the dual discriminator input. Without a super-resolution
// module the two coincide.
torch::Tensor dual_pair(const RenderOutput& render);
AdversarialLosses dual_disc_loss(ImageDiscriminatorImpl& disc, const torch::Tensor& real_pair,
                                 const torch::Tensor& fake_pair);

// (gamma / 2) * mean_b ||d sum D(x_b) / d x_b||^2 at the given real samples.
torch::Tensor r1_penalty(const std::function<torch::Tensor(const torch::Tensor&)>& disc, const torch::Tensor& real,
                         double gamma);

// Mean |sigma(x) - sigma(x + delta)| over uniform points x in the volume box, delta ~ N(0, std^2)
// with std = relative_std * (2 * box_half_extent).
torch::Tensor density_regularization(const TriPlane& planes, const FieldDecoder& decoder, double box_half_extent,
                                     int num_points, double relative_std, torch::Generator& rng);

struct PredictionBundle {
  torch::Tensor image;  // B x 3 x H x W
  NeuralTexture tex;
  torch::Tensor tri;    // static planes B x 3 x C x R x R
  torch::Tensor raw;    // B x C_r x H x W
};

// Target fields left undefined disable the corresponding intermediate term.
LossReport loss_stage1(const torch::Tensor& pred, const torch::Tensor& target, const torch::Tensor& fake_w,
                       const torch::Tensor& real_w, LatentDiscriminatorImpl& disc, ProxyNetworkImpl& proxy,
                       const TrainingConfig& config);
LossReport loss_stage2(const PredictionBundle& pred, const PredictionBundle& target, ProxyNetworkImpl& proxy,
                       const TrainingConfig& config, ImageDiscriminatorImpl* disc = nullptr,
                       const torch::Tensor& fake_pair = {});

torch::Tensor mean_abs(const torch::Tensor& a, const torch::Tensor& b);
torch::Tensor texture_l1(const NeuralTexture& a, const NeuralTexture& b);

}  // namespace igi

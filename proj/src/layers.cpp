#include "igi/layers.hpp"

#include "igi/common.hpp"

#include <cmath>

namespace igi {

namespace F = torch::nn::functional;

ModulatedConv2dImpl::ModulatedConv2dImpl(int in_channels, int out_channels, int kernel, int w_dim, bool upsample,
                                         bool demodulate)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      upsample_(upsample),
      demodulate_(demodulate) {
  affine_ = register_module("affine", torch::nn::Linear(w_dim, in_channels));
  normal_init(affine_, 1.0);
  {
    torch::NoGradGuard no_grad;
    affine_->bias.fill_(1.0);
  }
  weight_ = register_parameter(
      "weight", torch::randn({out_channels, in_channels, kernel, kernel}) / std::sqrt(double(in_channels * kernel * kernel)));
  bias_ = register_parameter("bias", torch::zeros({out_channels}));
}

torch::Tensor ModulatedConv2dImpl::forward(const torch::Tensor& x_in, const torch::Tensor& w) {
  require(x_in.size(1) == in_channels_, "modulated conv: input channel mismatch");
  torch::Tensor x = upsample_ ? upsample2x(x_in) : x_in;
  const int64_t batch = x.size(0);
  const torch::Tensor style = affine_->forward(w);  // B x Cin
  torch::Tensor weight = weight_.unsqueeze(0) * style.view({batch, 1, in_channels_, 1, 1});
  if (demodulate_) weight = weight * torch::rsqrt(weight.pow(2).sum({2, 3, 4}, true) + 1e-8);
  weight = weight.view({batch * out_channels_, in_channels_, kernel_, kernel_});
  const int64_t h = x.size(2), wd = x.size(3);
  torch::Tensor out = F::conv2d(x.reshape({1, batch * in_channels_, h, wd}), weight,
                                F::Conv2dFuncOptions().padding(kernel_ / 2).groups(batch));
  return out.view({batch, out_channels_, h, wd}) + bias_.view({1, -1, 1, 1});
}

torch::Tensor upsample2x(const torch::Tensor& x) {
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .scale_factor(std::vector<double>{2.0, 2.0})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

torch::Tensor downsample2x(const torch::Tensor& x) { return F::avg_pool2d(x, F::AvgPool2dFuncOptions(2)); }

torch::Tensor lrelu(const torch::Tensor& x) { return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2)); }

torch::nn::Conv2d conv3x3(int in, int out, int stride) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

torch::nn::Conv2d conv1x1(int in, int out) { return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1)); }

void zero_init(torch::nn::Conv2d& conv) {
  torch::NoGradGuard no_grad;
  conv->weight.zero_();
  if (conv->bias.defined()) conv->bias.zero_();
}

void normal_init(torch::nn::Linear& layer, double gain) {
  torch::NoGradGuard no_grad;
  layer->weight.normal_(0.0, gain / std::sqrt(double(layer->weight.size(1))));
  if (layer->bias.defined()) layer->bias.zero_();
}

void normal_init(torch::nn::Conv2d& conv, double gain) {
  torch::NoGradGuard no_grad;
  const auto& w = conv->weight;
  conv->weight.normal_(0.0, gain / std::sqrt(double(w.size(1) * w.size(2) * w.size(3))));
  if (conv->bias.defined()) conv->bias.zero_();
}

void set_trainable(torch::nn::Module& module, bool trainable) {
  for (auto& p : module.parameters()) p.set_requires_grad(trainable);
}

void copy_weights(const torch::nn::Module& from, torch::nn::Module& to) {
  torch::NoGradGuard no_grad;
  const auto src = from.named_parameters(true);
  for (auto& item : to.named_parameters(true)) {
    const auto* s = src.find(item.key());
    require(s != nullptr, "copy_weights: missing parameter " + item.key());
    item.value().copy_(*s);
  }
  const auto src_buffers = from.named_buffers(true);
  for (auto& item : to.named_buffers(true)) {
    const auto* s = src_buffers.find(item.key());
    require(s != nullptr, "copy_weights: missing buffer " + item.key());
    item.value().copy_(*s);
  }
}

SeedScope::SeedScope(std::uint64_t seed) {
  auto gen = at::detail::getDefaultCPUGenerator();
  std::lock_guard<std::mutex> lock(gen.mutex());
  saved_state_ = gen.get_state();
  gen.set_current_seed(seed);
}

SeedScope::~SeedScope() {
  auto gen = at::detail::getDefaultCPUGenerator();
  std::lock_guard<std::mutex> lock(gen.mutex());
  gen.set_state(saved_state_);
}

}  // namespace igi

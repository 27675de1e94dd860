#pragma once

#include <torch/torch.h>

namespace igi {

// StyleGAN2-style modulated convolution: per-sample input-channel scaling from a style vector,
// optional weight demodulation, optional 2x bilinear upsampling of the input.
class ModulatedConv2dImpl : public torch::nn::Module {
 public:
  ModulatedConv2dImpl(int in_channels, int out_channels, int kernel, int w_dim, bool upsample, bool demodulate = true);

  // x: B x Cin x H x W, w: B x w_dim
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& w);

  int in_channels() const { return in_channels_; }
  int out_channels() const { return out_channels_; }

 private:
  int in_channels_;
  int out_channels_;
  int kernel_;
  bool upsample_;
  bool demodulate_;
  torch::nn::Linear affine_{nullptr};
  torch::Tensor weight_;
  torch::Tensor bias_;
};
TORCH_MODULE(ModulatedConv2d);

torch::Tensor upsample2x(const torch::Tensor& x);
torch::Tensor downsample2x(const torch::Tensor& x);
torch::Tensor lrelu(const torch::Tensor& x);

torch::nn::Conv2d conv3x3(int in, int out, int stride = 1);
torch::nn::Conv2d conv1x1(int in, int out);
void zero_init(torch::nn::Conv2d& conv);
// Weights drawn from N(0, gain^2 / fan_in), zero bias.
void normal_init(torch::nn::Linear& layer, double gain);
void normal_init(torch::nn::Conv2d& conv, double gain);

// Freeze or unfreeze every parameter of a module.
void set_trainable(torch::nn::Module& module, bool trainable);

// Copy parameters and buffers between modules with identical structure.
void copy_weights(const torch::nn::Module& from, torch::nn::Module& to);

// Seed torch's global generator for the duration of a scope (used around module construction).
class SeedScope {
 public:
  explicit SeedScope(std::uint64_t seed);
  ~SeedScope();
  SeedScope(const SeedScope&) = delete;
  SeedScope& operator=(const SeedScope&) = delete;

 private:
  torch::Tensor saved_state_;
};

}  // namespace igi

#pragma once

#include "igi/config.hpp"
#include "igi/layers.hpp"
#include "igi/rasterizer.hpp"
#include "igi/types.hpp"

namespace igi {

// Channel-split spatial feature transform: the first half of the channels becomes alpha * F + beta,
// the second half passes through. alpha and beta are B x C/2 x H x W.
torch::Tensor apply_cs_sft(const torch::Tensor& features, const torch::Tensor& alpha, const torch::Tensor& beta);

class ELatentImpl : public torch::nn::Module {
 public:
  ELatentImpl(const EncoderConfig& encoder, const GeneratorConfig& generator, int image_resolution,
              const torch::Tensor& w_avg);
  // image: B x 3 x R x R -> W+ code, w_avg plus a learned per-layer delta.
  LatentCode forward(const torch::Tensor& image);

 private:
  int resolution_;
  int layers_;
  int w_dim_;
  torch::nn::Sequential trunk_{nullptr};
  torch::nn::Linear delta_{nullptr};
  torch::Tensor w_avg_;
};
TORCH_MODULE(ELatent);

// Frame-wise activations of the U-Net decoder, coarse to fine. pre[s] is the activation entering
// the last conv of scale s, post[s] = tanh(conv_b(pre[s])) is the map passed to the next scale.
struct UNetFeatures {
  std::vector<torch::Tensor> pre;
  std::vector<torch::Tensor> post;
};

class UNetImpl : public torch::nn::Module {
 public:
  UNetImpl(int in_channels, int resolution, const EncoderConfig& config);
  UNetFeatures forward(const torch::Tensor& x);

  int resolution() const { return resolution_; }
  const std::vector<int>& scale_channels() const { return decoder_channels_; }
  const std::vector<int>& scale_resolutions() const { return scale_resolutions_; }
  torch::nn::Conv2d& conv_b(std::size_t s) { return conv_b_[s]; }

 private:
  int in_channels_;
  int resolution_;
  std::vector<int> decoder_channels_;
  std::vector<int> scale_resolutions_;
  torch::nn::Conv2d stem_{nullptr};
  std::vector<torch::nn::Conv2d> down_;
  std::vector<torch::nn::Conv2d> conv_a_;
  std::vector<torch::nn::Conv2d> conv_b_;
};
TORCH_MODULE(UNet);

// Per-scale 1x1 MLP heads with zero-initialized output layers. An out channel count of 0 leaves
// that scale without a head (its output is an undefined tensor).
class HeadsImpl : public torch::nn::Module {
 public:
  HeadsImpl(const std::vector<int>& in_channels, int hidden, const std::vector<int>& out_channels);
  std::vector<torch::Tensor> forward(const std::vector<torch::Tensor>& maps);

 private:
  std::vector<int> out_channels_;
  std::vector<torch::nn::Sequential> heads_;
};
TORCH_MODULE(Heads);

enum class TexInput { UV, Posed };
enum class TriOutput { SFT, Offsets };

// Refinement produced by an image-to-plane encoder: either CS-SFT maps for g_static or direct
// offsets added to the final static tri-plane (B x 3 x C_p x R_p x R_p).
struct TriRefinement {
  SFTParams sft;
  torch::Tensor plane_offsets;
  bool is_sft() const { return !plane_offsets.defined(); }
};

TexOffsets tex_offsets_from_heads(const std::vector<torch::Tensor>& raw);
TriRefinement tri_refinement_from_heads(const std::vector<torch::Tensor>& raw, TriOutput mode,
                                        const GeneratorConfig& generator);

// Stacked inputs of the texture encoder: UV image (3), UV residual (3) and visibility (1). Texels
// outside the visibility mask are zero.
torch::Tensor tex_inputs(const UVImage& uv_image, const UVImage& uv_residual);
// Image-domain inputs: I and the residual, B x 6 x H x W.
torch::Tensor image_inputs(const torch::Tensor& image, const torch::Tensor& residual);

class ETexImpl : public torch::nn::Module {
 public:
  ETexImpl(const EncoderConfig& encoder, const GeneratorConfig& generator, TexInput input, int image_resolution);
  // UV variant. uv tensors are B x C x Hu x Wu; visibility B x 1 x Hu x Wu.
  TexOffsets forward(const torch::Tensor& inputs);
  TexOffsets decode(const std::vector<torch::Tensor>& maps);
  TexInput input() const { return input_; }

  UNet unet{nullptr};
  Heads heads{nullptr};

 private:
  TexInput input_;
};
TORCH_MODULE(ETex);

class ETriImpl : public torch::nn::Module {
 public:
  ETriImpl(const EncoderConfig& encoder, const GeneratorConfig& generator, TriOutput output, int image_resolution);
  TriRefinement forward(const torch::Tensor& inputs);
  TriRefinement decode(const std::vector<torch::Tensor>& maps);
  TriOutput output() const { return output_; }

  UNet unet{nullptr};
  Heads heads{nullptr};

 private:
  TriOutput output_;
  GeneratorConfig generator_;
};
TORCH_MODULE(ETri);

}  // namespace igi

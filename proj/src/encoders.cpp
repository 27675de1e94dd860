#include "igi/encoders.hpp"

#include "igi/common.hpp"

namespace igi {

torch::Tensor apply_cs_sft(const torch::Tensor& features, const torch::Tensor& alpha, const torch::Tensor& beta) {
  require(features.dim() == 4, "CS-SFT features must be B x C x H x W");
  const int64_t c = features.size(1);
  require(c % 2 == 0, "CS-SFT needs an even channel count");
  const int64_t half = c / 2;
  require(alpha.sizes() == beta.sizes(), "CS-SFT alpha and beta shapes differ");
  require(alpha.dim() == 4 && alpha.size(0) == features.size(0) && alpha.size(1) == half &&
              alpha.size(2) == features.size(2) && alpha.size(3) == features.size(3),
          "CS-SFT maps must be B x C/2 x H x W matching the features");
  const torch::Tensor modulated = alpha * features.narrow(1, 0, half) + beta;
  return torch::cat({modulated, features.narrow(1, half, half)}, 1);
}

ELatentImpl::ELatentImpl(const EncoderConfig& encoder, const GeneratorConfig& generator, int image_resolution,
                         const torch::Tensor& w_avg)
    : resolution_(image_resolution), layers_(generator.style_layers), w_dim_(generator.w_dim) {
  require(image_resolution >= 8 && (image_resolution & (image_resolution - 1)) == 0,
          "latent encoder resolution must be a power of two >= 8");
  trunk_ = torch::nn::Sequential();
  int in = 3;
  int res = image_resolution;
  int c = encoder.latent_channels;
  trunk_->push_back(conv3x3(in, c));
  trunk_->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)));
  in = c;
  while (res > 4) {
    const int out = std::min(2 * in, 2 * encoder.latent_channels);
    trunk_->push_back(conv3x3(in, out, 2));
    trunk_->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)));
    in = out;
    res /= 2;
  }
  trunk_ = register_module("trunk", trunk_);
  delta_ = register_module("delta", torch::nn::Linear(in * 16, layers_ * w_dim_));
  {
    torch::NoGradGuard no_grad;
    delta_->weight.zero_();
    delta_->bias.zero_();
  }
  w_avg_ = register_buffer("w_avg", w_avg.detach().clone());
}

LatentCode ELatentImpl::forward(const torch::Tensor& image) {
  require(image.dim() == 4 && image.size(1) == 3 && image.size(2) == resolution_ && image.size(3) == resolution_,
          "latent encoder expects B x 3 x " + std::to_string(resolution_) + " x " + std::to_string(resolution_));
  const torch::Tensor h = trunk_->forward(image).flatten(1);
  const torch::Tensor d = delta_->forward(h).view({image.size(0), layers_, w_dim_});
  return {w_avg_.view({1, 1, w_dim_}) + d};
}

UNetImpl::UNetImpl(int in_channels, int resolution, const EncoderConfig& config)
    : in_channels_(in_channels), resolution_(resolution), decoder_channels_(config.decoder_channels) {
  const auto& enc = config.unet_channels;
  const std::size_t levels = enc.size();
  require(levels >= 2 && config.decoder_channels.size() == levels - 1,
          "U-Net needs one decoder scale per encoder level above the bottleneck");
  require((resolution >> (levels - 1)) >= 1 && (resolution % (1 << (levels - 1))) == 0,
          "U-Net resolution not divisible by the number of levels");
  stem_ = register_module("stem", conv3x3(in_channels, enc[0]));
  for (std::size_t i = 1; i < levels; ++i)
    down_.push_back(register_module("down" + std::to_string(i), conv3x3(enc[i - 1], enc[i], 2)));
  int prev = enc.back();
  for (std::size_t s = 0; s + 1 < levels; ++s) {
    const int skip = enc[levels - 2 - s];
    const int out = decoder_channels_[s];
    conv_a_.push_back(register_module("conv_a" + std::to_string(s), conv3x3(prev + skip, out)));
    conv_b_.push_back(register_module("conv_b" + std::to_string(s), conv3x3(out, out)));
    scale_resolutions_.push_back(resolution >> (levels - 2 - s));
    prev = out;
  }
}

UNetFeatures UNetImpl::forward(const torch::Tensor& x) {
  require(x.dim() == 4 && x.size(1) == in_channels_ && x.size(2) == resolution_ && x.size(3) == resolution_,
          "U-Net input must be B x " + std::to_string(in_channels_) + " x " + std::to_string(resolution_) + " x " +
              std::to_string(resolution_));
  std::vector<torch::Tensor> skips{lrelu(stem_->forward(x))};
  for (auto& d : down_) skips.push_back(lrelu(d->forward(skips.back())));
  torch::Tensor cur = skips.back();
  UNetFeatures out;
  const std::size_t levels = skips.size();
  for (std::size_t s = 0; s < conv_a_.size(); ++s) {
    const torch::Tensor& skip = skips[levels - 2 - s];
    const torch::Tensor a = lrelu(conv_a_[s]->forward(torch::cat({upsample2x(cur), skip}, 1)));
    cur = torch::tanh(conv_b_[s]->forward(a));
    out.pre.push_back(a);
    out.post.push_back(cur);
  }
  return out;
}

HeadsImpl::HeadsImpl(const std::vector<int>& in_channels, int hidden, const std::vector<int>& out_channels)
    : out_channels_(out_channels) {
  require(in_channels.size() == out_channels.size(), "heads: one output count per scale");
  for (std::size_t s = 0; s < in_channels.size(); ++s) {
    torch::nn::Sequential head{nullptr};
    if (out_channels[s] > 0) {
      torch::nn::Conv2d last = conv1x1(hidden, out_channels[s]);
      zero_init(last);
      head = torch::nn::Sequential(conv1x1(in_channels[s], hidden),
                                   torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)), last);
      register_module("head" + std::to_string(s), head);
    }
    heads_.push_back(head);
  }
}

std::vector<torch::Tensor> HeadsImpl::forward(const std::vector<torch::Tensor>& maps) {
  require(maps.size() == heads_.size(), "heads: scale count mismatch");
  std::vector<torch::Tensor> out;
  for (std::size_t s = 0; s < maps.size(); ++s)
    out.push_back(heads_[s].is_empty() ? torch::Tensor() : heads_[s]->forward(maps[s]));
  return out;
}

TexOffsets tex_offsets_from_heads(const std::vector<torch::Tensor>& raw) { return {raw}; }

TriRefinement tri_refinement_from_heads(const std::vector<torch::Tensor>& raw, TriOutput mode,
                                        const GeneratorConfig& generator) {
  TriRefinement r;
  if (mode == TriOutput::SFT) {
    for (const auto& h : raw) {
      const int64_t half = h.size(1) / 2;
      r.sft.alpha.push_back(1.0 + h.narrow(1, 0, half));
      r.sft.beta.push_back(h.narrow(1, half, half));
    }
  } else {
    const torch::Tensor& h = raw.back();
    const int64_t res = generator.plane_resolution;
    r.plane_offsets = h.view({h.size(0), 3, generator.plane_channels, res, res});
  }
  return r;
}

torch::Tensor tex_inputs(const UVImage& uv_image, const UVImage& uv_residual) {
  torch::Tensor vis = uv_image.visibility;
  if (vis.dim() == uv_image.data.dim() - 1) vis = vis.unsqueeze(-3);
  return torch::cat({uv_image.data, uv_residual.data, vis.to(uv_image.data.dtype())}, -3);
}

torch::Tensor image_inputs(const torch::Tensor& image, const torch::Tensor& residual) {
  require(image.sizes() == residual.sizes(), "image and residual shapes differ");
  return torch::cat({image, residual}, -3);
}

ETexImpl::ETexImpl(const EncoderConfig& encoder, const GeneratorConfig& generator, TexInput input,
                   int image_resolution)
    : input_(input) {
  const int channels = input == TexInput::UV ? 7 : 6;
  const int res = input == TexInput::UV ? encoder.uv_resolution : image_resolution;
  unet = register_module("unet", UNet(channels, res, encoder));
  require(unet->scale_resolutions() == generator.tex_resolutions,
          "texture encoder scales must equal the neural texture resolutions");
  heads = register_module("heads", Heads(unet->scale_channels(), encoder.head_hidden, generator.tex_channels));
}

TexOffsets ETexImpl::forward(const torch::Tensor& inputs) { return decode(unet->forward(inputs).post); }

TexOffsets ETexImpl::decode(const std::vector<torch::Tensor>& maps) { return tex_offsets_from_heads(heads->forward(maps)); }

ETriImpl::ETriImpl(const EncoderConfig& encoder, const GeneratorConfig& generator, TriOutput output,
                   int image_resolution)
    : output_(output), generator_(generator) {
  unet = register_module("unet", UNet(6, image_resolution, encoder));
  const std::vector<int>& res = unet->scale_resolutions();
  std::vector<int> outs(res.size(), 0);
  if (output == TriOutput::SFT) {
    // The static branch modulates at its upsampling outputs, which share the U-Net scale ladder.
    require(res.size() == generator.static_channels.size(), "tri encoder scales must match static modulation points");
    for (std::size_t s = 0; s < res.size(); ++s) {
      require(res[s] == generator.plane_resolution >> (res.size() - 1 - s),
              "tri encoder scale resolution does not match the static modulation point");
      outs[s] = generator.static_channels[s];
    }
  } else {
    require(res.back() == generator.plane_resolution, "finest tri encoder scale must equal the plane resolution");
    outs.back() = 3 * generator.plane_channels;
  }
  heads = register_module("heads", Heads(unet->scale_channels(), encoder.head_hidden, outs));
}

TriRefinement ETriImpl::forward(const torch::Tensor& inputs) { return decode(unet->forward(inputs).post); }

TriRefinement ETriImpl::decode(const std::vector<torch::Tensor>& maps) {
  return tri_refinement_from_heads(heads->forward(maps), output_, generator_);
}

}  // namespace igi

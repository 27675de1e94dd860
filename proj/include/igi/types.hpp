#pragma once

#include <torch/torch.h>

#include <vector>

namespace igi {

// W+ code, B x L x D.
struct LatentCode {
  torch::Tensor wplus;
  int64_t batch() const { return wplus.size(0); }
};

// Multi-scale UV feature grids, each B x C_s x R_s x R_s with increasing R_s.
struct NeuralTexture {
  std::vector<torch::Tensor> scales;
};

// Per-scale offsets with the same shapes as a NeuralTexture.
struct TexOffsets {
  std::vector<torch::Tensor> scales;
};

// Three axis-aligned feature planes, B x 3 x C_p x R_p x R_p, ordered (xy, xz, yz).
struct TriPlane {
  torch::Tensor planes;
};

// Per-scale CS-SFT modulation maps at the g_static modulation points, each B x C/2 x R x R.
struct SFTParams {
  std::vector<torch::Tensor> alpha;
  std::vector<torch::Tensor> beta;
  std::size_t size() const { return alpha.size(); }
};

struct RenderOutput {
  torch::Tensor raw;    // B x C_r x H x W neural features; channels 0..2 are color
  torch::Tensor rgb;    // B x 3 x H x W in [0,1]
  torch::Tensor alpha;  // B x H x W in [0,1]
  torch::Tensor depth;  // B x H x W, expected ray depth in world units (0 where alpha is 0)
};

inline NeuralTexture add_offsets(const NeuralTexture& tex, const TexOffsets& offsets) {
  NeuralTexture out;
  for (std::size_t s = 0; s < tex.scales.size(); ++s) out.scales.push_back(tex.scales[s] + offsets.scales[s]);
  return out;
}

}  // namespace igi

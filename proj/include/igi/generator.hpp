#pragma once

#include "igi/config.hpp"
#include "igi/facemodel.hpp"
#include "igi/layers.hpp"
#include "igi/rasterizer.hpp"
#include "igi/types.hpp"

#include <functional>
#include <optional>

namespace igi {

// Front-plane rasterization of the deformed head at every texture scale. Depends only on
// FaceParams, so it is cached per frame and reused across renders.
struct FrameGeometry {
  std::vector<Fragments> scales;
};

FrameGeometry make_frame_geometry(const Mesh& deformed, const GeneratorConfig& config);

// Rasterize each texture scale with per-sample geometry. Returns data B x C x R x R and
// mask B x 1 x R x R per scale.
std::vector<FeatureImage> rasterize_scales(const NeuralTexture& texture, const std::vector<const FrameGeometry*>& geometry);

struct FaceFeatures {
  torch::Tensor features;  // B x C_p x R_p x R_p front-plane features
  torch::Tensor coverage;  // B x 1 x R_p x R_p finest rasterization mask
};

struct DecodedField {
  torch::Tensor sigma;  // B x N, non-negative
  torch::Tensor color;  // B x N x C_r
};
// Maps summed tri-plane features (B x N x C_p) at points (B x N x 3) to density and features.
using FieldDecoder = std::function<DecodedField(const torch::Tensor& features, const torch::Tensor& points)>;

struct RenderOptions {
  int samples_per_ray = 24;
  double box_half_extent = 0.65;
};

struct RayBundle {
  torch::Tensor origins;     // B x HW x 3
  torch::Tensor directions;  // B x HW x 3, unit length
  torch::Tensor near;        // B x HW (0 for rays that miss the box)
  torch::Tensor far;         // B x HW
};

RayBundle make_rays(const std::vector<Camera>& cameras, double box_half_extent, torch::TensorOptions options);

// Sum of bilinear samples of the xy, xz and yz planes at points (B x N x 3) -> B x N x C.
torch::Tensor sample_triplane(const TriPlane& planes, const torch::Tensor& points, double box_half_extent);

// Midpoint ray marching through the bounding box with alpha compositing.
RenderOutput render_planes(const TriPlane& planes, const std::vector<Camera>& cameras, const RenderOptions& options,
                           const FieldDecoder& decoder);

// Small MLP from point features to (density logit, C_r features) with an analytic density prior
// that is positive inside the head ellipsoid and negative outside.
class TriPlaneDecoderImpl : public torch::nn::Module {
 public:
  TriPlaneDecoderImpl(int in_channels, int hidden, int raw_channels, std::vector<double> head_radii,
                      double shell_sharpness);
  DecodedField forward(const torch::Tensor& features, const torch::Tensor& points);

 private:
  torch::nn::Linear fc1_{nullptr};
  torch::nn::Linear fc2_{nullptr};
  std::vector<double> head_radii_;
  double shell_sharpness_;
};
TORCH_MODULE(TriPlaneDecoder);

class MappingNetworkImpl : public torch::nn::Module {
 public:
  MappingNetworkImpl(int w_dim, int layers);
  torch::Tensor forward(const torch::Tensor& z);

 private:
  torch::nn::ModuleList layers_;
};
TORCH_MODULE(MappingNetwork);

class TextureBranchImpl : public torch::nn::Module {
 public:
  explicit TextureBranchImpl(const GeneratorConfig& config);
  NeuralTexture forward(const LatentCode& w);

 private:
  torch::Tensor const_;
  std::vector<ModulatedConv2d> convs_;
  std::vector<torch::nn::Conv2d> to_tex_;
};
TORCH_MODULE(TextureBranch);

class StaticBranchImpl : public torch::nn::Module {
 public:
  explicit StaticBranchImpl(const GeneratorConfig& config);
  TriPlane forward(const LatentCode& w, const SFTParams* sft = nullptr);
  // Spatial resolution and channel count of the modulated features at each CS-SFT point.
  const std::vector<int>& modulation_resolutions() const { return resolutions_; }
  const std::vector<int>& modulation_channels() const { return channels_; }

 private:
  GeneratorConfig config_;
  torch::Tensor const_;
  std::vector<ModulatedConv2d> convs_;
  torch::nn::Conv2d to_planes_{nullptr};
  std::vector<int> resolutions_;
  std::vector<int> channels_;
};
TORCH_MODULE(StaticBranch);

// Face synthesis module: modulated conv stack whose features at each texture scale are alpha-blended
// with the rasterized neural texture of that scale before the next layer.
class FaceBranchImpl : public torch::nn::Module {
 public:
  explicit FaceBranchImpl(const GeneratorConfig& config);
  FaceFeatures forward(const std::vector<FeatureImage>& rasterized, const LatentCode& w);
  // Same pass, also returning the post-blend features at every scale.
  FaceFeatures forward_trace(const std::vector<FeatureImage>& rasterized, const LatentCode& w,
                             std::vector<torch::Tensor>* post_blend);

 private:
  GeneratorConfig config_;
  torch::Tensor const_;
  std::vector<ModulatedConv2d> convs_;
  ModulatedConv2d out_conv_{nullptr};
};
TORCH_MODULE(FaceBranch);

// mask * texture + (1 - mask) * features, per pixel.
torch::Tensor alpha_blend(const torch::Tensor& features, const torch::Tensor& texture, const torch::Tensor& mask);

class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(const GeneratorConfig& config);

  const GeneratorConfig& config() const { return config_; }

  torch::Tensor map(const torch::Tensor& z);
  // B identities: W codes broadcast to all style layers.
  LatentCode sample_latent(int64_t batch, std::uint64_t seed);
  LatentCode mean_latent(int64_t batch = 1) const;
  LatentCode broadcast(const torch::Tensor& w) const;

  NeuralTexture g_tex(const LatentCode& w);
  TriPlane g_static(const LatentCode& w, const SFTParams* sft = nullptr);
  FaceFeatures g_face(const std::vector<FeatureImage>& rasterized, const LatentCode& w);
  TriPlane compose(const FaceFeatures& face, const TriPlane& static_planes) const;
  RenderOutput render(const TriPlane& planes, const std::vector<Camera>& cameras,
                      std::optional<int> samples_per_ray = std::nullopt);

  // Render from canonical features: rasterize the texture with the frame geometry, run g_face,
  // compose with the static planes and volume-render.
  RenderOutput render_features(const LatentCode& w, const NeuralTexture& texture, const TriPlane& static_planes,
                               const std::vector<const FrameGeometry*>& geometry, const std::vector<Camera>& cameras);

  // Full forward pass from a latent code.
  RenderOutput synthesize(const LatentCode& w, const std::vector<const FrameGeometry*>& geometry,
                          const std::vector<Camera>& cameras, const TexOffsets* tex_offsets = nullptr,
                          const SFTParams* sft = nullptr);

  FieldDecoder field_decoder();

  MappingNetwork mapping{nullptr};
  TextureBranch texture{nullptr};
  StaticBranch statics{nullptr};
  FaceBranch face{nullptr};
  TriPlaneDecoder decoder{nullptr};

 private:
  GeneratorConfig config_;
  torch::Tensor w_avg_;
};
TORCH_MODULE(Generator);

}  // namespace igi

#pragma once

#include "igi/facemodel.hpp"

#include <torch/torch.h>

namespace igi {

// C x H x W features with H x W coverage. Rasterizer outputs are zero wherever mask is zero.
struct FeatureImage {
  torch::Tensor data;
  torch::Tensor mask;
};

// C x Hu x Wu grid over the UV square; data is zero wherever visibility is zero.
struct UVImage {
  torch::Tensor data;
  torch::Tensor visibility;
};

// Orthographic view of the frontal tri-plane (the xy plane seen from +z). Pixel column i covers
// x in [-h + 2h*i/R, -h + 2h*(i+1)/R], row j covers y likewise, matching tri-plane sampling.
struct PlaneView {
  double half_extent = 0.65;
  int resolution = 32;
};

// Per-pixel surface lookup produced by a z-buffered triangle scan.
struct Fragments {
  torch::Tensor uv;        // H x W x 2 (float64), texture coordinates at the visible surface
  torch::Tensor mask;      // H x W (float64), 1 where a triangle covers the pixel center
  torch::Tensor face;      // H x W (int64), covering face index or -1
  torch::Tensor depth;     // H x W (float64), depth of the visible surface (0 when uncovered)
  torch::Tensor bary;      // H x W x 3 (float64), perspective-correct barycentrics
  int height() const { return static_cast<int>(uv.size(0)); }
  int width() const { return static_cast<int>(uv.size(1)); }
};

Fragments rasterize_fragments(const Mesh& mesh, const Camera& camera);
Fragments rasterize_fragments(const Mesh& mesh, const PlaneView& view);
// Scan of the mesh in its own UV domain (texel centers), used to locate surface points of texels.
Fragments rasterize_uv_domain(const Mesh& mesh, int uv_height, int uv_width);

// Bilinear lookup of a C x Hu x Wu (or B x C x Hu x Wu) texture at fragment UVs; differentiable in
// the texture. Output has the texture's dtype and leading shape.
FeatureImage sample_texture(const torch::Tensor& texture, const Fragments& fragments);

// Batched lookup: texture B x C x Hu x Wu, one fragment set per batch element (same resolution).
// Returns data B x C x H x W and mask B x 1 x H x W.
FeatureImage sample_texture_batch(const torch::Tensor& texture, const std::vector<const Fragments*>& fragments);

FeatureImage rasterize(const Mesh& mesh, const torch::Tensor& texture, const Camera& camera);
FeatureImage rasterize(const Mesh& mesh, const torch::Tensor& texture, const PlaneView& view);

// Default depth tolerance for the occlusion test: 1e-3 of the scene radius (camera distance).
double default_depth_tolerance(const Camera& camera);

// Precomputed texel -> image lookup for one (mesh, camera) pair. Applying it to several images of
// the same frame avoids repeating the geometric work.
struct UVProjector {
  torch::Tensor grid;        // 1 x Hu x Wu x 2 normalized image coordinates for grid_sample
  torch::Tensor visibility;  // Hu x Wu in {0,1}
  int uv_height = 0;
  int uv_width = 0;

  // image: C x H x W or B x C x H x W. Returns data masked by visibility.
  torch::Tensor apply(const torch::Tensor& image) const;
};

// coverage: optional H x W mask of valid image pixels; texels whose bilinear footprint touches an
// uncovered pixel are marked invisible.
UVProjector make_uv_projector(const Mesh& mesh, const Camera& camera, int uv_resolution, double depth_tolerance,
                              const torch::Tensor& coverage = {});

UVImage project_to_uv(const FeatureImage& image, const Mesh& mesh, const Camera& camera, int uv_resolution,
                      double depth_tolerance);
UVImage project_to_uv(const FeatureImage& image, const Mesh& mesh, const Camera& camera, int uv_resolution);

}  // namespace igi

#pragma once

#include "igi/pipeline.hpp"

#include <random>

namespace igi {

// Smooth per-identity motion: sinusoidal yaw, pitch and expression tracks, constant shape.
struct FrameSpec {
  FaceParams params;
  double yaw = 0.0;
  double pitch = 0.0;
};
std::vector<FrameSpec> sample_trajectory(std::mt19937_64& rng, const FaceModel& face, const CameraConfig& camera,
                                         int n_frames);

struct SyntheticFrame {
  FaceParams params;
  Camera camera;
  torch::Tensor image;  // 3 x H x W ground truth
  torch::Tensor raw;    // C_r x H x W ground truth I_raw
  FrameGeometry geometry;
  UVProjector projector;
  torch::Tensor coarse;  // 3 x H x W render of the coarse avatar from frame 0 (set after stage 1)
};

struct SyntheticSample {
  std::uint64_t seed = 0;
  LatentCode w;           // 1 x L x D
  NeuralTexture tex;      // ground-truth F_tex, batch 1
  TriPlane tri;           // ground-truth static planes, batch 1
  LatentCode coarse_latent;  // E_latent code of frame 0 (set after stage 1)
  std::vector<SyntheticFrame> frames;
};

// Identity w from the mapping of a unit Gaussian, a trajectory, and all ground truths rendered by
// the frozen generator. Deterministic in seed.
SyntheticSample sample_synthetic_identity(World& world, std::uint64_t seed, int n_frames);

struct SyntheticDataset {
  std::vector<SyntheticSample> identities;
  int size() const { return static_cast<int>(identities.size()); }
};
SyntheticDataset make_dataset(World& world, std::uint64_t base_seed, int count, int n_frames);

// Render every frame of every identity with the coarse avatar from that identity's frame 0.
void cache_coarse_renders(World& world, ELatentImpl& latent, SyntheticDataset& data);

// Evenly spaced source indices in [0, span): floor(i * span / n).
std::vector<int> even_sources(int n, int span);

// Landmark contour map (1 x H x W): pixels within 0.75 px of a contour segment are 1.
torch::Tensor landmark_map(const Landmarks2d& landmarks, int height, int width);

// Separable Gaussian blur of B x C x H x W images; sigma <= 0 returns the input.
torch::Tensor gaussian_blur(const torch::Tensor& images, double sigma);

// Procedural "photographs" for the GAN prior stage: the deformed head rasterized with a per-identity
// albedo texture, Lambertian shading and a white background.
torch::Tensor procedural_albedo(std::mt19937_64& rng, const FaceModel& face, int resolution);
torch::Tensor procedural_image(const FaceModel& face, const FaceParams& params, const Camera& camera,
                               const torch::Tensor& albedo);

}  // namespace igi

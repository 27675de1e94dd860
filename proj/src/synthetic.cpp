#include "igi/synthetic.hpp"

#include "igi/common.hpp"

#include <cmath>
#include <numbers>

namespace igi {

namespace F = torch::nn::functional;

std::vector<FrameSpec> sample_trajectory(std::mt19937_64& rng, const FaceModel& face, const CameraConfig& camera,
                                         int n_frames) {
  require(n_frames >= 1, "a trajectory needs at least one frame");
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> cycles(0.4, 1.2);
  std::uniform_real_distribution<double> amp(0.5, 1.0);

  struct Track {
    double amplitude, frequency, phase;
    double at(double t) const { return amplitude * std::sin(2.0 * std::numbers::pi * frequency * t + phase); }
  };
  auto track = [&](double scale) { return Track{scale * amp(rng), cycles(rng), phase(rng)}; };

  std::vector<double> shape(face.shape_dims());
  for (double& s : shape) s = unit(rng);
  const Track yaw = track(camera.yaw_range);
  const Track pitch = track(camera.pitch_range);
  std::vector<Track> expr;
  for (int k = 0; k < face.expression_dims(); ++k) expr.push_back(track(0.9));

  std::vector<FrameSpec> out;
  for (int i = 0; i < n_frames; ++i) {
    const double t = static_cast<double>(i) / n_frames;
    FrameSpec f;
    f.params.shape = shape;
    for (const auto& e : expr) f.params.expression.push_back(e.at(t));
    f.yaw = yaw.at(t);
    f.pitch = pitch.at(t);
    out.push_back(std::move(f));
  }
  return out;
}

SyntheticSample sample_synthetic_identity(World& world, std::uint64_t seed, int n_frames) {
  torch::NoGradGuard no_grad;
  SyntheticSample s;
  s.seed = seed;
  s.w = world.generator->sample_latent(1, seed);
  s.tex = world.generator->g_tex(s.w);
  s.tri = world.generator->g_static(s.w);
  std::mt19937_64 rng(seed * 7919 + 13);
  const auto specs = sample_trajectory(rng, world.face, world.config.camera, n_frames);
  for (const auto& spec : specs) {
    SyntheticFrame f;
    f.params = spec.params;
    f.camera = world.camera(spec.yaw, spec.pitch);
    const Mesh mesh = world.face.deform(f.params);
    f.geometry = make_frame_geometry(mesh, world.config.generator);
    f.projector = make_uv_projector(mesh, f.camera, world.config.encoders.uv_resolution,
                                    default_depth_tolerance(f.camera));
    s.frames.push_back(std::move(f));
  }
  constexpr std::size_t kChunk = 8;
  for (std::size_t begin = 0; begin < s.frames.size(); begin += kChunk) {
    const std::size_t end = std::min(s.frames.size(), begin + kChunk);
    std::vector<const FrameGeometry*> geoms;
    std::vector<Camera> cams;
    for (std::size_t i = begin; i < end; ++i) {
      geoms.push_back(&s.frames[i].geometry);
      cams.push_back(s.frames[i].camera);
    }
    const auto n = static_cast<int64_t>(end - begin);
    const LatentCode w{s.w.wplus.expand({n, -1, -1})};
    const NeuralTexture tex{[&] {
      std::vector<torch::Tensor> v;
      for (const auto& t : s.tex.scales) v.push_back(t.expand({n, -1, -1, -1}));
      return v;
    }()};
    const TriPlane tri{s.tri.planes.expand({n, -1, -1, -1, -1})};
    const RenderOutput r = world.generator->render_features(w, tex, tri, geoms, cams);
    for (std::size_t i = begin; i < end; ++i) {
      s.frames[i].image = r.rgb[static_cast<int64_t>(i - begin)].clone();
      s.frames[i].raw = r.raw[static_cast<int64_t>(i - begin)].clone();
    }
  }
  return s;
}

SyntheticDataset make_dataset(World& world, std::uint64_t base_seed, int count, int n_frames) {
  SyntheticDataset d;
  for (int i = 0; i < count; ++i) d.identities.push_back(sample_synthetic_identity(world, base_seed + i, n_frames));
  return d;
}

void cache_coarse_renders(World& world, ELatentImpl& latent, SyntheticDataset& data) {
  torch::NoGradGuard no_grad;
  for (auto& id : data.identities) {
    const LatentCode w = latent.forward(id.frames.front().image.unsqueeze(0));
    id.coarse_latent = w;
    const CoarseFeatures coarse = coarse_features(world, w);
    constexpr std::size_t kChunk = 8;
    for (std::size_t begin = 0; begin < id.frames.size(); begin += kChunk) {
      const std::size_t end = std::min(id.frames.size(), begin + kChunk);
      const auto n = static_cast<int64_t>(end - begin);
      std::vector<const FrameGeometry*> geoms;
      std::vector<Camera> cams;
      for (std::size_t i = begin; i < end; ++i) {
        geoms.push_back(&id.frames[i].geometry);
        cams.push_back(id.frames[i].camera);
      }
      std::vector<torch::Tensor> tex;
      for (const auto& t : coarse.texture.scales) tex.push_back(t.expand({n, -1, -1, -1}));
      const RenderOutput r = world.generator->render_features(
          LatentCode{w.wplus.expand({n, -1, -1})}, NeuralTexture{tex},
          TriPlane{coarse.static_planes.planes.expand({n, -1, -1, -1, -1})}, geoms, cams);
      for (std::size_t i = begin; i < end; ++i) id.frames[i].coarse = r.rgb[static_cast<int64_t>(i - begin)].clone();
    }
  }
}

std::vector<int> even_sources(int n, int span) {
  require(n >= 1 && span >= 1, "even_sources needs n, span >= 1");
  std::vector<int> idx;
  for (int i = 0; i < n; ++i) idx.push_back(static_cast<int>(std::floor(static_cast<double>(i) * span / n)));
  return idx;
}

torch::Tensor landmark_map(const Landmarks2d& landmarks, int height, int width) {
  std::vector<float> img(static_cast<std::size_t>(height) * width, 0.0f);
  auto segment = [&](const Vec2& a, const Vec2& b) {
    const Vec2 ab = b - a;
    const double len2 = std::max(ab.squaredNorm(), 1e-12);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const Vec2 p(x + 0.5, y + 0.5);
        const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
        if ((a + t * ab - p).norm() <= 0.75) img[static_cast<std::size_t>(y) * width + x] = 1.0f;
      }
    }
  };
  for (const auto& contour : FaceModel::landmark_contours()) {
    for (std::size_t k = 0; k + 1 < contour.size(); ++k) {
      const int i = contour[k], j = contour[k + 1];
      if (!landmarks.valid[i] || !landmarks.valid[j]) continue;
      segment(landmarks.points.row(i).transpose(), landmarks.points.row(j).transpose());
    }
  }
  return torch::from_blob(img.data(), {1, height, width}, torch::kFloat32).clone();
}

torch::Tensor gaussian_blur(const torch::Tensor& images, double sigma) {
  if (sigma <= 0.0) return images;
  const int radius = std::max(1, static_cast<int>(std::ceil(2.5 * sigma)));
  const torch::Tensor x = torch::arange(-radius, radius + 1, images.options().requires_grad(false));
  torch::Tensor k = torch::exp(-x.pow(2) / (2.0 * sigma * sigma));
  k = k / k.sum();
  const int64_t c = images.size(1);
  const torch::Tensor kx = k.view({1, 1, 1, -1}).expand({c, 1, 1, -1}).contiguous();
  const torch::Tensor ky = k.view({1, 1, -1, 1}).expand({c, 1, -1, 1}).contiguous();
  torch::Tensor out = F::pad(images, F::PadFuncOptions({radius, radius, radius, radius}).mode(torch::kReplicate));
  out = F::conv2d(out, kx, F::Conv2dFuncOptions().groups(c));
  out = F::conv2d(out, ky, F::Conv2dFuncOptions().groups(c));
  return out;
}

torch::Tensor procedural_albedo(std::mt19937_64& rng, const FaceModel& face, int resolution) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double tone = 0.45 + 0.45 * u01(rng);
  const Vec3 skin(tone, tone * (0.72 + 0.1 * u01(rng)), tone * (0.55 + 0.15 * u01(rng)));
  const Vec3 dark(0.15 * u01(rng), 0.1 * u01(rng), 0.08 + 0.1 * u01(rng));
  const Vec3 lips(0.55 + 0.3 * u01(rng), 0.2 + 0.1 * u01(rng), 0.25 + 0.1 * u01(rng));
  struct Blob {
    int landmark;
    const Vec3* color;
    double radius;
  };
  const std::vector<Blob> blobs = {{3, &dark, 0.03}, {4, &dark, 0.03},  {9, &dark, 0.025}, {10, &dark, 0.025},
                                   {12, &lips, 0.03}, {14, &lips, 0.03}, {11, &lips, 0.02}, {13, &lips, 0.02}};
  const Mesh& base = face.base();
  std::vector<float> data(3 * static_cast<std::size_t>(resolution) * resolution);
  for (int y = 0; y < resolution; ++y) {
    for (int x = 0; x < resolution; ++x) {
      const Vec2 uv((x + 0.5) / resolution, (y + 0.5) / resolution);
      Vec3 c = skin;
      for (const auto& b : blobs) {
        const Vec2 centre = base.texcoord(base.landmark_indices[b.landmark]);
        const double wgt = std::exp(-(uv - centre).squaredNorm() / (2.0 * b.radius * b.radius));
        c = (1.0 - wgt) * c + wgt * *b.color;
      }
      for (int k = 0; k < 3; ++k)
        data[(static_cast<std::size_t>(k) * resolution + y) * resolution + x] = static_cast<float>(c[k]);
    }
  }
  return torch::from_blob(data.data(), {3, resolution, resolution}, torch::kFloat32).clone();
}

torch::Tensor procedural_image(const FaceModel& face, const FaceParams& params, const Camera& camera,
                               const torch::Tensor& albedo) {
  const Mesh mesh = face.deform(params);
  const Fragments frags = rasterize_fragments(mesh, camera);
  const FeatureImage sampled = sample_texture(albedo, frags);
  const int h = camera.height(), w = camera.width();
  const Vec3 light = Vec3(0.3, 0.5, 1.0).normalized();
  std::vector<float> shade(static_cast<std::size_t>(h) * w, 0.0f);
  const auto face_idx = frags.face.accessor<std::int64_t, 2>();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::int64_t f = face_idx[y][x];
      if (f < 0) continue;
      const Vec3 n = mesh.face_normal(static_cast<int>(f)).normalized();
      shade[static_cast<std::size_t>(y) * w + x] = static_cast<float>(0.35 + 0.65 * std::max(0.0, n.dot(light)));
    }
  }
  const torch::Tensor s = torch::from_blob(shade.data(), {1, h, w}, torch::kFloat32).clone().to(albedo.dtype());
  const torch::Tensor mask = sampled.mask.to(albedo.dtype()).unsqueeze(0);
  return (sampled.data * s + (1.0 - mask)).clamp(0.0, 1.0);
}

}  // namespace igi

#include "igi/generator.hpp"

#include "igi/common.hpp"
#include "igi/encoders.hpp"

#include <algorithm>
#include <cmath>

namespace igi {

namespace F = torch::nn::functional;

namespace {

// Init gains of the world generator: large enough that identities differ visibly at random init.
constexpr double kMappingGain = 1.41421356;
constexpr double kOutputGain = 2.0;
constexpr double kDecoderGain = 2.0;

// Style layer used by a branch at texture level s: texture and face use even layers, the static
// branch uses odd ones.
torch::Tensor style_at(const LatentCode& w, int layer) {
  const int64_t last = w.wplus.size(1) - 1;
  return w.wplus.select(1, std::min<int64_t>(layer, last));
}

}  // namespace

FrameGeometry make_frame_geometry(const Mesh& deformed, const GeneratorConfig& config) {
  FrameGeometry g;
  for (int res : config.tex_resolutions)
    g.scales.push_back(rasterize_fragments(deformed, PlaneView{config.box_half_extent, res}));
  return g;
}

std::vector<FeatureImage> rasterize_scales(const NeuralTexture& texture,
                                           const std::vector<const FrameGeometry*>& geometry) {
  std::vector<FeatureImage> out;
  for (std::size_t s = 0; s < texture.scales.size(); ++s) {
    std::vector<const Fragments*> frags;
    for (const FrameGeometry* g : geometry) {
      require(g != nullptr && g->scales.size() == texture.scales.size(), "frame geometry scale count mismatch");
      frags.push_back(&g->scales[s]);
    }
    out.push_back(sample_texture_batch(texture.scales[s], frags));
  }
  return out;
}

RayBundle make_rays(const std::vector<Camera>& cameras, double box_half_extent, torch::TensorOptions options) {
  require(!cameras.empty(), "at least one camera is required");
  const int h = cameras.front().height(), w = cameras.front().width();
  const auto batch = static_cast<int64_t>(cameras.size());
  const int64_t n = static_cast<int64_t>(h) * w;
  std::vector<double> o(batch * n * 3), d(batch * n * 3), tn(batch * n, 0.0), tf(batch * n, 0.0);
  for (int64_t b = 0; b < batch; ++b) {
    const Camera& cam = cameras[b];
    require(cam.height() == h && cam.width() == w, "all cameras in a batch must share a resolution");
    const Vec3 origin = cam.position();
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int64_t i = b * n + static_cast<int64_t>(y) * w + x;
        const Vec3 dir = cam.ray_direction(x + 0.5, y + 0.5);
        double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
        bool hit = true;
        for (int a = 0; a < 3 && hit; ++a) {
          if (std::abs(dir[a]) < 1e-12) {
            hit = std::abs(origin[a]) <= box_half_extent;
            continue;
          }
          double ta = (-box_half_extent - origin[a]) / dir[a];
          double tb = (box_half_extent - origin[a]) / dir[a];
          if (ta > tb) std::swap(ta, tb);
          t0 = std::max(t0, ta);
          t1 = std::min(t1, tb);
          hit = t0 < t1;
        }
        for (int k = 0; k < 3; ++k) {
          o[3 * i + k] = origin[k];
          d[3 * i + k] = dir[k];
        }
        if (hit) {
          tn[i] = t0;
          tf[i] = t1;
        }
      }
    }
  }
  auto f64 = torch::TensorOptions().dtype(torch::kFloat64);
  RayBundle rays;
  rays.origins = torch::from_blob(o.data(), {batch, n, 3}, f64).to(options, /*non_blocking=*/false, /*copy=*/true);
  rays.directions = torch::from_blob(d.data(), {batch, n, 3}, f64).to(options, /*non_blocking=*/false, /*copy=*/true);
  rays.near = torch::from_blob(tn.data(), {batch, n}, f64).to(options, /*non_blocking=*/false, /*copy=*/true);
  rays.far = torch::from_blob(tf.data(), {batch, n}, f64).to(options, /*non_blocking=*/false, /*copy=*/true);
  return rays;
}

torch::Tensor sample_triplane(const TriPlane& planes, const torch::Tensor& points, double box_half_extent) {
  const torch::Tensor p = points / box_half_extent;
  const std::array<std::array<int64_t, 2>, 3> axes{{{0, 1}, {0, 2}, {1, 2}}};
  torch::Tensor sum;
  for (int k = 0; k < 3; ++k) {
    const torch::Tensor grid =
        torch::stack({p.select(-1, axes[k][0]), p.select(-1, axes[k][1])}, -1).unsqueeze(1);  // B x 1 x N x 2
    const torch::Tensor s = F::grid_sample(
        planes.planes.select(1, k), grid,
        F::GridSampleFuncOptions().mode(torch::kBilinear).padding_mode(torch::kZeros).align_corners(false));
    sum = k == 0 ? s : sum + s;
  }
  return sum.squeeze(2).transpose(1, 2);  // B x N x C
}

RenderOutput render_planes(const TriPlane& planes, const std::vector<Camera>& cameras, const RenderOptions& options,
                           const FieldDecoder& decoder) {
  require(options.samples_per_ray >= 2, "samples_per_ray must be >= 2");
  require(planes.planes.dim() == 5 && planes.planes.size(1) == 3, "tri-plane must be B x 3 x C x R x R");
  require(static_cast<std::size_t>(planes.planes.size(0)) == cameras.size(), "one camera per tri-plane");
  const auto opts = planes.planes.options();
  const RayBundle rays = make_rays(cameras, options.box_half_extent, opts.requires_grad(false));
  const int64_t batch = planes.planes.size(0);
  const int64_t n = rays.near.size(1);
  const int64_t s = options.samples_per_ray;
  const int h = cameras.front().height(), w = cameras.front().width();

  const torch::Tensor span = rays.far - rays.near;                                        // B x N
  const torch::Tensor steps = (torch::arange(s, opts.requires_grad(false)) + 0.5) / double(s);  // S
  const torch::Tensor t = rays.near.unsqueeze(-1) + span.unsqueeze(-1) * steps;           // B x N x S
  const torch::Tensor delta = (span / double(s)).unsqueeze(-1);                           // B x N x 1
  const torch::Tensor points = rays.origins.unsqueeze(2) + t.unsqueeze(-1) * rays.directions.unsqueeze(2);

  const torch::Tensor flat_points = points.reshape({batch, n * s, 3});
  const torch::Tensor features = sample_triplane(planes, flat_points, options.box_half_extent);
  const DecodedField field = decoder(features, flat_points);
  const torch::Tensor sigma = field.sigma.reshape({batch, n, s});
  const torch::Tensor color = field.color.reshape({batch, n, s, -1});

  const torch::Tensor optical = sigma * delta;
  const torch::Tensor alpha_i = 1.0 - torch::exp(-optical);
  const torch::Tensor transmittance = torch::exp(-(torch::cumsum(optical, -1) - optical));
  const torch::Tensor weights = transmittance * alpha_i;  // B x N x S

  RenderOutput out;
  const torch::Tensor raw = (weights.unsqueeze(-1) * color).sum(2);  // B x N x C
  out.raw = raw.transpose(1, 2).reshape({batch, -1, h, w});
  const torch::Tensor alpha = weights.sum(-1);
  out.alpha = alpha.reshape({batch, h, w});
  const torch::Tensor depth = (weights * t).sum(-1) / alpha.clamp_min(1e-10);
  out.depth = torch::where(alpha > 0, depth, torch::zeros_like(depth)).reshape({batch, h, w});
  out.rgb = (out.raw.narrow(1, 0, 3) + (1.0 - out.alpha).unsqueeze(1)).clamp(0.0, 1.0);
  return out;
}

TriPlaneDecoderImpl::TriPlaneDecoderImpl(int in_channels, int hidden, int raw_channels, std::vector<double> head_radii,
                                         double shell_sharpness)
    : head_radii_(std::move(head_radii)), shell_sharpness_(shell_sharpness) {
  require(head_radii_.size() == 3, "head radii must have three entries");
  fc1_ = register_module("fc1", torch::nn::Linear(in_channels, hidden));
  fc2_ = register_module("fc2", torch::nn::Linear(hidden, 1 + raw_channels));
  normal_init(fc1_, kDecoderGain);
  normal_init(fc2_, kDecoderGain);
}

DecodedField TriPlaneDecoderImpl::forward(const torch::Tensor& features, const torch::Tensor& points) {
  const torch::Tensor hidden = F::softplus(fc1_->forward(features));
  const torch::Tensor out = fc2_->forward(hidden);
  const torch::Tensor radii =
      torch::tensor(std::vector<double>(head_radii_.begin(), head_radii_.end()), points.options().requires_grad(false));
  const torch::Tensor rho = (points / radii).norm(2, -1);
  const torch::Tensor shell = shell_sharpness_ * (1.0 - rho);
  DecodedField field;
  field.sigma = F::softplus(out.select(-1, 0) + shell);
  field.color = torch::sigmoid(out.narrow(-1, 1, out.size(-1) - 1)) * (1.0 + 2e-3) - 1e-3;
  return field;
}

MappingNetworkImpl::MappingNetworkImpl(int w_dim, int layers) {
  layers_ = register_module("layers", torch::nn::ModuleList());
  for (int i = 0; i < layers; ++i) {
    torch::nn::Linear layer(w_dim, w_dim);
    normal_init(layer, kMappingGain);
    layers_->push_back(layer);
  }
}

torch::Tensor MappingNetworkImpl::forward(const torch::Tensor& z) {
  torch::Tensor x = z * torch::rsqrt(z.pow(2).mean(-1, true) + 1e-8);
  for (const auto& layer : *layers_) x = lrelu(layer->as<torch::nn::Linear>()->forward(x));
  return x;
}

TextureBranchImpl::TextureBranchImpl(const GeneratorConfig& config) {
  const int levels = static_cast<int>(config.tex_resolutions.size());
  require(levels == static_cast<int>(config.tex_channels.size()), "texture resolutions/channels mismatch");
  require(static_cast<int>(config.static_channels.size()) == levels, "static channel list must match levels");
  const int start = config.tex_resolutions.front() / 2;
  const_ = register_parameter("const", torch::randn({1, config.const_channels, start, start}));
  int in = config.const_channels;
  for (int s = 0; s < levels; ++s) {
    const int out = config.static_channels[s];
    convs_.push_back(register_module("conv" + std::to_string(s), ModulatedConv2d(in, out, 3, config.w_dim, true)));
    torch::nn::Conv2d to_tex = conv1x1(out, config.tex_channels[s]);
    normal_init(to_tex, kOutputGain);
    to_tex_.push_back(register_module("to_tex" + std::to_string(s), to_tex));
    in = out;
  }
}

NeuralTexture TextureBranchImpl::forward(const LatentCode& w) {
  torch::Tensor x = const_.expand({w.batch(), -1, -1, -1});
  NeuralTexture tex;
  for (std::size_t s = 0; s < convs_.size(); ++s) {
    x = lrelu(convs_[s]->forward(x, style_at(w, 2 * static_cast<int>(s))));
    tex.scales.push_back(to_tex_[s]->forward(x));
  }
  return tex;
}

StaticBranchImpl::StaticBranchImpl(const GeneratorConfig& config) : config_(config) {
  const int levels = static_cast<int>(config.static_channels.size());
  const int start = config.plane_resolution >> levels;
  require(start >= 1, "plane resolution too small for the number of levels");
  const_ = register_parameter("const", torch::randn({1, config.const_channels, start, start}));
  int in = config.const_channels;
  int res = start;
  for (int s = 0; s < levels; ++s) {
    const int out = config.static_channels[s];
    require(out % 2 == 0, "static channels must be even for the channel split");
    convs_.push_back(register_module("conv" + std::to_string(s), ModulatedConv2d(in, out, 3, config.w_dim, true)));
    res *= 2;
    resolutions_.push_back(res);
    channels_.push_back(out);
    in = out;
  }
  to_planes_ = register_module("to_planes", conv1x1(in, 3 * config.plane_channels));
  normal_init(to_planes_, kOutputGain);
}

TriPlane StaticBranchImpl::forward(const LatentCode& w, const SFTParams* sft) {
  if (sft != nullptr) require(sft->size() == convs_.size(), "SFT scale count must match modulation points");
  torch::Tensor x = const_.expand({w.batch(), -1, -1, -1});
  for (std::size_t s = 0; s < convs_.size(); ++s) {
    x = lrelu(convs_[s]->forward(x, style_at(w, 2 * static_cast<int>(s) + 1)));
    if (sft != nullptr) {
      require(sft->alpha[s].size(-1) == resolutions_[s] && sft->alpha[s].size(-2) == resolutions_[s],
              "SFT map resolution does not match the modulation point");
      x = apply_cs_sft(x, sft->alpha[s], sft->beta[s]);
    }
  }
  const torch::Tensor planes = to_planes_->forward(x);
  const int r = config_.plane_resolution;
  return {planes.view({w.batch(), 3, config_.plane_channels, r, r})};
}

torch::Tensor alpha_blend(const torch::Tensor& features, const torch::Tensor& texture, const torch::Tensor& mask) {
  return mask * texture + (1.0 - mask) * features;
}

FaceBranchImpl::FaceBranchImpl(const GeneratorConfig& config) : config_(config) {
  const int start = config.tex_resolutions.front() / 2;
  const_ = register_parameter("const", torch::randn({1, config.const_channels, start, start}));
  int in = config.const_channels;
  for (std::size_t s = 0; s < config.tex_channels.size(); ++s) {
    const int out = config.tex_channels[s];
    convs_.push_back(
        register_module("conv" + std::to_string(s), ModulatedConv2d(in, out, 3, config.w_dim, true)));
    in = out;
  }
  require(config.tex_resolutions.back() == config.plane_resolution, "finest texture scale must equal plane resolution");
  out_conv_ = register_module("out_conv", ModulatedConv2d(in, config.plane_channels, 3, config.w_dim, false));
}

FaceFeatures FaceBranchImpl::forward(const std::vector<FeatureImage>& rasterized, const LatentCode& w) {
  return forward_trace(rasterized, w, nullptr);
}

FaceFeatures FaceBranchImpl::forward_trace(const std::vector<FeatureImage>& rasterized, const LatentCode& w,
                                           std::vector<torch::Tensor>* post_blend) {
  require(rasterized.size() == convs_.size(), "rasterized scale count mismatch");
  torch::Tensor x = const_.expand({w.batch(), -1, -1, -1});
  for (std::size_t s = 0; s < convs_.size(); ++s) {
    x = lrelu(convs_[s]->forward(x, style_at(w, 2 * static_cast<int>(s))));
    const FeatureImage& t = rasterized[s];
    require(t.data.sizes() == x.sizes(), "rasterized texture scale does not match the face feature map");
    x = alpha_blend(x, t.data, t.mask);
    if (post_blend != nullptr) post_blend->push_back(x);
  }
  FaceFeatures out;
  out.features = out_conv_->forward(x, style_at(w, 2 * static_cast<int>(convs_.size()) - 1));
  out.coverage = rasterized.back().mask;
  return out;
}

GeneratorImpl::GeneratorImpl(const GeneratorConfig& config) : config_(config) {
  mapping = register_module("mapping", MappingNetwork(config.w_dim, config.mapping_layers));
  texture = register_module("texture", TextureBranch(config));
  statics = register_module("static", StaticBranch(config));
  face = register_module("face", FaceBranch(config));
  decoder = register_module("decoder", TriPlaneDecoder(config.plane_channels, config.decoder_hidden, config.raw_channels,
                                                       config.head_radii, config.shell_sharpness));
  torch::NoGradGuard no_grad;
  const torch::Tensor w = mapping->forward(torch::randn({4096, config.w_dim}));
  w_avg_ = register_buffer("w_avg", w.mean(0));
}

torch::Tensor GeneratorImpl::map(const torch::Tensor& z) { return mapping->forward(z); }

LatentCode GeneratorImpl::broadcast(const torch::Tensor& w) const {
  return {w.unsqueeze(1).expand({-1, config_.style_layers, -1}).contiguous()};
}

LatentCode GeneratorImpl::sample_latent(int64_t batch, std::uint64_t seed) {
  auto gen = at::detail::createCPUGenerator(seed);
  const torch::Tensor z = torch::randn({batch, config_.w_dim}, gen, w_avg_.options());
  torch::NoGradGuard no_grad;
  return broadcast(mapping->forward(z));
}

LatentCode GeneratorImpl::mean_latent(int64_t batch) const { return broadcast(w_avg_.unsqueeze(0).expand({batch, -1})); }

NeuralTexture GeneratorImpl::g_tex(const LatentCode& w) { return texture->forward(w); }

TriPlane GeneratorImpl::g_static(const LatentCode& w, const SFTParams* sft) { return statics->forward(w, sft); }

FaceFeatures GeneratorImpl::g_face(const std::vector<FeatureImage>& rasterized, const LatentCode& w) {
  return face->forward(rasterized, w);
}

TriPlane GeneratorImpl::compose(const FaceFeatures& f, const TriPlane& static_planes) const {
  const torch::Tensor front = static_planes.planes.select(1, 0);
  require(f.features.sizes() == front.sizes(), "face features must match the static front plane");
  const torch::Tensor blended = alpha_blend(front, f.features, f.coverage);
  return {torch::cat({blended.unsqueeze(1), static_planes.planes.narrow(1, 1, 2)}, 1)};
}

FieldDecoder GeneratorImpl::field_decoder() {
  TriPlaneDecoder dec = decoder;
  return [dec](const torch::Tensor& features, const torch::Tensor& points) mutable {
    return dec->forward(features, points);
  };
}

RenderOutput GeneratorImpl::render(const TriPlane& planes, const std::vector<Camera>& cameras,
                                   std::optional<int> samples_per_ray) {
  RenderOptions options{samples_per_ray.value_or(config_.samples_per_ray), config_.box_half_extent};
  return render_planes(planes, cameras, options, field_decoder());
}

RenderOutput GeneratorImpl::render_features(const LatentCode& w, const NeuralTexture& tex,
                                            const TriPlane& static_planes,
                                            const std::vector<const FrameGeometry*>& geometry,
                                            const std::vector<Camera>& cameras) {
  const FaceFeatures f = g_face(rasterize_scales(tex, geometry), w);
  return render(compose(f, static_planes), cameras);
}

RenderOutput GeneratorImpl::synthesize(const LatentCode& w, const std::vector<const FrameGeometry*>& geometry,
                                       const std::vector<Camera>& cameras, const TexOffsets* tex_offsets,
                                       const SFTParams* sft) {
  NeuralTexture tex = g_tex(w);
  if (tex_offsets != nullptr) tex = add_offsets(tex, *tex_offsets);
  const TriPlane st = g_static(w, sft);
  return render_features(w, tex, st, geometry, cameras);
}

}  // namespace igi

#include "igi/baselines.hpp"

#include "igi/common.hpp"

namespace igi {

std::pair<TexOffsets, TriRefinement> one_shot_refinement(World& world, InversionModels& models,
                                                         const CoarseFeatures& coarse, const FrameObservation& frame,
                                                         Variant variant) {
  FrameObservation f = frame;
  observe(world, coarse, f);
  Refiners& r = models.variant(variant);
  return {r.tex->forward(tex_encoder_inputs(f, r.tex->input())), r.tri->forward(tri_encoder_inputs(f))};
}

Avatar baseline_feature_average(World& world, InversionModels& models, const std::vector<FrameObservation>& frames) {
  require(!frames.empty(), "feature averaging needs at least one frame");
  const CoarseFeatures coarse = coarse_features(world, models.latent->forward(frames.front().image.unsqueeze(0)));
  std::vector<torch::Tensor> offset_sum;
  torch::Tensor plane_sum;
  for (const auto& frame : frames) {
    const auto [offsets, tri] = one_shot_refinement(world, models, coarse, frame);
    const TriPlane planes = refine_avatar(coarse, offsets, tri).statics(world.generator);
    if (offset_sum.empty()) {
      offset_sum = offsets.scales;
      plane_sum = planes.planes;
      continue;
    }
    for (std::size_t s = 0; s < offset_sum.size(); ++s) offset_sum[s] = offset_sum[s] + offsets.scales[s];
    plane_sum = plane_sum + planes.planes;
  }
  const double n = double(frames.size());
  TexOffsets mean;
  for (const auto& s : offset_sum) mean.scales.push_back(frames.size() == 1 ? s : s / n);
  Avatar a;
  a.latent = coarse.latent;
  a.texture = add_offsets(coarse.texture, mean);
  a.static_planes = TriPlane{frames.size() == 1 ? plane_sum : plane_sum / n};
  return a;
}

Avatar baseline_convfusion(World& world, InversionModels& models, const std::vector<FrameObservation>& frames) {
  require(!frames.empty(), "ConvFusion needs at least one frame");
  const CoarseFeatures coarse = coarse_features(world, models.latent->forward(frames.front().image.unsqueeze(0)));
  std::vector<std::vector<torch::Tensor>> tex, tri;
  for (const auto& frame : frames) {
    FrameObservation f = frame;
    observe(world, coarse, f);
    const FrameFeatures feats = frame_features(models, f);
    tex.push_back(feats.tex);
    tri.push_back(feats.tri);
  }
  const TexOffsets offsets = tex_offsets_from_heads(models.tex_fusion->forward(tex));
  const TriRefinement refinement =
      tri_refinement_from_heads(models.tri_fusion->forward(tri), TriOutput::SFT, world.config.generator);
  return refine_avatar(coarse, offsets, refinement);
}

const char* method_name(Method m) {
  switch (m) {
    case Method::Coarse: return "coarse";
    case Method::OneShot: return "one_shot";
    case Method::Recurrent: return "recurrent";
    case Method::ConvFusion: return "convfusion";
    case Method::FeatureAverage: return "feature_average";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  for (Method m : {Method::Coarse, Method::OneShot, Method::Recurrent, Method::ConvFusion, Method::FeatureAverage})
    if (name == method_name(m)) return m;
  throw InvalidArgument("unknown method: " + name);
}

Avatar invert_with(World& world, InversionModels& models, const std::vector<FrameObservation>& sources,
                   const MethodSpec& spec) {
  require(!sources.empty(), "inversion needs at least one source frame");
  switch (spec.method) {
    case Method::Coarse: return invert_coarse(world, models, sources.front());
    case Method::OneShot: return invert_one_shot(world, models, sources.front(), spec.variant);
    case Method::Recurrent: return invert_sequence(world, models, sources);
    case Method::ConvFusion: return baseline_convfusion(world, models, sources);
    case Method::FeatureAverage: return baseline_feature_average(world, models, sources);
  }
  throw InvalidArgument("unknown method");
}

FrameObservation observation(const SyntheticFrame& frame) {
  FrameObservation f;
  f.image = frame.image;
  f.params = frame.params;
  f.camera = frame.camera;
  return f;
}

torch::Tensor render_frames(World& world, const Avatar& avatar, const std::vector<const SyntheticFrame*>& frames) {
  const auto n = static_cast<int64_t>(frames.size());
  const TriPlane statics = avatar.statics(world.generator);
  std::vector<const FrameGeometry*> geoms;
  std::vector<Camera> cams;
  for (const auto* f : frames) {
    geoms.push_back(&f->geometry);
    cams.push_back(f->camera);
  }
  NeuralTexture tex;
  for (const auto& s : avatar.texture.scales) tex.scales.push_back(s.expand({n, -1, -1, -1}));
  return world.generator
      ->render_features(LatentCode{avatar.latent.wplus.expand({n, -1, -1})}, tex,
                        TriPlane{statics.planes.expand({n, -1, -1, -1, -1})}, geoms, cams)
      .rgb;
}

std::vector<int> source_indices(int n_sources, const EvalConfig& eval) {
  return even_sources(n_sources, n_sources > eval.source_span ? eval.long_source_span : eval.source_span);
}

MetricsReport evaluate_method(World& world, InversionModels& models, ProxyNetworkImpl& proxy,
                              const SyntheticDataset& data, const MethodSpec& spec, int n_sources,
                              const EvalConfig& eval) {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> pred, target;
  std::vector<Landmarks2d> landmarks;
  for (const auto& id : data.identities) {
    const int n_frames = static_cast<int>(id.frames.size());
    require(n_frames >= eval.eval_frames, "sequence shorter than the evaluation segment");
    std::vector<FrameObservation> sources;
    for (int i : source_indices(n_sources, eval)) {
      require(i < n_frames - eval.eval_frames, "source frames overlap the evaluation segment");
      sources.push_back(observation(id.frames[static_cast<std::size_t>(i)]));
    }
    const Avatar avatar = invert_with(world, models, sources, spec);
    std::vector<const SyntheticFrame*> held_out;
    for (int i = n_frames - eval.eval_frames; i < n_frames; ++i) held_out.push_back(&id.frames[static_cast<std::size_t>(i)]);
    const torch::Tensor rgb = render_frames(world, avatar, held_out);
    for (std::size_t k = 0; k < held_out.size(); ++k) {
      pred.push_back(rgb[static_cast<int64_t>(k)]);
      target.push_back(held_out[k]->image);
      landmarks.push_back(world.face.landmarks2d(held_out[k]->params, held_out[k]->camera));
    }
  }
  return compute_metrics(pred, target, proxy, landmarks);
}

std::vector<AblationRow> ablation_suite(World& world, InversionModels& models, ProxyNetworkImpl& proxy,
                                        const SyntheticDataset& data, const EvalConfig& eval) {
  std::vector<AblationRow> rows;
  rows.push_back({"wo_both_enc", evaluate_method(world, models, proxy, data, {Method::Coarse}, 1, eval)});
  rows.push_back({variant_name(Variant::PosedTex),
                  evaluate_method(world, models, proxy, data, {Method::OneShot, Variant::PosedTex}, 1, eval)});
  rows.push_back({variant_name(Variant::TriOffsets),
                  evaluate_method(world, models, proxy, data, {Method::OneShot, Variant::TriOffsets}, 1, eval)});
  rows.push_back({variant_name(Variant::Full),
                  evaluate_method(world, models, proxy, data, {Method::OneShot, Variant::Full}, 1, eval)});
  return rows;
}

nlohmann::json to_json(const std::vector<AblationRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) j.push_back({{"name", r.name}, {"metrics", to_json(r.metrics)}});
  return j;
}

}  // namespace igi

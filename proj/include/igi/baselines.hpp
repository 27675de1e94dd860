#pragma once

#include "igi/metrics.hpp"
#include "igi/pipeline.hpp"
#include "igi/synthetic.hpp"

#include <string>

namespace igi {

// Per-frame one-shot refinements decoded against a shared coarse avatar.
std::pair<TexOffsets, TriRefinement> one_shot_refinement(World& world, InversionModels& models,
                                                         const CoarseFeatures& coarse, const FrameObservation& frame,
                                                         Variant variant = Variant::Full);

// Few-shot adaptation of the one-shot encoders: the coarse avatar comes from the first frame, each
// frame is refined separately and the texture offsets and materialized static planes are averaged.
Avatar baseline_feature_average(World& world, InversionModels& models, const std::vector<FrameObservation>& frames);

// Fixed-window fusion of the frame-wise backbone activations.
Avatar baseline_convfusion(World& world, InversionModels& models, const std::vector<FrameObservation>& frames);

enum class Method { Coarse, OneShot, Recurrent, ConvFusion, FeatureAverage };
const char* method_name(Method m);
Method parse_method(const std::string& name);

struct MethodSpec {
  Method method = Method::Recurrent;
  Variant variant = Variant::Full;  // one-shot only
};

Avatar invert_with(World& world, InversionModels& models, const std::vector<FrameObservation>& sources,
                   const MethodSpec& spec);

FrameObservation observation(const SyntheticFrame& frame);

// Render an avatar at several (params, camera) pairs in one batch; returns B x 3 x H x W.
torch::Tensor render_frames(World& world, const Avatar& avatar, const std::vector<const SyntheticFrame*>& frames);

// Held-out protocol: n_sources frames sampled evenly from the first source_span frames (or
// long_source_span when n exceeds source_span), evaluated on the last eval_frames frames.
std::vector<int> source_indices(int n_sources, const EvalConfig& eval);
MetricsReport evaluate_method(World& world, InversionModels& models, ProxyNetworkImpl& proxy,
                              const SyntheticDataset& data, const MethodSpec& spec, int n_sources,
                              const EvalConfig& eval);

struct AblationRow {
  std::string name;
  MetricsReport metrics;
};
// Coarse-only, posed-image texture encoder, direct-offset tri encoder and the full model, all
// one-shot from the first frame.
std::vector<AblationRow> ablation_suite(World& world, InversionModels& models, ProxyNetworkImpl& proxy,
                                        const SyntheticDataset& data, const EvalConfig& eval);
nlohmann::json to_json(const std::vector<AblationRow>& rows);

}  // namespace igi

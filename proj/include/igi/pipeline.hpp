#pragma once

#include "igi/config.hpp"
#include "igi/encoders.hpp"
#include "igi/facemodel.hpp"
#include "igi/generator.hpp"
#include "igi/recurrent.hpp"

#include <array>
#include <optional>

namespace igi {

// The synthetic world: toy head model and the frozen tri-plane generator.
struct World {
  Config config;
  FaceModel face;
  Generator generator{nullptr};

  Intrinsics intrinsics() const;
  Camera camera(double yaw, double pitch) const;
  FrameGeometry geometry(const FaceParams& params) const;
};

// Deterministic in config (face_seed, generator_seed).
World make_world(const Config& config);

enum class Variant { Full = 0, PosedTex = 1, TriOffsets = 2 };
constexpr int kNumVariants = 3;
const char* variant_name(Variant v);

// One-shot refinement encoders of one variant.
struct Refiners {
  ETex tex{nullptr};
  ETri tri{nullptr};
};

// Every trainable inversion network. Recurrent and fusion decoders sit on top of the full variant.
struct InversionModels {
  ELatent latent{nullptr};
  std::array<Refiners, kNumVariants> refiners;
  RecurrentDecoder tex_rec{nullptr};
  RecurrentDecoder tri_rec{nullptr};
  ConvFusion tex_fusion{nullptr};
  ConvFusion tri_fusion{nullptr};

  Refiners& full() { return refiners[0]; }
  Refiners& variant(Variant v) { return refiners[static_cast<int>(v)]; }
  // (name, module) pairs for checkpointing and freeze checks.
  std::vector<std::pair<std::string, std::shared_ptr<torch::nn::Module>>> named_modules() const;
  void eval_mode();
};

// Fresh networks: zero-initialized heads, recurrent and fusion decoders distilled from the full
// one-shot encoders. Deterministic in config.seed.
InversionModels make_models(const World& world);
void distill_recurrent(const World& world, InversionModels& models, double update_gate_bias);

// I - Î, elementwise.
torch::Tensor residual(const torch::Tensor& image, const torch::Tensor& synthesized);

struct FrameObservation {
  torch::Tensor image;  // 3 x H x W in [0,1]
  FaceParams params;
  Camera camera;

  // Filled by observe().
  torch::Tensor synthesized;  // Î, 3 x H x W
  torch::Tensor residual;     // ΔI
  UVImage uv_image;
  UVImage uv_residual;
  bool derived() const { return synthesized.defined(); }
};

// Canonical features of the coarse (latent-only) avatar.
struct CoarseFeatures {
  LatentCode latent;
  NeuralTexture texture;
  TriPlane static_planes;
};

CoarseFeatures coarse_features(World& world, const LatentCode& latent);

// Render the coarse avatar under the frame's params and camera, then derive the residual and its
// UV projections.
void observe(World& world, const CoarseFeatures& coarse, FrameObservation& frame);

// Inputs of the texture encoder for the given variant and of the tri encoder (batch of one).
torch::Tensor tex_encoder_inputs(const FrameObservation& frame, TexInput input);
torch::Tensor tri_encoder_inputs(const FrameObservation& frame);

struct Avatar {
  LatentCode latent;
  NeuralTexture texture;                  // coarse texture plus offsets
  std::optional<SFTParams> sft;           // CS-SFT modulation of the static branch
  std::optional<torch::Tensor> plane_offsets;  // direct offsets on the static tri-plane
  std::optional<TriPlane> static_planes;  // materialized static planes (overrides the above)

  TriPlane statics(Generator& generator) const;
};

Avatar coarse_avatar(const CoarseFeatures& coarse);
Avatar refine_avatar(const CoarseFeatures& coarse, const TexOffsets& offsets, const TriRefinement& tri);

Avatar invert_one_shot(World& world, InversionModels& models, const FrameObservation& frame,
                       Variant variant = Variant::Full);
// Coarse stage only: the latent encoder alone.
Avatar invert_coarse(World& world, InversionModels& models, const FrameObservation& frame);

// Streaming inversion state. Memory does not grow with the number of frames.
struct AvatarSession {
  CoarseFeatures coarse;
  RecurrentState state;
  bool initialized = false;
};

AvatarSession start_session(World& world, InversionModels& models, const FrameObservation& first);
void update_session(World& world, InversionModels& models, AvatarSession& session, const FrameObservation& frame);
std::pair<TexOffsets, TriRefinement> decode_session(InversionModels& models, const AvatarSession& session);
Avatar session_avatar(InversionModels& models, const AvatarSession& session);

// Frame-wise decoder activations of the full-variant encoders (inputs to the recurrent blocks).
struct FrameFeatures {
  std::vector<torch::Tensor> tex;
  std::vector<torch::Tensor> tri;
};
FrameFeatures frame_features(InversionModels& models, const FrameObservation& frame);

// Session over a whole sequence: start on frames[0], update with every frame, decode.
Avatar invert_sequence(World& world, InversionModels& models, const std::vector<FrameObservation>& frames);

RenderOutput animate(World& world, const Avatar& avatar, const FaceParams& params, const Camera& camera);

}  // namespace igi

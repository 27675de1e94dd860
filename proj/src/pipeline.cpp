#include "igi/pipeline.hpp"

#include "igi/common.hpp"

namespace igi {

Intrinsics World::intrinsics() const {
  return Intrinsics::square(config.camera.resolution, config.camera.focal_scale);
}

Camera World::camera(double yaw, double pitch) const {
  return camera_from_pose(yaw, pitch, config.camera.radius, intrinsics());
}

FrameGeometry World::geometry(const FaceParams& params) const {
  return make_frame_geometry(face.deform(params), config.generator);
}

World make_world(const Config& config) {
  FaceModelOptions fo;
  fo.seed = config.world.face_seed;
  fo.shape_dims = config.world.shape_dims;
  fo.expression_dims = config.world.expression_dims;
  fo.rings = config.world.mesh_rings;
  fo.segments = config.world.mesh_segments;
  World w{config, FaceModel::build(fo), nullptr};
  {
    SeedScope seed(config.world.generator_seed);
    w.generator = Generator(config.generator);
  }
  w.generator->eval();
  set_trainable(*w.generator, false);
  return w;
}

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::PosedTex: return "wo_nt_enc";
    case Variant::TriOffsets: return "etri_offsets";
  }
  return "unknown";
}

std::vector<std::pair<std::string, std::shared_ptr<torch::nn::Module>>> InversionModels::named_modules() const {
  std::vector<std::pair<std::string, std::shared_ptr<torch::nn::Module>>> out;
  out.emplace_back("e_latent", latent.ptr());
  for (int v = 0; v < kNumVariants; ++v) {
    const std::string name = variant_name(static_cast<Variant>(v));
    out.emplace_back("e_tex." + name, refiners[v].tex.ptr());
    out.emplace_back("e_tri." + name, refiners[v].tri.ptr());
  }
  out.emplace_back("tex_rec", tex_rec.ptr());
  out.emplace_back("tri_rec", tri_rec.ptr());
  out.emplace_back("tex_fusion", tex_fusion.ptr());
  out.emplace_back("tri_fusion", tri_fusion.ptr());
  return out;
}

void InversionModels::eval_mode() {
  for (auto& [name, m] : named_modules()) m->eval();
}

namespace {

std::vector<int> tri_head_channels(const GeneratorConfig& g) { return g.static_channels; }

}  // namespace

InversionModels make_models(const World& world) {
  const Config& c = world.config;
  const int res = c.camera.resolution;
  InversionModels m;
  SeedScope seed(c.seed + 101);
  m.latent = ELatent(c.encoders, c.generator, res, world.generator->mean_latent(1).wplus[0][0]);
  m.refiners[0] = {ETex(c.encoders, c.generator, TexInput::UV, res), ETri(c.encoders, c.generator, TriOutput::SFT, res)};
  m.refiners[1] = {ETex(c.encoders, c.generator, TexInput::Posed, res),
                   ETri(c.encoders, c.generator, TriOutput::SFT, res)};
  m.refiners[2] = {ETex(c.encoders, c.generator, TexInput::UV, res),
                   ETri(c.encoders, c.generator, TriOutput::Offsets, res)};
  auto& tex_unet = *m.refiners[0].tex->unet;
  auto& tri_unet = *m.refiners[0].tri->unet;
  m.tex_rec = RecurrentDecoder(tex_unet.scale_channels(), tex_unet.scale_resolutions(), c.encoders.head_hidden,
                               c.generator.tex_channels, c.recurrent.kernel);
  m.tri_rec = RecurrentDecoder(tri_unet.scale_channels(), tri_unet.scale_resolutions(), c.encoders.head_hidden,
                               tri_head_channels(c.generator), c.recurrent.kernel);
  m.tex_fusion = ConvFusion(tex_unet.scale_channels(), c.encoders.head_hidden, c.generator.tex_channels,
                            c.recurrent.window, c.recurrent.kernel);
  m.tri_fusion = ConvFusion(tri_unet.scale_channels(), c.encoders.head_hidden, tri_head_channels(c.generator),
                            c.recurrent.window, c.recurrent.kernel);
  distill_recurrent(world, m, c.recurrent.update_gate_bias);
  return m;
}

void distill_recurrent(const World& world, InversionModels& models, double update_gate_bias) {
  Refiners& full = models.full();
  models.tex_rec->distill_from(*full.tex->unet, *full.tex->heads, update_gate_bias);
  models.tri_rec->distill_from(*full.tri->unet, *full.tri->heads, update_gate_bias);
  models.tex_fusion->distill_from(*full.tex->unet, *full.tex->heads);
  models.tri_fusion->distill_from(*full.tri->unet, *full.tri->heads);
}

torch::Tensor residual(const torch::Tensor& image, const torch::Tensor& synthesized) {
  require(image.sizes() == synthesized.sizes(), "residual: image shapes differ");
  return image - synthesized;
}

CoarseFeatures coarse_features(World& world, const LatentCode& latent) {
  return {latent, world.generator->g_tex(latent), world.generator->g_static(latent)};
}

void observe(World& world, const CoarseFeatures& coarse, FrameObservation& frame) {
  require(frame.image.dim() == 3 && frame.image.size(0) == 3, "frame image must be 3 x H x W");
  const Mesh mesh = world.face.deform(frame.params);
  const FrameGeometry geom = make_frame_geometry(mesh, world.config.generator);
  const RenderOutput r = world.generator->render_features(coarse.latent, coarse.texture, coarse.static_planes, {&geom},
                                                          {frame.camera});
  frame.synthesized = r.rgb[0];
  frame.residual = residual(frame.image, frame.synthesized);
  const UVProjector proj = make_uv_projector(mesh, frame.camera, world.config.encoders.uv_resolution,
                                             default_depth_tolerance(frame.camera));
  frame.uv_image = {proj.apply(frame.image), proj.visibility};
  frame.uv_residual = {proj.apply(frame.residual), proj.visibility};
}

torch::Tensor tex_encoder_inputs(const FrameObservation& frame, TexInput input) {
  require(frame.derived(), "frame observation has not been derived");
  if (input == TexInput::Posed) return image_inputs(frame.image, frame.residual).unsqueeze(0);
  return tex_inputs(frame.uv_image, frame.uv_residual).unsqueeze(0);
}

torch::Tensor tri_encoder_inputs(const FrameObservation& frame) {
  require(frame.derived(), "frame observation has not been derived");
  return image_inputs(frame.image, frame.residual).unsqueeze(0);
}

TriPlane Avatar::statics(Generator& generator) const {
  if (static_planes) return *static_planes;
  TriPlane planes = generator->g_static(latent, sft ? &*sft : nullptr);
  if (plane_offsets) planes.planes = planes.planes + *plane_offsets;
  return planes;
}

Avatar coarse_avatar(const CoarseFeatures& coarse) {
  Avatar a;
  a.latent = coarse.latent;
  a.texture = coarse.texture;
  a.static_planes = coarse.static_planes;
  return a;
}

Avatar refine_avatar(const CoarseFeatures& coarse, const TexOffsets& offsets, const TriRefinement& tri) {
  Avatar a;
  a.latent = coarse.latent;
  a.texture = add_offsets(coarse.texture, offsets);
  if (tri.is_sft())
    a.sft = tri.sft;
  else
    a.plane_offsets = tri.plane_offsets;
  return a;
}

namespace {

FrameObservation derive(World& world, const CoarseFeatures& coarse, const FrameObservation& frame) {
  FrameObservation f = frame;
  observe(world, coarse, f);
  return f;
}

LatentCode encode_latent(InversionModels& models, const FrameObservation& frame) {
  return models.latent->forward(frame.image.unsqueeze(0));
}

}  // namespace

Avatar invert_one_shot(World& world, InversionModels& models, const FrameObservation& frame, Variant variant) {
  const CoarseFeatures coarse = coarse_features(world, encode_latent(models, frame));
  const FrameObservation f = derive(world, coarse, frame);
  Refiners& r = models.variant(variant);
  const TexOffsets offsets = r.tex->forward(tex_encoder_inputs(f, r.tex->input()));
  const TriRefinement tri = r.tri->forward(tri_encoder_inputs(f));
  return refine_avatar(coarse, offsets, tri);
}

Avatar invert_coarse(World& world, InversionModels& models, const FrameObservation& frame) {
  return coarse_avatar(coarse_features(world, encode_latent(models, frame)));
}

AvatarSession start_session(World& world, InversionModels& models, const FrameObservation& first) {
  AvatarSession s;
  s.coarse = coarse_features(world, encode_latent(models, first));
  const auto opts = first.image.options();
  s.state.tex = models.tex_rec->zero_state(1, opts);
  s.state.tri = models.tri_rec->zero_state(1, opts);
  s.state.t = 0;
  s.initialized = true;
  return s;
}

FrameFeatures frame_features(InversionModels& models, const FrameObservation& frame) {
  Refiners& r = models.full();
  return {r.tex->unet->forward(tex_encoder_inputs(frame, TexInput::UV)).pre,
          r.tri->unet->forward(tri_encoder_inputs(frame)).pre};
}

void update_session(World& world, InversionModels& models, AvatarSession& session, const FrameObservation& frame) {
  if (!session.initialized) throw InvalidArgument("update_session on an uninitialized session");
  const FrameObservation f = derive(world, session.coarse, frame);
  const FrameFeatures feats = frame_features(models, f);
  session.state.tex = models.tex_rec->step(feats.tex, session.state.tex);
  session.state.tri = models.tri_rec->step(feats.tri, session.state.tri);
  session.state.t += 1;
}

std::pair<TexOffsets, TriRefinement> decode_session(InversionModels& models, const AvatarSession& session) {
  if (!session.initialized || session.state.t < 1) throw InvalidArgument("decode_session needs at least one frame");
  const TexOffsets offsets = tex_offsets_from_heads(models.tex_rec->decode(session.state.tex));
  // SFT heads need no generator geometry.
  const TriRefinement tri =
      tri_refinement_from_heads(models.tri_rec->decode(session.state.tri), TriOutput::SFT, GeneratorConfig{});
  return {offsets, tri};
}

Avatar session_avatar(InversionModels& models, const AvatarSession& session) {
  const auto [offsets, tri] = decode_session(models, session);
  return refine_avatar(session.coarse, offsets, tri);
}

Avatar invert_sequence(World& world, InversionModels& models, const std::vector<FrameObservation>& frames) {
  require(!frames.empty(), "invert_sequence needs at least one frame");
  AvatarSession s = start_session(world, models, frames.front());
  for (const auto& f : frames) update_session(world, models, s, f);
  return session_avatar(models, s);
}

RenderOutput animate(World& world, const Avatar& avatar, const FaceParams& params, const Camera& camera) {
  const FrameGeometry geom = world.geometry(params);
  return world.generator->render_features(avatar.latent, avatar.texture, avatar.statics(world.generator), {&geom},
                                          {camera});
}

}  // namespace igi

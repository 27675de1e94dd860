#pragma once

#include "igi/config.hpp"
#include "igi/facemodel.hpp"
#include "igi/pipeline.hpp"

#include <torch/torch.h>

#include <map>
#include <string>

namespace igi {

// Single-file container: magic, format version, a JSON header (metadata plus a shape table) and the
// raw tensor blobs. Tensors are named "<block>/<parameter path>".
class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, torch::Tensor> tensors;

  void put(const std::string& name, const torch::Tensor& tensor);
  const torch::Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const { return tensors.count(name) > 0; }

  // Parameters and buffers of a module under a block prefix.
  void put_module(const std::string& block, const torch::nn::Module& module);
  bool has_module(const std::string& block) const;
  // Copies stored values into the module; every parameter must be present with a matching shape.
  void load_module(const std::string& block, torch::nn::Module& module) const;

  void put_config(const Config& config);
  Config config() const;
  void put_face_model(const FaceModel& face);
  FaceModel face_model() const;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

// Avatars are stored with materialized static planes; sessions store the coarse features and the
// recurrent hidden maps so streaming can resume.
void put_avatar(Checkpoint& checkpoint, const Avatar& avatar, Generator& generator);
Avatar get_avatar(const Checkpoint& checkpoint);
void put_session(Checkpoint& checkpoint, const AvatarSession& session);
AvatarSession get_session(const Checkpoint& checkpoint);

}  // namespace igi

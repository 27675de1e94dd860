#include "igi/checkpoint.hpp"

#include "igi/common.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

namespace igi {

namespace {

constexpr char kMagic[8] = {'I', 'G', 'I', 'C', 'K', 'P', 'T', '\0'};

std::vector<std::pair<std::string, torch::Tensor>> module_tensors(const torch::nn::Module& module) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& p : module.named_parameters(true)) out.emplace_back(p.key(), p.value());
  for (const auto& b : module.named_buffers(true)) out.emplace_back(b.key(), b.value());
  return out;
}

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    default: throw InvalidArgument("checkpoint: unsupported dtype");
  }
}

torch::ScalarType dtype_from(const std::string& s) {
  if (s == "f32") return torch::kFloat32;
  if (s == "f64") return torch::kFloat64;
  if (s == "i64") return torch::kInt64;
  throw InvalidArgument("checkpoint: unknown dtype " + s);
}

torch::Tensor eigen_to_tensor(const Eigen::MatrixXd& m) {
  torch::Tensor t = torch::empty({m.rows(), m.cols()}, torch::kFloat64);
  auto a = t.accessor<double, 2>();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) a[i][j] = m(i, j);
  return t;
}

Eigen::MatrixXd tensor_to_eigen(const torch::Tensor& t) {
  const torch::Tensor c = t.to(torch::kFloat64).contiguous();
  Eigen::MatrixXd m(c.size(0), c.size(1));
  auto a = c.accessor<double, 2>();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = a[i][j];
  return m;
}

}  // namespace

void Checkpoint::put(const std::string& name, const torch::Tensor& tensor) {
  tensors[name] = tensor.detach().to(torch::kCPU).contiguous().clone();
}

const torch::Tensor& Checkpoint::get(const std::string& name) const {
  const auto it = tensors.find(name);
  if (it == tensors.end()) throw MissingPrerequisite("checkpoint has no tensor " + name);
  return it->second;
}

void Checkpoint::put_module(const std::string& block, const torch::nn::Module& module) {
  for (const auto& [name, t] : module_tensors(module)) put(block + "/" + name, t);
}

bool Checkpoint::has_module(const std::string& block) const {
  const std::string prefix = block + "/";
  const auto it = tensors.lower_bound(prefix);
  return it != tensors.end() && it->first.compare(0, prefix.size(), prefix) == 0;
}

void Checkpoint::load_module(const std::string& block, torch::nn::Module& module) const {
  if (!has_module(block)) throw MissingPrerequisite("checkpoint has no block " + block);
  torch::NoGradGuard no_grad;
  for (auto& [name, t] : module_tensors(module)) {
    const torch::Tensor& src = get(block + "/" + name);
    if (src.sizes() != t.sizes())
      throw InvalidArgument("checkpoint shape mismatch for " + block + "/" + name);
    t.copy_(src);
  }
}

void Checkpoint::put_config(const Config& config) { meta["config"] = config; }

Config Checkpoint::config() const {
  if (!meta.contains("config")) throw MissingPrerequisite("checkpoint has no config snapshot");
  return meta["config"].get<Config>();
}

void Checkpoint::put_face_model(const FaceModel& face) {
  const Mesh& m = face.base();
  Eigen::MatrixXd vertices = m.vertices;
  Eigen::MatrixXd uv = m.uv;
  torch::Tensor faces = torch::empty({m.num_faces(), 3}, torch::kInt64);
  auto fa = faces.accessor<int64_t, 2>();
  for (int f = 0; f < m.num_faces(); ++f)
    for (int k = 0; k < 3; ++k) fa[f][k] = m.faces[f][k];
  torch::Tensor landmarks = torch::empty({static_cast<int64_t>(m.landmark_indices.size())}, torch::kInt64);
  for (std::size_t i = 0; i < m.landmark_indices.size(); ++i) landmarks[static_cast<int64_t>(i)] = m.landmark_indices[i];
  put("face/vertices", eigen_to_tensor(vertices));
  put("face/uv", eigen_to_tensor(uv));
  put("face/faces", faces);
  put("face/landmarks", landmarks);
  put("face/shape_basis", eigen_to_tensor(face.shape_basis()));
  put("face/expression_basis", eigen_to_tensor(face.expression_basis()));
}

FaceModel Checkpoint::face_model() const {
  Mesh m;
  m.vertices = tensor_to_eigen(get("face/vertices"));
  m.uv = tensor_to_eigen(get("face/uv"));
  const torch::Tensor faces = get("face/faces");
  auto fa = faces.accessor<int64_t, 2>();
  for (int64_t f = 0; f < faces.size(0); ++f)
    m.faces.push_back({static_cast<int>(fa[f][0]), static_cast<int>(fa[f][1]), static_cast<int>(fa[f][2])});
  const torch::Tensor lm = get("face/landmarks");
  for (int64_t i = 0; i < lm.size(0); ++i) m.landmark_indices.push_back(static_cast<int>(lm[i].item<int64_t>()));
  return FaceModel(std::move(m), tensor_to_eigen(get("face/shape_basis")),
                   tensor_to_eigen(get("face/expression_basis")));
}

void Checkpoint::save(const std::string& path) const {
  nlohmann::json header;
  header["version"] = kVersion;
  header["meta"] = meta;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    const auto bytes = static_cast<std::uint64_t>(t.numel() * t.element_size());
    header["tensors"].push_back(
        {{"name", name}, {"dtype", dtype_name(t.scalar_type())}, {"shape", t.sizes().vec()}, {"offset", offset},
         {"bytes", bytes}});
    offset += bytes;
  }
  const std::string text = header.dump();

  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));
    const std::uint32_t version = kVersion;
    const std::uint64_t length = text.size();
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(&length), sizeof(length));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : tensors)
      out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.numel() * t.element_size()));
    if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingPrerequisite("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw InvalidArgument("not a checkpoint file: " + path);
  std::uint32_t version = 0;
  std::uint64_t length = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&length), sizeof(length));
  if (!in || version != kVersion) throw InvalidArgument("unsupported checkpoint version in " + path);
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  const nlohmann::json header = nlohmann::json::parse(text);
  if (header.at("version").get<std::uint32_t>() != version) throw InvalidArgument("checkpoint header version mismatch");

  Checkpoint c;
  c.meta = header.at("meta");
  std::uint64_t expected = 0;
  for (const auto& entry : header.at("tensors")) {
    const auto shape = entry.at("shape").get<std::vector<int64_t>>();
    const auto type = dtype_from(entry.at("dtype").get<std::string>());
    torch::Tensor t = torch::empty(shape, type);
    const auto bytes = entry.at("bytes").get<std::uint64_t>();
    if (bytes != static_cast<std::uint64_t>(t.numel() * t.element_size()) ||
        entry.at("offset").get<std::uint64_t>() != expected)
      throw InvalidArgument("checkpoint shape table is inconsistent for " + entry.at("name").get<std::string>());
    in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(bytes));
    if (!in) throw InvalidArgument("truncated checkpoint: " + path);
    expected += bytes;
    c.tensors[entry.at("name").get<std::string>()] = t;
  }
  return c;
}

void put_avatar(Checkpoint& c, const Avatar& avatar, Generator& generator) {
  c.meta["avatar_scales"] = avatar.texture.scales.size();
  c.put("avatar/latent", avatar.latent.wplus);
  for (std::size_t s = 0; s < avatar.texture.scales.size(); ++s)
    c.put("avatar/texture." + std::to_string(s), avatar.texture.scales[s]);
  torch::NoGradGuard no_grad;
  c.put("avatar/static_planes", avatar.statics(generator).planes);
}

Avatar get_avatar(const Checkpoint& c) {
  if (!c.meta.contains("avatar_scales")) throw MissingPrerequisite("checkpoint holds no avatar");
  Avatar a;
  a.latent.wplus = c.get("avatar/latent");
  const auto scales = c.meta["avatar_scales"].get<std::size_t>();
  for (std::size_t s = 0; s < scales; ++s) a.texture.scales.push_back(c.get("avatar/texture." + std::to_string(s)));
  a.static_planes = TriPlane{c.get("avatar/static_planes")};
  return a;
}

void put_session(Checkpoint& c, const AvatarSession& session) {
  require(session.initialized, "cannot store an uninitialized session");
  c.meta["session"] = {{"t", session.state.t},
                       {"texture_scales", session.coarse.texture.scales.size()},
                       {"tex_state", session.state.tex.size()},
                       {"tri_state", session.state.tri.size()}};
  c.put("session/latent", session.coarse.latent.wplus);
  c.put("session/static_planes", session.coarse.static_planes.planes);
  for (std::size_t s = 0; s < session.coarse.texture.scales.size(); ++s)
    c.put("session/texture." + std::to_string(s), session.coarse.texture.scales[s]);
  for (std::size_t s = 0; s < session.state.tex.size(); ++s)
    c.put("session/h_tex." + std::to_string(s), session.state.tex[s]);
  for (std::size_t s = 0; s < session.state.tri.size(); ++s)
    c.put("session/h_tri." + std::to_string(s), session.state.tri[s]);
}

AvatarSession get_session(const Checkpoint& c) {
  if (!c.meta.contains("session")) throw MissingPrerequisite("checkpoint holds no session");
  const auto& m = c.meta["session"];
  AvatarSession s;
  s.coarse.latent.wplus = c.get("session/latent");
  s.coarse.static_planes.planes = c.get("session/static_planes");
  for (std::size_t k = 0; k < m["texture_scales"].get<std::size_t>(); ++k)
    s.coarse.texture.scales.push_back(c.get("session/texture." + std::to_string(k)));
  for (std::size_t k = 0; k < m["tex_state"].get<std::size_t>(); ++k)
    s.state.tex.push_back(c.get("session/h_tex." + std::to_string(k)));
  for (std::size_t k = 0; k < m["tri_state"].get<std::size_t>(); ++k)
    s.state.tri.push_back(c.get("session/h_tri." + std::to_string(k)));
  s.state.t = m["t"].get<int64_t>();
  s.initialized = true;
  return s;
}

}  // namespace igi

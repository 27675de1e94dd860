#include "igi/manifest.hpp"

#include "igi/common.hpp"

#include <filesystem>
#include <fstream>

namespace igi {

const char* role_name(FrameRole role) {
  switch (role) {
    case FrameRole::Source: return "source";
    case FrameRole::Driving: return "driving";
    case FrameRole::Eval: return "eval";
  }
  return "unknown";
}

FrameRole parse_role(const std::string& name) {
  for (FrameRole r : {FrameRole::Source, FrameRole::Driving, FrameRole::Eval})
    if (name == role_name(r)) return r;
  throw InvalidArgument("unknown frame role: " + name);
}

Camera FrameRecord::camera() const { return Camera::from_pose(yaw, pitch, radius, intrinsics); }

bool FrameRecord::operator==(const FrameRecord& o) const {
  return image == o.image && params.shape == o.params.shape && params.expression == o.params.expression &&
         yaw == o.yaw && pitch == o.pitch && radius == o.radius && intrinsics.focal == o.intrinsics.focal &&
         intrinsics.cx == o.intrinsics.cx && intrinsics.cy == o.intrinsics.cy &&
         intrinsics.width == o.intrinsics.width && intrinsics.height == o.intrinsics.height && role == o.role;
}

void Manifest::validate() const {
  require(!with_role(FrameRole::Source).empty(), "manifest needs at least one source frame");
  for (const auto& f : frames) {
    f.params.validate();
    require(!f.image.empty(), "manifest frame without an image path");
  }
}

std::vector<const FrameRecord*> Manifest::with_role(FrameRole role) const {
  std::vector<const FrameRecord*> out;
  for (const auto& f : frames)
    if (f.role == role) out.push_back(&f);
  return out;
}

void Manifest::save(const std::string& path) const {
  nlohmann::json j;
  j["frames"] = nlohmann::json::array();
  for (const auto& f : frames) {
    j["frames"].push_back({{"image", f.image},
                           {"role", role_name(f.role)},
                           {"shape", f.params.shape},
                           {"expression", f.params.expression},
                           {"camera",
                            {{"yaw", f.yaw},
                             {"pitch", f.pitch},
                             {"radius", f.radius},
                             {"focal", f.intrinsics.focal},
                             {"cx", f.intrinsics.cx},
                             {"cy", f.intrinsics.cy},
                             {"width", f.intrinsics.width},
                             {"height", f.intrinsics.height}}}});
  }
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path);
  out << j.dump(2) << '\n';
}

Manifest Manifest::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingPrerequisite("cannot open manifest: " + path);
  const nlohmann::json j = nlohmann::json::parse(in);
  Manifest m;
  for (const auto& e : j.at("frames")) {
    FrameRecord f;
    f.image = e.at("image").get<std::string>();
    f.role = parse_role(e.at("role").get<std::string>());
    f.params.shape = e.at("shape").get<std::vector<double>>();
    f.params.expression = e.at("expression").get<std::vector<double>>();
    const auto& c = e.at("camera");
    f.yaw = c.at("yaw").get<double>();
    f.pitch = c.at("pitch").get<double>();
    f.radius = c.at("radius").get<double>();
    f.intrinsics.focal = c.at("focal").get<double>();
    f.intrinsics.cx = c.at("cx").get<double>();
    f.intrinsics.cy = c.at("cy").get<double>();
    f.intrinsics.width = c.at("width").get<int>();
    f.intrinsics.height = c.at("height").get<int>();
    m.frames.push_back(std::move(f));
  }
  m.validate();
  return m;
}

}  // namespace igi

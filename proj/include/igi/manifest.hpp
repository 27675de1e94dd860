#pragma once

#include "igi/facemodel.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace igi {

enum class FrameRole { Source, Driving, Eval };
const char* role_name(FrameRole role);
FrameRole parse_role(const std::string& name);

struct FrameRecord {
  std::string image;  // relative to the manifest's directory
  FaceParams params;
  double yaw = 0.0;
  double pitch = 0.0;
  double radius = 0.0;
  Intrinsics intrinsics;
  FrameRole role = FrameRole::Source;

  Camera camera() const;
  bool operator==(const FrameRecord& other) const;
};

struct Manifest {
  std::vector<FrameRecord> frames;

  // At least one source frame and valid face parameters everywhere.
  void validate() const;
  std::vector<const FrameRecord*> with_role(FrameRole role) const;

  void save(const std::string& path) const;
  static Manifest load(const std::string& path);
};

}  // namespace igi

#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <vector>

namespace igi {

using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;
using VertexMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using UVMatrix = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;
using Face = std::array<int, 3>;

// Shape and expression coefficients of the blendshape head.
struct FaceParams {
  std::vector<double> shape;
  std::vector<double> expression;

  // Coefficients must be finite and inside [-kMaxCoefficient, kMaxCoefficient].
  static constexpr double kMaxCoefficient = 3.0;
  void validate() const;
};

struct Intrinsics {
  double focal = 51.2;
  double cx = 16.0;
  double cy = 16.0;
  int width = 32;
  int height = 32;

  // Square image of the given size with focal = focal_scale * size.
  static Intrinsics square(int size, double focal_scale);
};

// Pinhole camera on a sphere around the origin, looking at the origin with world +y up.
class Camera {
 public:
  struct Projection {
    double x = 0.0;      // pixel column (continuous, pixel centers at +0.5)
    double y = 0.0;      // pixel row
    double depth = 0.0;  // distance along the optical axis
    bool valid = false;  // false for points at or behind the camera plane
  };

  static Camera from_pose(double yaw, double pitch, double radius, const Intrinsics& intrinsics);

  double yaw() const { return yaw_; }
  double pitch() const { return pitch_; }
  double radius() const { return radius_; }
  const Intrinsics& intrinsics() const { return intrinsics_; }
  int width() const { return intrinsics_.width; }
  int height() const { return intrinsics_.height; }

  const Vec3& position() const { return position_; }
  const Vec3& forward() const { return forward_; }
  const Vec3& right() const { return right_; }
  const Vec3& up() const { return up_; }

  Projection project(const Vec3& world) const;
  // Unit direction of the ray through continuous pixel coordinates (x, y).
  Vec3 ray_direction(double x, double y) const;

 private:
  double yaw_ = 0.0;
  double pitch_ = 0.0;
  double radius_ = 1.0;
  Intrinsics intrinsics_;
  Vec3 position_;
  Vec3 forward_;
  Vec3 right_;
  Vec3 up_;
};

Camera camera_from_pose(double yaw, double pitch, double radius, const Intrinsics& intrinsics);

struct Mesh {
  VertexMatrix vertices;
  std::vector<Face> faces;
  UVMatrix uv;
  std::vector<int> landmark_indices;

  int num_vertices() const { return static_cast<int>(vertices.rows()); }
  int num_faces() const { return static_cast<int>(faces.size()); }
  Vec3 vertex(int i) const { return vertices.row(i).transpose(); }
  Vec2 texcoord(int i) const { return uv.row(i).transpose(); }
  // Outward (unnormalized) normal of face f; its length is twice the triangle area.
  Vec3 face_normal(int f) const;
  double face_area(int f) const { return 0.5 * face_normal(f).norm(); }
};

struct Landmarks2d {
  Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor> points;
  std::vector<bool> valid;
};

struct FaceModelOptions {
  std::uint64_t seed = 7;
  int shape_dims = 4;
  int expression_dims = 4;
  int rings = 24;     // latitude bands
  int segments = 48;  // longitude bands
  Vec3 radii{0.45, 0.5, 0.46};
  double shape_budget = 0.08;       // max summed shape displacement, fraction of head radius
  double expression_budget = 0.07;  // same for expression; the two sum to 15%
};

// Procedural linear blendshape head. The surface is a lat-long ellipsoid whose UV layout devotes most
// of the unit square to the frontal (face) hemisphere; seams and poles duplicate vertices so every
// UV coordinate lies in [0,1]^2 and the surface stays closed.
class FaceModel {
 public:
  static constexpr int kNumLandmarks = 16;

  static FaceModel build(const FaceModelOptions& options);
  static FaceModel build(std::uint64_t seed, int shape_dims, int expression_dims);
  // Assemble from stored components (checkpoint loading, test fixtures).
  FaceModel(Mesh base, Eigen::MatrixXd shape_basis, Eigen::MatrixXd expression_basis);

  const Mesh& base() const { return base_; }
  // 3V x K matrices, rows ordered (v0.x, v0.y, v0.z, v1.x, ...).
  const Eigen::MatrixXd& shape_basis() const { return shape_basis_; }
  const Eigen::MatrixXd& expression_basis() const { return expression_basis_; }
  int shape_dims() const { return static_cast<int>(shape_basis_.cols()); }
  int expression_dims() const { return static_cast<int>(expression_basis_.cols()); }

  Mesh deform(const FaceParams& params) const;
  Landmarks2d landmarks2d(const FaceParams& params, const Camera& camera) const;
  FaceParams neutral() const;

  // Landmark polylines (indices into the landmark list) used to draw contour maps.
  static const std::vector<std::vector<int>>& landmark_contours();

 private:
  Mesh base_;
  Eigen::MatrixXd shape_basis_;
  Eigen::MatrixXd expression_basis_;
};

// Project a set of landmark vertices; shared by landmarks2d and tests.
Landmarks2d project_points(const Mesh& mesh, const std::vector<int>& indices, const Camera& camera);

}  // namespace igi

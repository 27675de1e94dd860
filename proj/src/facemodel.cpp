#include "igi/facemodel.hpp"

#include "igi/common.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace igi {

namespace {

constexpr double kPi = std::numbers::pi;

// Piecewise-linear warp between an angle magnitude in [0, max_angle] and a UV half-offset in
// [0, 0.5]. Angles up to `focus_angle` receive `focus_share` of the half range.
struct AngleWarp {
  double focus_angle;
  double focus_share;
  double max_angle;

  double to_angle(double offset) const {
    const double d = std::abs(offset);
    const double s = d <= focus_share
                         ? d / focus_share * focus_angle
                         : focus_angle + (d - focus_share) / (0.5 - focus_share) * (max_angle - focus_angle);
    return offset < 0 ? -s : s;
  }
};

constexpr AngleWarp kAzimuthWarp{1.15, 0.47, kPi};
constexpr AngleWarp kLatitudeWarp{1.0, 0.47, kPi / 2};

Vec3 direction_from_uv(double u, double v) {
  const double azimuth = kAzimuthWarp.to_angle(u - 0.5);
  const double latitude = -kLatitudeWarp.to_angle(v - 0.5);  // v = 0 is the top of the head
  return {std::cos(latitude) * std::sin(azimuth), std::sin(latitude), std::cos(latitude) * std::cos(azimuth)};
}

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec3 n(normal(rng), normal(rng), normal(rng));
  return n.normalized();
}

const std::vector<Vec3>& landmark_directions() {
  static const std::vector<Vec3> dirs = [] {
    std::vector<Vec3> d = {
        {0.0, 0.0, 1.0},      // 0 nose tip
        {0.0, 0.22, 1.0},     // 1 nose bridge
        {0.0, -0.12, 1.0},    // 2 nose base
        {-0.33, 0.25, 0.9},   // 3 left eye center
        {0.33, 0.25, 0.9},    // 4 right eye center
        {-0.5, 0.25, 0.8},    // 5 left eye outer corner
        {-0.16, 0.25, 0.95},  // 6 left eye inner corner
        {0.16, 0.25, 0.95},   // 7 right eye inner corner
        {0.5, 0.25, 0.8},     // 8 right eye outer corner
        {-0.3, 0.45, 0.85},   // 9 left brow
        {0.3, 0.45, 0.85},    // 10 right brow
        {-0.28, -0.4, 0.87},  // 11 left mouth corner
        {0.0, -0.32, 0.95},   // 12 upper lip
        {0.28, -0.4, 0.87},   // 13 right mouth corner
        {0.0, -0.47, 0.9},    // 14 lower lip
        {0.0, -0.72, 0.7},    // 15 chin
    };
    for (auto& v : d) v.normalize();
    return d;
  }();
  return dirs;
}

// Expression bumps are centred on mouth, jaw, eyes and brows.
const std::vector<Vec3>& expression_centres() {
  static const std::vector<Vec3> c = [] {
    std::vector<Vec3> d = {{0.0, -0.4, 0.92},  {0.0, -0.65, 0.76}, {-0.3, -0.38, 0.9}, {0.3, -0.38, 0.9},
                           {-0.33, 0.27, 0.9}, {0.33, 0.27, 0.9},  {-0.3, 0.47, 0.85}, {0.3, 0.47, 0.85}};
    for (auto& v : d) v.normalize();
    return d;
  }();
  return c;
}

void fix_orientation(Mesh& mesh) {
  for (int f = 0; f < mesh.num_faces(); ++f) {
    const auto& face = mesh.faces[f];
    const Vec3 centroid = (mesh.vertex(face[0]) + mesh.vertex(face[1]) + mesh.vertex(face[2])) / 3.0;
    if (mesh.face_normal(f).dot(centroid) < 0) std::swap(mesh.faces[f][1], mesh.faces[f][2]);
  }
}

}  // namespace

void FaceParams::validate() const {
  auto check = [](const std::vector<double>& coeffs, const char* what) {
    for (double c : coeffs) {
      require(std::isfinite(c), std::string(what) + " coefficient is not finite");
      require(std::abs(c) <= kMaxCoefficient, std::string(what) + " coefficient outside [-3, 3]");
    }
  };
  check(shape, "shape");
  check(expression, "expression");
}

Intrinsics Intrinsics::square(int size, double focal_scale) {
  return Intrinsics{focal_scale * size, size / 2.0, size / 2.0, size, size};
}

Camera Camera::from_pose(double yaw, double pitch, double radius, const Intrinsics& intrinsics) {
  require(radius > 0.0, "camera radius must be positive");
  require(std::abs(pitch) < kPi / 2, "camera pitch must satisfy |pitch| < pi/2");
  require(intrinsics.width > 0 && intrinsics.height > 0 && intrinsics.focal > 0, "invalid intrinsics");
  Camera cam;
  cam.yaw_ = yaw;
  cam.pitch_ = pitch;
  cam.radius_ = radius;
  cam.intrinsics_ = intrinsics;
  cam.position_ = radius * Vec3(std::cos(pitch) * std::sin(yaw), std::sin(pitch), std::cos(pitch) * std::cos(yaw));
  cam.forward_ = -cam.position_ / radius;
  cam.right_ = cam.forward_.cross(Vec3::UnitY()).normalized();
  cam.up_ = cam.right_.cross(cam.forward_);
  return cam;
}

Camera camera_from_pose(double yaw, double pitch, double radius, const Intrinsics& intrinsics) {
  return Camera::from_pose(yaw, pitch, radius, intrinsics);
}

Camera::Projection Camera::project(const Vec3& world) const {
  const Vec3 rel = world - position_;
  Projection p;
  p.depth = rel.dot(forward_);
  p.valid = p.depth > 1e-9;
  if (!p.valid) return p;
  p.x = intrinsics_.cx + intrinsics_.focal * rel.dot(right_) / p.depth;
  p.y = intrinsics_.cy - intrinsics_.focal * rel.dot(up_) / p.depth;
  return p;
}

Vec3 Camera::ray_direction(double x, double y) const {
  const double xc = (x - intrinsics_.cx) / intrinsics_.focal;
  const double yc = -(y - intrinsics_.cy) / intrinsics_.focal;
  return (forward_ + xc * right_ + yc * up_).normalized();
}

Vec3 Mesh::face_normal(int f) const {
  const auto& face = faces[f];
  const Vec3 a = vertex(face[0]);
  return (vertex(face[1]) - a).cross(vertex(face[2]) - a);
}

FaceModel::FaceModel(Mesh base, Eigen::MatrixXd shape_basis, Eigen::MatrixXd expression_basis)
    : base_(std::move(base)), shape_basis_(std::move(shape_basis)), expression_basis_(std::move(expression_basis)) {
  require(shape_basis_.rows() == 3 * base_.num_vertices(), "shape basis rows must equal 3V");
  require(expression_basis_.rows() == 3 * base_.num_vertices(), "expression basis rows must equal 3V");
}

FaceModel FaceModel::build(std::uint64_t seed, int shape_dims, int expression_dims) {
  FaceModelOptions options;
  options.seed = seed;
  options.shape_dims = shape_dims;
  options.expression_dims = expression_dims;
  return build(options);
}

FaceModel FaceModel::build(const FaceModelOptions& options) {
  require(options.shape_dims >= 1 && options.expression_dims >= 1, "basis sizes must be >= 1");
  require(options.rings >= 3 && options.segments >= 3, "mesh resolution too small");
  const int rings = options.rings;
  const int segs = options.segments;

  Mesh mesh;
  const int interior = (rings - 1) * (segs + 1);
  const int num_vertices = interior + 2 * segs;
  mesh.vertices.resize(num_vertices, 3);
  mesh.uv.resize(num_vertices, 2);
  std::vector<Vec3> directions(num_vertices);

  auto row_index = [segs](int i, int j) { return (i - 1) * (segs + 1) + j; };
  auto north = [interior](int j) { return interior + j; };
  auto south = [interior, segs](int j) { return interior + segs + j; };

  auto set_vertex = [&](int idx, double u, double v, const Vec3& dir) {
    directions[idx] = dir;
    mesh.vertices.row(idx) = options.radii.cwiseProduct(dir).transpose();
    mesh.uv.row(idx) = Vec2(u, v).transpose();
  };
  for (int i = 1; i < rings; ++i) {
    const double v = static_cast<double>(i) / rings;
    for (int j = 0; j <= segs; ++j) {
      const double u = static_cast<double>(j) / segs;
      set_vertex(row_index(i, j), u, v, direction_from_uv(u, v));
    }
  }
  for (int j = 0; j < segs; ++j) {
    const double u = (j + 0.5) / segs;
    set_vertex(north(j), u, 0.0, Vec3::UnitY());
    set_vertex(south(j), u, 1.0, -Vec3::UnitY());
  }

  for (int j = 0; j < segs; ++j) {
    mesh.faces.push_back({north(j), row_index(1, j), row_index(1, j + 1)});
    for (int i = 1; i < rings - 1; ++i) {
      const int a = row_index(i, j), b = row_index(i, j + 1);
      const int c = row_index(i + 1, j + 1), d = row_index(i + 1, j);
      mesh.faces.push_back({a, d, c});
      mesh.faces.push_back({a, c, b});
    }
    mesh.faces.push_back({row_index(rings - 1, j), south(j), row_index(rings - 1, j + 1)});
  }
  fix_orientation(mesh);

  const auto& lm_dirs = landmark_directions();
  for (const Vec3& target : lm_dirs) {
    int best = -1;
    double best_dot = -2.0;
    for (int v = 0; v < num_vertices; ++v) {
      if (std::find(mesh.landmark_indices.begin(), mesh.landmark_indices.end(), v) != mesh.landmark_indices.end())
        continue;
      const double d = directions[v].dot(target);
      if (d > best_dot) {
        best_dot = d;
        best = v;
      }
    }
    mesh.landmark_indices.push_back(best);
  }

  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double head_radius = options.radii.maxCoeff();

  // Radial displacement fields; each column is scaled so its max displacement equals
  // budget * head_radius / K, which bounds the summed displacement for coefficients in [-1, 1].
  auto fill_basis = [&](Eigen::MatrixXd& basis, int dims, double budget, bool localized) {
    basis.setZero(3 * num_vertices, dims);
    const double amplitude = budget * head_radius / dims;
    const auto& centres = expression_centres();
    for (int k = 0; k < dims; ++k) {
      std::array<Vec3, 3> axes;
      std::array<double, 3> freq{}, phase{}, weight{};
      for (int m = 0; m < 3; ++m) {
        axes[m] = random_unit(rng);
        freq[m] = 1.0 + 1.5 * uniform(rng);
        phase[m] = 2.0 * kPi * uniform(rng);
        weight[m] = normal(rng);
      }
      const Vec3& centre = centres[k % centres.size()];
      Eigen::VectorXd field(num_vertices);
      for (int v = 0; v < num_vertices; ++v) {
        const Vec3& d = directions[v];
        double f = 0.0;
        for (int m = 0; m < 3; ++m) f += weight[m] * std::cos(freq[m] * axes[m].dot(d) + phase[m]);
        if (localized) {
          const double bump = std::exp(-(d - centre).squaredNorm() / (2.0 * 0.3 * 0.3));
          f = bump * (1.0 + 0.3 * std::tanh(f));
        }
        field[v] = f;
      }
      const double peak = field.cwiseAbs().maxCoeff();
      if (peak > 0) field *= amplitude / peak;
      for (int v = 0; v < num_vertices; ++v) basis.block(3 * v, k, 3, 1) = directions[v] * field[v];
    }
  };
  Eigen::MatrixXd shape_basis, expression_basis;
  fill_basis(shape_basis, options.shape_dims, options.shape_budget, false);
  fill_basis(expression_basis, options.expression_dims, options.expression_budget, true);
  return FaceModel(std::move(mesh), std::move(shape_basis), std::move(expression_basis));
}

Mesh FaceModel::deform(const FaceParams& params) const {
  require(static_cast<int>(params.shape.size()) == shape_dims(), "shape coefficient dimension mismatch");
  require(static_cast<int>(params.expression.size()) == expression_dims(),
          "expression coefficient dimension mismatch");
  params.validate();
  const Eigen::Map<const Eigen::VectorXd> s(params.shape.data(), shape_dims());
  const Eigen::Map<const Eigen::VectorXd> e(params.expression.data(), expression_dims());
  const Eigen::VectorXd offset = shape_basis_ * s + expression_basis_ * e;

  Mesh out = base_;
  const Eigen::Map<const VertexMatrix> displacement(offset.data(), base_.num_vertices(), 3);
  out.vertices += displacement;
  return out;
}

Landmarks2d project_points(const Mesh& mesh, const std::vector<int>& indices, const Camera& camera) {
  Landmarks2d out;
  out.points.setZero(static_cast<Eigen::Index>(indices.size()), 2);
  out.valid.resize(indices.size(), false);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto p = camera.project(mesh.vertex(indices[i]));
    out.valid[i] = p.valid;
    if (p.valid) out.points.row(static_cast<Eigen::Index>(i)) << p.x, p.y;
  }
  return out;
}

Landmarks2d FaceModel::landmarks2d(const FaceParams& params, const Camera& camera) const {
  return project_points(deform(params), base_.landmark_indices, camera);
}

FaceParams FaceModel::neutral() const {
  return FaceParams{std::vector<double>(shape_dims(), 0.0), std::vector<double>(expression_dims(), 0.0)};
}

const std::vector<std::vector<int>>& FaceModel::landmark_contours() {
  static const std::vector<std::vector<int>> contours = {
      {9},  {10},                  // brows
      {5, 3, 6}, {7, 4, 8},        // eyes
      {1, 0, 2},                   // nose
      {11, 12, 13, 14, 11},        // mouth
      {15}};
  return contours;
}

}  // namespace igi

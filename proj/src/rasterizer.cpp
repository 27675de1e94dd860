#include "igi/rasterizer.hpp"

#include "igi/common.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

namespace igi {

namespace {

namespace F = torch::nn::functional;

struct ScreenVertex {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  bool ok = false;
};

inline double edge(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

// Z-buffered scan over pixel centers. With `perspective`, barycentrics are corrected by 1/z and
// depth is the reciprocal of interpolated 1/z; otherwise both are affine.
Fragments scan(const Mesh& mesh, const std::vector<ScreenVertex>& sv, int height, int width, bool perspective) {
  const auto npix = static_cast<std::size_t>(height) * width;
  std::vector<double> zbuf(npix, std::numeric_limits<double>::infinity());
  std::vector<std::int64_t> face_buf(npix, -1);
  std::vector<double> bary_buf(npix * 3, 0.0);

  for (int f = 0; f < mesh.num_faces(); ++f) {
    const auto& face = mesh.faces[f];
    const ScreenVertex& a = sv[face[0]];
    const ScreenVertex& b = sv[face[1]];
    const ScreenVertex& c = sv[face[2]];
    if (!a.ok || !b.ok || !c.ok) continue;
    const double area = edge(a.x, a.y, b.x, b.y, c.x, c.y);
    if (std::abs(area) < 1e-14) continue;
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min({a.x, b.x, c.x}) - 0.5)));
    const int x1 = std::min(width - 1, static_cast<int>(std::ceil(std::max({a.x, b.x, c.x}) - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min({a.y, b.y, c.y}) - 0.5)));
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil(std::max({a.y, b.y, c.y}) - 0.5)));
    for (int py = y0; py <= y1; ++py) {
      for (int px = x0; px <= x1; ++px) {
        const double cx = px + 0.5, cy = py + 0.5;
        const double w0 = edge(b.x, b.y, c.x, c.y, cx, cy) / area;
        const double w1 = edge(c.x, c.y, a.x, a.y, cx, cy) / area;
        const double w2 = 1.0 - w0 - w1;
        constexpr double kEps = -1e-10;
        if (w0 < kEps || w1 < kEps || w2 < kEps) continue;
        double depth, b0 = w0, b1 = w1, b2 = w2;
        if (perspective) {
          const double q0 = w0 / a.z, q1 = w1 / b.z, q2 = w2 / c.z;
          const double s = q0 + q1 + q2;
          depth = 1.0 / s;
          b0 = q0 / s;
          b1 = q1 / s;
          b2 = q2 / s;
        } else {
          depth = w0 * a.z + w1 * b.z + w2 * c.z;
        }
        const std::size_t idx = static_cast<std::size_t>(py) * width + px;
        if (depth < zbuf[idx]) {
          zbuf[idx] = depth;
          face_buf[idx] = f;
          bary_buf[3 * idx] = b0;
          bary_buf[3 * idx + 1] = b1;
          bary_buf[3 * idx + 2] = b2;
        }
      }
    }
  }

  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  Fragments out;
  out.face = torch::from_blob(face_buf.data(), {height, width}, torch::kInt64).clone();
  out.bary = torch::from_blob(bary_buf.data(), {height, width, 3}, opts).clone();
  out.mask = out.face.ge(0).to(torch::kFloat64);
  std::vector<double> depth(npix, 0.0), uv(npix * 2, 0.0);
  for (std::size_t i = 0; i < npix; ++i) {
    if (face_buf[i] < 0) continue;
    depth[i] = zbuf[i];
    const auto& face = mesh.faces[face_buf[i]];
    Vec2 t = Vec2::Zero();
    for (int k = 0; k < 3; ++k) t += bary_buf[3 * i + k] * mesh.texcoord(face[k]);
    uv[2 * i] = t.x();
    uv[2 * i + 1] = t.y();
  }
  out.depth = torch::from_blob(depth.data(), {height, width}, opts).clone();
  out.uv = torch::from_blob(uv.data(), {height, width, 2}, opts).clone();
  return out;
}

}  // namespace

Fragments rasterize_fragments(const Mesh& mesh, const Camera& camera) {
  std::vector<ScreenVertex> sv(mesh.num_vertices());
  constexpr double kNear = 1e-3;
  for (int v = 0; v < mesh.num_vertices(); ++v) {
    const auto p = camera.project(mesh.vertex(v));
    sv[v] = {p.x, p.y, p.depth, p.valid && p.depth > kNear};
  }
  return scan(mesh, sv, camera.height(), camera.width(), true);
}

Fragments rasterize_fragments(const Mesh& mesh, const PlaneView& view) {
  require(view.resolution > 0 && view.half_extent > 0, "invalid plane view");
  std::vector<ScreenVertex> sv(mesh.num_vertices());
  const double scale = view.resolution / (2.0 * view.half_extent);
  for (int v = 0; v < mesh.num_vertices(); ++v) {
    const Vec3 p = mesh.vertex(v);
    sv[v] = {(p.x() + view.half_extent) * scale, (p.y() + view.half_extent) * scale, -p.z(), true};
  }
  return scan(mesh, sv, view.resolution, view.resolution, false);
}

Fragments rasterize_uv_domain(const Mesh& mesh, int uv_height, int uv_width) {
  std::vector<ScreenVertex> sv(mesh.num_vertices());
  for (int v = 0; v < mesh.num_vertices(); ++v) {
    const Vec2 t = mesh.texcoord(v);
    sv[v] = {t.x() * uv_width, t.y() * uv_height, 0.0, true};
  }
  return scan(mesh, sv, uv_height, uv_width, false);
}

FeatureImage sample_texture(const torch::Tensor& texture, const Fragments& fragments) {
  require(texture.dim() == 3 || texture.dim() == 4, "texture must be C x H x W or B x C x H x W");
  const bool batched = texture.dim() == 4;
  const torch::Tensor tex = batched ? texture : texture.unsqueeze(0);
  const auto opts = tex.options();
  torch::Tensor grid = (fragments.uv.to(opts) * 2.0 - 1.0).unsqueeze(0).expand({tex.size(0), -1, -1, -1});
  torch::Tensor sampled = F::grid_sample(
      tex, grid, F::GridSampleFuncOptions().mode(torch::kBilinear).padding_mode(torch::kBorder).align_corners(false));
  const torch::Tensor mask = fragments.mask.to(opts);
  sampled = sampled * mask;
  return {batched ? sampled : sampled.squeeze(0), mask};
}

FeatureImage sample_texture_batch(const torch::Tensor& texture, const std::vector<const Fragments*>& fragments) {
  require(texture.dim() == 4, "batched texture must be B x C x H x W");
  require(static_cast<std::size_t>(texture.size(0)) == fragments.size(), "one fragment set per batch element");
  const auto opts = texture.options();
  std::vector<torch::Tensor> grids, masks;
  for (const Fragments* f : fragments) {
    grids.push_back(f->uv.to(opts) * 2.0 - 1.0);
    masks.push_back(f->mask.to(opts));
  }
  const torch::Tensor grid = torch::stack(grids);
  const torch::Tensor mask = torch::stack(masks).unsqueeze(1);
  torch::Tensor sampled = F::grid_sample(
      texture, grid, F::GridSampleFuncOptions().mode(torch::kBilinear).padding_mode(torch::kBorder).align_corners(false));
  return {sampled * mask, mask};
}

FeatureImage rasterize(const Mesh& mesh, const torch::Tensor& texture, const Camera& camera) {
  return sample_texture(texture, rasterize_fragments(mesh, camera));
}

FeatureImage rasterize(const Mesh& mesh, const torch::Tensor& texture, const PlaneView& view) {
  return sample_texture(texture, rasterize_fragments(mesh, view));
}

double default_depth_tolerance(const Camera& camera) { return 1e-3 * camera.radius(); }

torch::Tensor UVProjector::apply(const torch::Tensor& image) const {
  require(image.dim() == 3 || image.dim() == 4, "image must be C x H x W or B x C x H x W");
  const bool batched = image.dim() == 4;
  const torch::Tensor img = batched ? image : image.unsqueeze(0);
  const torch::Tensor g = grid.to(img.options()).expand({img.size(0), -1, -1, -1});
  torch::Tensor out = F::grid_sample(
      img, g, F::GridSampleFuncOptions().mode(torch::kBilinear).padding_mode(torch::kZeros).align_corners(false));
  out = out * visibility.to(img.options());
  return batched ? out : out.squeeze(0);
}

namespace {

// Möller-Trumbore; distance along the unit ray to the triangle, if hit in front of the origin.
std::optional<double> ray_triangle(const Vec3& origin, const Vec3& dir, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 e1 = b - a, e2 = c - a;
  const Vec3 pv = dir.cross(e2);
  const double det = e1.dot(pv);
  if (std::abs(det) < 1e-14) return std::nullopt;
  const double inv = 1.0 / det;
  const Vec3 tv = origin - a;
  const double u = tv.dot(pv) * inv;
  if (u < 0.0 || u > 1.0) return std::nullopt;
  const Vec3 qv = tv.cross(e1);
  const double v = dir.dot(qv) * inv;
  if (v < 0.0 || u + v > 1.0) return std::nullopt;
  const double t = e2.dot(qv) * inv;
  if (t <= 0.0) return std::nullopt;
  return t;
}

}  // namespace

UVProjector make_uv_projector(const Mesh& mesh, const Camera& camera, int uv_resolution, double depth_tolerance,
                              const torch::Tensor& coverage) {
  require(uv_resolution > 0, "uv resolution must be positive");
  const Fragments texels = rasterize_uv_domain(mesh, uv_resolution, uv_resolution);
  const Fragments view = rasterize_fragments(mesh, camera);
  const int width = camera.width(), height = camera.height();
  const torch::Tensor cover = coverage.defined() ? coverage.to(torch::kFloat64).contiguous() : view.mask;
  require(cover.size(0) == height && cover.size(1) == width, "coverage shape must match the camera resolution");

  const auto tex_face = texels.face.accessor<std::int64_t, 2>();
  const auto tex_bary = texels.bary.accessor<double, 3>();
  const auto view_face = view.face.accessor<std::int64_t, 2>();
  const auto cover_acc = cover.accessor<double, 2>();

  const int n = uv_resolution;
  std::vector<double> grid(static_cast<std::size_t>(n) * n * 2, -2.0);
  std::vector<double> vis(static_cast<std::size_t>(n) * n, 0.0);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const std::int64_t f = tex_face[r][c];
      if (f < 0) continue;
      const auto& face = mesh.faces[f];
      Vec3 p = Vec3::Zero();
      for (int k = 0; k < 3; ++k) p += tex_bary[r][c][k] * mesh.vertex(face[k]);
      const Vec3 normal = mesh.face_normal(static_cast<int>(f));
      if (normal.dot(p - camera.position()) >= 0) continue;  // back-facing
      const auto proj = camera.project(p);
      if (!proj.valid) continue;
      const int fx0 = static_cast<int>(std::floor(proj.x - 0.5));
      const int fy0 = static_cast<int>(std::floor(proj.y - 0.5));
      if (fx0 < 0 || fy0 < 0 || fx0 + 1 >= width || fy0 + 1 >= height) continue;
      bool covered = true;
      for (int dy = 0; dy <= 1; ++dy)
        for (int dx = 0; dx <= 1; ++dx) covered = covered && cover_acc[fy0 + dy][fx0 + dx] > 0.5;
      if (!covered) continue;
      // Occlusion: cast the ray from the camera through p against the faces visible around the
      // projected pixel and compare the nearest hit with the depth of p.
      const int px = std::clamp(static_cast<int>(std::floor(proj.x)), 0, width - 1);
      const int py = std::clamp(static_cast<int>(std::floor(proj.y)), 0, height - 1);
      const Vec3 dir = (p - camera.position()).normalized();
      const double axial = dir.dot(camera.forward());
      double nearest = proj.depth;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int qx = px + dx, qy = py + dy;
          if (qx < 0 || qy < 0 || qx >= width || qy >= height) continue;
          const std::int64_t g = view_face[qy][qx];
          if (g < 0 || g == f) continue;
          const auto& tri = mesh.faces[g];
          const auto t = ray_triangle(camera.position(), dir, mesh.vertex(tri[0]), mesh.vertex(tri[1]),
                                      mesh.vertex(tri[2]));
          if (t) nearest = std::min(nearest, *t * axial);
        }
      }
      if (proj.depth > nearest + depth_tolerance) continue;

      const std::size_t idx = static_cast<std::size_t>(r) * n + c;
      vis[idx] = 1.0;
      grid[2 * idx] = 2.0 * proj.x / width - 1.0;
      grid[2 * idx + 1] = 2.0 * proj.y / height - 1.0;
    }
  }
  UVProjector out;
  out.uv_height = n;
  out.uv_width = n;
  out.grid = torch::from_blob(grid.data(), {1, n, n, 2}, torch::kFloat64).clone();
  out.visibility = torch::from_blob(vis.data(), {n, n}, torch::kFloat64).clone();
  return out;
}

UVImage project_to_uv(const FeatureImage& image, const Mesh& mesh, const Camera& camera, int uv_resolution,
                      double depth_tolerance) {
  require(image.data.dim() == 3, "project_to_uv expects a C x H x W image");
  require(image.data.size(1) == camera.height() && image.data.size(2) == camera.width(),
          "image resolution must match the camera");
  const UVProjector projector = make_uv_projector(mesh, camera, uv_resolution, depth_tolerance, image.mask);
  return {projector.apply(image.data), projector.visibility.to(image.data.options())};
}

UVImage project_to_uv(const FeatureImage& image, const Mesh& mesh, const Camera& camera, int uv_resolution) {
  return project_to_uv(image, mesh, camera, uv_resolution, default_depth_tolerance(camera));
}

}  // namespace igi

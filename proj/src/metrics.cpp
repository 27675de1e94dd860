#include "igi/metrics.hpp"

#include "igi/common.hpp"

#include <cmath>
#include <limits>

namespace igi {

double psnr(const torch::Tensor& pred, const torch::Tensor& target) {
  require(pred.sizes() == target.sizes(), "psnr: shape mismatch");
  const double mse = (pred.to(torch::kFloat64) - target.to(torch::kFloat64)).pow(2).mean().item<double>();
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double keypoint_distance(const Landmarks2d& a, const Landmarks2d& b) {
  require(a.points.rows() == b.points.rows(), "keypoint distance: landmark counts differ");
  double sum = 0.0;
  int count = 0;
  for (Eigen::Index i = 0; i < a.points.rows(); ++i) {
    if (!a.valid[static_cast<std::size_t>(i)] || !b.valid[static_cast<std::size_t>(i)]) continue;
    sum += (a.points.row(i) - b.points.row(i)).norm();
    ++count;
  }
  return count == 0 ? 0.0 : sum / count;
}

Landmarks2d locate_landmarks(const torch::Tensor& pred, const torch::Tensor& target, const Landmarks2d& landmarks,
                             int radius, int half_patch) {
  require(pred.sizes() == target.sizes() && pred.dim() == 3, "locate_landmarks: images must be C x H x W");
  const torch::Tensor p = pred.to(torch::kFloat64).contiguous();
  const torch::Tensor t = target.to(torch::kFloat64).contiguous();
  const auto pa = p.accessor<double, 3>();
  const auto ta = t.accessor<double, 3>();
  const int c = static_cast<int>(p.size(0)), h = static_cast<int>(p.size(1)), w = static_cast<int>(p.size(2));
  auto at = [&](const auto& a, int ch, int y, int x) {
    return a[ch][std::clamp(y, 0, h - 1)][std::clamp(x, 0, w - 1)];
  };
  Landmarks2d out = landmarks;
  for (Eigen::Index i = 0; i < landmarks.points.rows(); ++i) {
    if (!landmarks.valid[static_cast<std::size_t>(i)]) continue;
    const int cx = static_cast<int>(std::floor(landmarks.points(i, 0)));
    const int cy = static_cast<int>(std::floor(landmarks.points(i, 1)));
    double best = std::numeric_limits<double>::infinity();
    int bx = 0, by = 0;
    for (int dy = -radius; dy <= radius; ++dy) {
      for (int dx = -radius; dx <= radius; ++dx) {
        double ssd = 0.0;
        for (int k = 0; k < c; ++k)
          for (int py = -half_patch; py <= half_patch; ++py)
            for (int px = -half_patch; px <= half_patch; ++px) {
              const double d = at(pa, k, cy + dy + py, cx + dx + px) - at(ta, k, cy + py, cx + px);
              ssd += d * d;
            }
        // Ties keep the displacement closest to zero.
        if (ssd < best - 1e-12 || (std::abs(ssd - best) <= 1e-12 && dx * dx + dy * dy < bx * bx + by * by)) {
          best = ssd;
          bx = dx;
          by = dy;
        }
      }
    }
    out.points(i, 0) = landmarks.points(i, 0) + bx;
    out.points(i, 1) = landmarks.points(i, 1) + by;
  }
  return out;
}

FeatureStats feature_stats(const torch::Tensor& embeddings) {
  require(embeddings.dim() == 2 && embeddings.size(0) >= 2, "feature_stats needs N >= 2 rows of N x D");
  const torch::Tensor e = embeddings.to(torch::kFloat64).contiguous();
  const auto n = e.size(0), d = e.size(1);
  Eigen::MatrixXd m(n, d);
  const auto a = e.accessor<double, 2>();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) m(i, j) = a[i][j];
  FeatureStats s;
  s.mean = m.colwise().mean().transpose();
  const Eigen::MatrixXd centered = m.rowwise() - s.mean.transpose();
  s.cov = centered.transpose() * centered / double(n - 1);
  return s;
}

namespace {

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  const double scale = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
  if (eig.eigenvalues().minCoeff() < -1e-8 * scale) throw InvalidArgument("frechet_distance: covariance is not PSD");
  const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
  require(a.mean.size() == b.mean.size() && a.cov.rows() == b.cov.rows(), "frechet_distance: dimension mismatch");
  // tr((Sa Sb)^(1/2)) = tr((Sa^(1/2) Sb Sa^(1/2))^(1/2)), which stays symmetric.
  const Eigen::MatrixXd ra = psd_sqrt(a.cov);
  const Eigen::MatrixXd cross = psd_sqrt(ra * (0.5 * (b.cov + b.cov.transpose())) * ra);
  psd_sqrt(b.cov);  // rejects a non-PSD second covariance
  const double d = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * cross.trace();
  return std::max(0.0, d);
}

MetricsReport compute_metrics(const std::vector<torch::Tensor>& pred, const std::vector<torch::Tensor>& target,
                              ProxyNetworkImpl& proxy, const std::vector<Landmarks2d>& landmarks) {
  require(pred.size() == target.size(), "compute_metrics: sequence lengths differ");
  require(!pred.empty(), "compute_metrics: empty sequence");
  require(landmarks.empty() || landmarks.size() == target.size(), "compute_metrics: landmark count mismatch");
  torch::NoGradGuard no_grad;
  MetricsReport r;
  const torch::Tensor p = torch::stack(pred);
  const torch::Tensor t = torch::stack(target);
  const double diag = std::hypot(double(p.size(-1)), double(p.size(-2)));
  const torch::Tensor csim = csim_proxy(proxy, p, t);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto k = static_cast<int64_t>(i);
    r.psnr_series.push_back(psnr(pred[i], target[i]));
    r.l1_series.push_back(mean_abs(pred[i], target[i]).item<double>());
    r.lpips_series.push_back(lpips_proxy(proxy, p.narrow(0, k, 1), t.narrow(0, k, 1)).item<double>());
    r.csim_series.push_back(csim[k].item<double>());
    double akd = 0.0;
    if (!landmarks.empty()) akd = keypoint_distance(locate_landmarks(pred[i], target[i], landmarks[i]), landmarks[i]);
    r.akd_series.push_back(akd / diag);
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / double(v.size());
  };
  r.psnr = mean(r.psnr_series);
  r.l1 = mean(r.l1_series);
  r.lpips = mean(r.lpips_series);
  r.csim = mean(r.csim_series);
  r.akd = mean(r.akd_series);
  if (pred.size() >= 2) r.fid = frechet_distance(feature_stats(proxy.embedding(p)), feature_stats(proxy.embedding(t)));
  return r;
}

nlohmann::json to_json(const MetricsReport& r, bool with_series) {
  nlohmann::json j{{"psnr", r.psnr}, {"l1", r.l1}, {"lpips", r.lpips}, {"csim", r.csim}, {"akd", r.akd}, {"fid", r.fid}};
  if (with_series) {
    j["series"] = {{"psnr", r.psnr_series},
                   {"l1", r.l1_series},
                   {"lpips", r.lpips_series},
                   {"csim", r.csim_series},
                   {"akd", r.akd_series}};
  }
  return j;
}

}  // namespace igi

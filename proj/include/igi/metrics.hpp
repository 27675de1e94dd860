#pragma once

#include "igi/facemodel.hpp"
#include "igi/losses.hpp"

#include <Eigen/Dense>

namespace igi {

constexpr double kPsnrCap = 99.0;

// 10 log10(1 / MSE) for images in [0,1], capped at kPsnrCap.
double psnr(const torch::Tensor& pred, const torch::Tensor& target);

// Mean Euclidean distance between corresponding valid landmarks, in pixels.
double keypoint_distance(const Landmarks2d& a, const Landmarks2d& b);

// Landmark positions in `pred` found by block matching: each target landmark's patch of `target` is
// searched for within +-radius pixels of the same location in `pred` (sum of squared differences).
Landmarks2d locate_landmarks(const torch::Tensor& pred, const torch::Tensor& target, const Landmarks2d& landmarks,
                             int radius = 3, int half_patch = 2);

struct FeatureStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};
// Mean and unbiased covariance of N x D embeddings.
FeatureStats feature_stats(const torch::Tensor& embeddings);
// ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2)).
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

struct MetricsReport {
  double psnr = 0.0;
  double l1 = 0.0;
  double lpips = 0.0;
  double csim = 0.0;
  double akd = 0.0;  // normalized by the image diagonal
  double fid = 0.0;
  std::vector<double> psnr_series, l1_series, lpips_series, csim_series, akd_series;
};

// pred and target are equal-length lists of 3 x H x W images; landmarks are the ground-truth
// landmarks of each target frame (may be empty, then akd is 0).
MetricsReport compute_metrics(const std::vector<torch::Tensor>& pred, const std::vector<torch::Tensor>& target,
                              ProxyNetworkImpl& proxy, const std::vector<Landmarks2d>& landmarks = {});

nlohmann::json to_json(const MetricsReport& report, bool with_series = false);

}  // namespace igi

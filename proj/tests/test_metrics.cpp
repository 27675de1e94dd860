#include "support.hpp"

#include <numeric>

using namespace igi;

namespace {

const auto f64 = torch::TensorOptions().dtype(torch::kFloat64);

FeatureStats stats(Eigen::VectorXd mean, Eigen::MatrixXd cov) { return {std::move(mean), std::move(cov)}; }

Eigen::MatrixXd random_psd(std::mt19937_64& rng, int d) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd a(d, d + 2);
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) a(i, j) = n(rng);
  return a * a.transpose() / double(d);
}

// 2 x 2 closed form: for M with nonnegative real eigenvalues, tr sqrt(M) = sqrt(tr M + 2 sqrt(det M)).
double frechet_2d(const FeatureStats& a, const FeatureStats& b) {
  const Eigen::Matrix2d m = a.cov * b.cov;
  const double tr_sqrt = std::sqrt(m.trace() + 2.0 * std::sqrt(std::max(0.0, m.determinant())));
  return (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
}

Landmarks2d grid_landmarks() {
  Landmarks2d l;
  l.points.resize(9, 2);
  int i = 0;
  for (int y : {10, 16, 22})
    for (int x : {9, 15, 21}) {
      l.points(i, 0) = x + 0.5;
      l.points(i, 1) = y + 0.5;
      ++i;
    }
  l.valid.assign(9, true);
  return l;
}

}  // namespace

TEST_CASE("psnr: closed form, cap and monotonicity") {
  const torch::Tensor img = torch::rand({3, 16, 16}, f64);
  CHECK(psnr(img, img) == kPsnrCap);
  CHECK(psnr(torch::zeros({3, 4, 4}), torch::full({3, 4, 4}, 0.1)) == doctest::Approx(20.0).epsilon(1e-5));
  CHECK(psnr(torch::zeros({3, 4, 4}), torch::ones({3, 4, 4})) == doctest::Approx(0.0));
  CHECK(psnr(img, img + 1e-12) == kPsnrCap);
  const torch::Tensor noise = torch::randn({3, 16, 16}, f64);
  double last = kPsnrCap;
  for (double s : {0.001, 0.01, 0.05, 0.2}) {
    const double p = psnr(img + s * noise, img);
    CHECK(p < last);
    last = p;
  }
  CHECK_THROWS_AS(psnr(img, torch::rand({3, 8, 8})), InvalidArgument);
}

TEST_CASE("keypoint distance") {
  Landmarks2d a = grid_landmarks(), b = grid_landmarks();
  CHECK(keypoint_distance(a, b) == 0.0);
  b.points.col(0).array() += 3.0;
  CHECK(keypoint_distance(a, b) == doctest::Approx(3.0));
  b.points.col(1).array() += 4.0;
  CHECK(keypoint_distance(a, b) == doctest::Approx(5.0));
  // Invalid points are ignored on either side.
  b.points(0, 0) += 100.0;
  b.valid[0] = false;
  CHECK(keypoint_distance(a, b) == doctest::Approx(5.0));
  Landmarks2d c;
  c.points.resize(2, 2);
  c.valid = {true, true};
  CHECK_THROWS_AS(keypoint_distance(a, c), InvalidArgument);
}

TEST_CASE("landmark localization recovers a known image shift") {
  const torch::Tensor target = torch::rand({3, 32, 32}, f64);
  const Landmarks2d truth = grid_landmarks();
  CHECK(keypoint_distance(locate_landmarks(target, target, truth), truth) == 0.0);
  // pred content moved 3 px right: every landmark is found 3 px right of its target position.
  const torch::Tensor pred = torch::roll(target, {3}, {2});
  const Landmarks2d found = locate_landmarks(pred, target, truth);
  CHECK(keypoint_distance(found, truth) == doctest::Approx(3.0));
  for (int i = 0; i < 9; ++i) CHECK(found.points(i, 0) == doctest::Approx(truth.points(i, 0) + 3.0));
  // Diagonal shift.
  CHECK(keypoint_distance(locate_landmarks(torch::roll(target, {2, -2}, {1, 2}), target, truth), truth) ==
        doctest::Approx(std::sqrt(8.0)));
}

TEST_CASE("feature statistics") {
  const torch::Tensor e = torch::tensor({1.0, 2.0, 3.0, 6.0, 5.0, 10.0}, f64).view({3, 2});
  const FeatureStats s = feature_stats(e);
  CHECK(s.mean(0) == doctest::Approx(3.0));
  CHECK(s.mean(1) == doctest::Approx(6.0));
  CHECK(s.cov(0, 0) == doctest::Approx(4.0));
  CHECK(s.cov(1, 1) == doctest::Approx(16.0));
  CHECK(s.cov(0, 1) == doctest::Approx(8.0));
  CHECK_THROWS_AS(feature_stats(torch::rand({1, 4})), InvalidArgument);
}

TEST_CASE("Frechet distance closed forms") {
  std::mt19937_64 rng(8);
  const Eigen::MatrixXd s = random_psd(rng, 4);
  const Eigen::VectorXd mu = Eigen::VectorXd::Random(4);
  CHECK(frechet_distance(stats(mu, s), stats(mu, s)) == doctest::Approx(0.0).scale(1.0).epsilon(1e-9));
  const Eigen::VectorXd d = Eigen::VectorXd::Random(4);
  CHECK(frechet_distance(stats(mu, s), stats(mu + d, s)) == doctest::Approx(d.squaredNorm()).epsilon(1e-8));

  // One dimension: (mu_a - mu_b)^2 + (sigma_a - sigma_b)^2.
  Eigen::VectorXd m1(1), m2(1);
  m1 << 0.5;
  m2 << -1.0;
  Eigen::MatrixXd v1(1, 1), v2(1, 1);
  v1 << 4.0;
  v2 << 0.25;
  CHECK(frechet_distance(stats(m1, v1), stats(m2, v2)) == doctest::Approx(2.25 + 1.5 * 1.5));

  // Commuting (diagonal) covariances: sum of squared root differences.
  const Eigen::VectorXd da = Eigen::VectorXd::Random(5).cwiseAbs(), db = Eigen::VectorXd::Random(5).cwiseAbs();
  const Eigen::VectorXd z = Eigen::VectorXd::Zero(5);
  CHECK(frechet_distance(stats(z, da.asDiagonal()), stats(z, db.asDiagonal())) ==
        doctest::Approx((da.cwiseSqrt() - db.cwiseSqrt()).squaredNorm()).epsilon(1e-9));

  for (int trial = 0; trial < 20; ++trial) {
    const FeatureStats a = stats(Eigen::VectorXd::Random(2), random_psd(rng, 2));
    const FeatureStats b = stats(Eigen::VectorXd::Random(2), random_psd(rng, 2));
    CHECK(frechet_distance(a, b) == doctest::Approx(frechet_2d(a, b)).epsilon(1e-8));
    CHECK(frechet_distance(a, b) == doctest::Approx(frechet_distance(b, a)).epsilon(1e-8));
    CHECK(frechet_distance(a, b) >= 0.0);
  }

  Eigen::MatrixXd bad = Eigen::MatrixXd::Identity(2, 2);
  bad(1, 1) = -1.0;
  const Eigen::VectorXd z2 = Eigen::VectorXd::Zero(2);
  CHECK_THROWS_AS(frechet_distance(stats(z2, bad), stats(z2, Eigen::MatrixXd::Identity(2, 2))), InvalidArgument);
  CHECK_THROWS_AS(frechet_distance(stats(z2, Eigen::MatrixXd::Identity(2, 2)), stats(z2, bad)), InvalidArgument);
  CHECK_THROWS_AS(frechet_distance(stats(z2, bad.topLeftCorner(1, 1)), stats(z2, bad)), InvalidArgument);
}

TEST_CASE("compute_metrics aggregates per-frame series") {
  ProxyNetwork proxy(77);
  std::vector<torch::Tensor> pred, target;
  std::vector<Landmarks2d> lms;
  for (int i = 0; i < 4; ++i) {
    target.push_back(torch::rand({3, 32, 32}));
    pred.push_back((target.back() + 0.05 * (i + 1) * torch::randn({3, 32, 32})).clamp(0, 1));
    lms.push_back(grid_landmarks());
  }
  const MetricsReport r = compute_metrics(pred, target, *proxy, lms);
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
  REQUIRE(r.psnr_series.size() == 4);
  CHECK(r.psnr == doctest::Approx(mean(r.psnr_series)));
  CHECK(r.l1 == doctest::Approx(mean(r.l1_series)));
  CHECK(r.lpips == doctest::Approx(mean(r.lpips_series)));
  CHECK(r.csim == doctest::Approx(mean(r.csim_series)));
  CHECK(r.akd == doctest::Approx(mean(r.akd_series)));
  for (int i = 0; i < 4; ++i) {
    CHECK(r.psnr_series[i] == doctest::Approx(psnr(pred[i], target[i])));
    CHECK(r.l1_series[i] == doctest::Approx((pred[i] - target[i]).abs().mean().item<double>()).epsilon(1e-5));
  }
  CHECK(r.psnr_series.front() > r.psnr_series.back());
  CHECK(r.fid >= 0.0);

  const MetricsReport same = compute_metrics(target, target, *proxy, lms);
  CHECK(same.psnr == kPsnrCap);
  CHECK(same.l1 == 0.0);
  CHECK(same.akd == 0.0);
  CHECK(same.csim == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(same.fid == doctest::Approx(0.0).scale(1.0).epsilon(1e-6));

  const nlohmann::json j = to_json(r, true);
  CHECK(j.at("psnr").get<double>() == r.psnr);
  CHECK(j.at("series").at("l1").size() == 4);
  CHECK_THROWS_AS(compute_metrics({}, {}, *proxy), InvalidArgument);
  CHECK_THROWS_AS(compute_metrics(pred, target, *proxy, {grid_landmarks()}), InvalidArgument);
}

#pragma once

#include "igi/baselines.hpp"
#include "igi/checkpoint.hpp"
#include "igi/common.hpp"
#include "igi/pipeline.hpp"
#include "igi/schedule.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

namespace igi::test {

inline World& shared_world() {
  static World world = make_world(Config{});
  return world;
}

inline double max_abs_diff(const torch::Tensor& a, const torch::Tensor& b) {
  return (a.to(torch::kFloat64) - b.to(torch::kFloat64)).abs().max().item<double>();
}

inline bool bit_equal(const torch::Tensor& a, const torch::Tensor& b) { return a.sizes() == b.sizes() && torch::equal(a, b); }

inline FaceParams random_params(std::mt19937_64& rng, const FaceModel& face, double range = 1.0) {
  std::uniform_real_distribution<double> u(-range, range);
  FaceParams p = face.neutral();
  for (double& s : p.shape) s = u(rng);
  for (double& e : p.expression) e = u(rng);
  return p;
}

using oracle::fd_relative_error;

}  // namespace igi::test

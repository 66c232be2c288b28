#pragma once

// One-dimensional bimodal toy for distillation checks. Rows of a sequence are
// independent samples: with attention and positional encoding off the network
// acts per row, so one N x 1 "clip" carries N draws at a shared noise level.

#include <algorithm>
#include <random>
#include <vector>

#include "lm2d/consistency.hpp"
#include "lm2d/diffusion.hpp"
#include "lm2d/sampling.hpp"

namespace lm2d::test {

struct BimodalToy {
  double centre = 1.0;
  double spread = 0.1;

  Matrix draw(Eigen::Index n, std::mt19937_64& rng) const {
    std::bernoulli_distribution side(0.5);
    std::normal_distribution<double> jitter(0.0, spread);
    Matrix x(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) x(i, 0) = (side(rng) ? centre : -centre) + jitter(rng);
    return x;
  }
};

inline NetworkConfig toy_network() {
  NetworkConfig c;
  c.feature_dim = 1;
  c.cond_dim = 0;
  c.width = 32;
  c.blocks = 2;
  c.heads = 1;
  c.ff_mult = 2;
  c.attention = false;
  c.positional = false;
  c.window_frames = 1;
  return c;
}

inline std::vector<TrainingExample> toy_batch(const BimodalToy& toy, int examples, Eigen::Index rows,
                                              std::mt19937_64& rng) {
  std::vector<TrainingExample> batch(examples);
  for (auto& e : batch) {
    e.motion = toy.draw(rows, rng);
    e.clip_id = "toy";
  }
  return batch;
}

inline void train_toy_teacher(DenoiserModel& teacher, const BimodalToy& toy, int steps, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  AdamState opt;
  AdamConfig adam;
  adam.lr = 2e-3;
  const LossWeights rec_only{0.0, 0.0};
  DiffusionSchedule schedule;
  for (int i = 0; i < steps; ++i) {
    const auto batch = toy_batch(toy, 16, 64, rng);
    train_step(teacher, batch, schedule, rec_only, opt, adam, rng, nullptr);
  }
}

inline void distill_toy(DistillState& state, ConsistencyModel& student, const Denoiser& teacher,
                        const BimodalToy& toy, int steps, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  DistillConfig cfg;
  cfg.adam.lr = 1e-3;
  for (int i = 0; i < steps; ++i) {
    const auto batch = toy_batch(toy, 16, 64, rng);
    cd_train_step(state, student, teacher, batch, rng, cfg);
  }
}

/// W1 between two equal-size 1-D samples: mean gap between order statistics.
inline double wasserstein1(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

inline std::vector<double> column(const Matrix& m) { return {m.data(), m.data() + m.rows()}; }

}  // namespace lm2d::test

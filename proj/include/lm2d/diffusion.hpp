#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "lm2d/network.hpp"
#include "lm2d/skeleton.hpp"

namespace lm2d {

/// Variance-exploding process: drift 0, diffusion g(t) = sqrt(2t), so the
/// marginal at time t is z_t = x + t * noise.
struct DiffusionSchedule {
  double epsilon = 0.002;
  double T = 80.0;
  double sigma_data = 0.5;
  double rho = 7.0;
  int n_grid = 18;

  void validate() const;
  /// `nodes` times, strictly increasing from epsilon to T, rho-spaced.
  std::vector<double> grid(int nodes) const;
  std::vector<double> grid() const { return grid(n_grid); }
};

struct LossWeights {
  double lambda_pos = 1.0;
  double lambda_vel = 1.0;
};

Matrix perturb(const Matrix& x, double t, const Matrix& noise);

/// Mean over all elements of (x - x_hat)^2.
double loss_reconstruction(const Matrix& x, const Matrix& x_hat);
/// (1/N) sum_i ||FK(x_i) - FK(x_hat_i)||^2 over the 72 position coordinates.
double loss_positions(const Matrix& x, const Matrix& x_hat, const Skeleton& skeleton);
/// (1/(N-1)) sum_i ||(x_{i+1} - x_i) - (x_hat_{i+1} - x_hat_i)||^2.
double loss_velocity(const Matrix& x, const Matrix& x_hat);
double loss_total(const Matrix& x, const Matrix& x_hat, const Skeleton& skeleton, const LossWeights& weights);

struct LossTerms {
  ag::Var total, rec, pos, vel;
};

/// Differentiable L = L_rec + lambda_pos L_pos + lambda_vel L_vel. Terms with
/// zero weight are not built, so skeleton may be null when lambda_pos == 0.
LossTerms loss_terms(ag::Var x, ag::Var x_hat, const Skeleton* skeleton, const LossWeights& weights);

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Global gradient-norm clip; 0 disables.
  double clip_norm = 1.0;
};

struct AdamState {
  Eigen::VectorXd m, v;
  long step = 0;

  void update(Eigen::VectorXd& params, Eigen::VectorXd grad, const AdamConfig& cfg);
};

/// One training window: motion (N x feature_dim) with its conditioning
/// (N x cond_dim, or empty when the model is unconditional).
struct TrainingExample {
  Matrix motion;
  Matrix cond;
  std::string clip_id;
  int start_frame = 0;
};

/// ln t ~ Normal(-1.2, 1.2), clamped to [epsilon, T].
double sample_training_time(std::mt19937_64& rng, const DiffusionSchedule& schedule);
Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng);

struct LossAndGradient {
  double loss = 0.0;
  double rec = 0.0, pos = 0.0, vel = 0.0;
  Eigen::VectorXd gradient;
};

/// Batch-mean loss and exact gradient at fixed times and noises. Per-example
/// gradients are computed independently and summed in batch order.
LossAndGradient denoiser_loss_and_gradient(const DenoiserModel& model, std::span<const TrainingExample> batch,
                                           std::span<const double> times, std::span<const Matrix> noises,
                                           const Skeleton* skeleton, const LossWeights& weights, int threads = 1);

struct TrainStepResult {
  double loss = 0.0;
  double rec = 0.0, pos = 0.0, vel = 0.0;
};

/// Samples t and noise per example, evaluates the weighted loss, and applies
/// one Adam update. Throws NumericError naming t and the clip on a NaN loss.
TrainStepResult train_step(DenoiserModel& model, std::span<const TrainingExample> batch,
                           const DiffusionSchedule& schedule, const LossWeights& weights, AdamState& optimizer,
                           const AdamConfig& adam, std::mt19937_64& rng, const Skeleton* skeleton, int threads = 1);

}  // namespace lm2d

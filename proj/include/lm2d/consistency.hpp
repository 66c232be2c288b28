#pragma once

#include <random>
#include <span>

#include "lm2d/diffusion.hpp"
#include "lm2d/network.hpp"
#include "lm2d/sampling.hpp"

namespace lm2d {

/// sigma_data^2 / ((t - eps)^2 + sigma_data^2); exactly 1 at t = eps.
double consistency_c_skip(double t, const DiffusionSchedule& schedule);
/// sigma_data (t - eps) / sqrt(sigma_data^2 + t^2); exactly 0 at t = eps.
double consistency_c_out(double t, const DiffusionSchedule& schedule);

/// f(x, t) = c_skip(t) x + c_out(t) S(x, t), with S a denoiser network.
class ConsistencyModel {
 public:
  ConsistencyModel(NetworkConfig config, DiffusionSchedule schedule);

  DenoiserModel& network() { return network_; }
  const DenoiserModel& network() const { return network_; }
  const DiffusionSchedule& schedule() const { return schedule_; }
  Eigen::VectorXd& parameters() { return network_.parameters(); }
  const Eigen::VectorXd& parameters() const { return network_.parameters(); }

  ag::Var forward(ag::ParamBinding& p, ag::Var x, double t, ag::Var cond) const;
  Matrix forward(const Matrix& x, double t, const Matrix& cond) const;
  Matrix forward_with(const Eigen::VectorXd& params, const Matrix& x, double t, const Matrix& cond) const;

  std::uint64_t evaluations() const { return network_.evaluations(); }
  void reset_evaluations() { network_.reset_evaluations(); }

 private:
  void check_time(double t) const;

  DenoiserModel network_;
  DiffusionSchedule schedule_;
};

struct DistillConfig {
  double mu = 0.95;
  AdamConfig adam{};
  OdeMethod solver = OdeMethod::Euler;
};

/// Online parameters live in the ConsistencyModel; the state carries the EMA
/// target copy and the optimizer moments.
struct DistillState {
  Eigen::VectorXd target;
  AdamState optimizer;
  double mu = 0.95;

  /// Student and target both start as copies of the teacher's parameters.
  static DistillState from_teacher(const DenoiserModel& teacher, ConsistencyModel& student, double mu);
};

/// target <- mu * target + (1 - mu) * online.
void ema_update(Eigen::VectorXd& target, const Eigen::VectorXd& online, double mu);

/// One teacher ODE step from grid[from_index] to grid[to_index]; the indices
/// must be adjacent with to_index = from_index - 1.
Matrix teacher_ode_step(const Denoiser& teacher, const Matrix& z, std::span<const double> grid, int from_index,
                        int to_index, const Matrix& cond, OdeMethod solver = OdeMethod::Euler);

struct DistillDraw {
  int n = 0;  // t_n = grid[n], t_{n+1} = grid[n + 1]
  Matrix noise;
};

/// Squared-L2 consistency loss for fixed draws and its gradient w.r.t. the
/// online parameters; the target branch carries no gradient.
struct DistillLoss {
  double loss = 0.0;
  Eigen::VectorXd gradient;
};
DistillLoss consistency_loss_and_gradient(const ConsistencyModel& cm, const Eigen::VectorXd& target,
                                          const Denoiser& teacher, std::span<const TrainingExample> batch,
                                          std::span<const DistillDraw> draws, OdeMethod solver, int threads = 1);

/// Samples n uniformly in {0, ..., n_grid - 2} per example (the interval
/// [t_n, t_{n+1}]), forms x_{t_{n+1}} = x + t_{n+1} noise, takes one teacher
/// step to t_n, regresses f_online(x_{t_{n+1}}) onto f_target(x_hat_{t_n}),
/// applies one optimizer update, then the EMA update.
double cd_train_step(DistillState& state, ConsistencyModel& cm, const Denoiser& teacher,
                     std::span<const TrainingExample> batch, std::mt19937_64& rng, const DistillConfig& config,
                     int threads = 1);

/// One network evaluation: f(z_T, T) with z_T ~ N(0, T^2 I).
Matrix sample_onestep_raw(const ConsistencyModel& cm, const Matrix& cond, Eigen::Index frames, Eigen::Index features,
                          std::uint64_t seed);
MotionSequence sample_onestep(const ConsistencyModel& cm, const Matrix& cond, std::uint64_t seed, float fps,
                              std::string clip_id);

}  // namespace lm2d

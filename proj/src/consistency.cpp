#include "lm2d/consistency.hpp"

#include <cmath>
#include <fmt/format.h>

#include "lm2d/error.hpp"
#include "lm2d/util.hpp"

namespace lm2d {

double consistency_c_skip(double t, const DiffusionSchedule& s) {
  const double s2 = s.sigma_data * s.sigma_data;
  const double d = t - s.epsilon;
  return s2 / (d * d + s2);
}

double consistency_c_out(double t, const DiffusionSchedule& s) {
  return s.sigma_data * (t - s.epsilon) / std::sqrt(s.sigma_data * s.sigma_data + t * t);
}

ConsistencyModel::ConsistencyModel(NetworkConfig config, DiffusionSchedule schedule)
    : network_(std::move(config), schedule.sigma_data), schedule_(schedule) {
  schedule_.validate();
}

void ConsistencyModel::check_time(double t) const {
  if (!(t >= schedule_.epsilon && t <= schedule_.T))
    throw UsageError(fmt::format("consistency model evaluated at t={} outside [{}, {}]", t, schedule_.epsilon,
                                 schedule_.T));
}

ag::Var ConsistencyModel::forward(ag::ParamBinding& p, ag::Var x, double t, ag::Var cond) const {
  check_time(t);
  const double cs = consistency_c_skip(t, schedule_);
  const double co = consistency_c_out(t, schedule_);
  ag::Var s = network_.denoise(p, x, t, cond);
  return ag::add(ag::scale(x, cs), ag::scale(s, co));
}

Matrix ConsistencyModel::forward(const Matrix& x, double t, const Matrix& cond) const {
  return forward_with(network_.parameters(), x, t, cond);
}

Matrix ConsistencyModel::forward_with(const Eigen::VectorXd& params, const Matrix& x, double t,
                                      const Matrix& cond) const {
  check_time(t);
  const double cs = consistency_c_skip(t, schedule_);
  const double co = consistency_c_out(t, schedule_);
  if (t == schedule_.epsilon) {
    // c_out is exactly zero; the boundary map is the identity without a
    // network evaluation.
    return cs * x;
  }
  return cs * x + co * network_.denoise_with(params, x, t, cond);
}

DistillState DistillState::from_teacher(const DenoiserModel& teacher, ConsistencyModel& student, double mu) {
  if (!(mu >= 0.0 && mu < 1.0)) throw UsageError("EMA decay mu must lie in [0, 1)");
  if (teacher.parameters().size() != student.parameters().size())
    throw UsageError("student and teacher architectures differ");
  student.parameters() = teacher.parameters();
  DistillState s;
  s.target = teacher.parameters();
  s.mu = mu;
  return s;
}

void ema_update(Eigen::VectorXd& target, const Eigen::VectorXd& online, double mu) {
  if (target.size() != online.size()) throw UsageError("EMA: parameter shapes differ");
  target = mu * target + (1.0 - mu) * online;
}

Matrix teacher_ode_step(const Denoiser& teacher, const Matrix& z, std::span<const double> grid, int from_index,
                        int to_index, const Matrix& cond, OdeMethod solver) {
  const int n = static_cast<int>(grid.size());
  if (from_index < 1 || from_index >= n || to_index != from_index - 1)
    throw UsageError(fmt::format("teacher step requires adjacent grid indices (got {} -> {})", from_index, to_index));
  const double t_from = grid[from_index];
  const double t_to = grid[to_index];
  return solver == OdeMethod::Euler ? euler_step(teacher, z, t_from, t_to, cond)
                                    : heun_step(teacher, z, t_from, t_to, cond);
}

DistillLoss consistency_loss_and_gradient(const ConsistencyModel& cm, const Eigen::VectorXd& target,
                                          const Denoiser& teacher, std::span<const TrainingExample> batch,
                                          std::span<const DistillDraw> draws, OdeMethod solver, int threads) {
  if (batch.empty() || draws.size() != batch.size()) throw UsageError("distillation batch/draw mismatch");
  const std::vector<double> grid = cm.schedule().grid();
  struct PerExample {
    double loss;
    Eigen::VectorXd grad;
  };
  std::vector<PerExample> results(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t i) {
    const TrainingExample& ex = batch[i];
    const DistillDraw& d = draws[i];
    if (d.n < 0 || d.n + 1 >= static_cast<int>(grid.size())) throw UsageError("grid index out of range");
    const double t_next = grid[d.n + 1];
    const double t_cur = grid[d.n];
    const Matrix x_next = perturb(ex.motion, t_next, d.noise);
    const Matrix x_phi = teacher_ode_step(teacher, x_next, grid, d.n + 1, d.n, ex.cond, solver);
    const Matrix goal = cm.forward_with(target, x_phi, t_cur, ex.cond);

    ag::Tape tape;
    ag::ParamBinding p(tape, cm.network().network().params(), true);
    ag::Var pred = cm.forward(p, tape.constant(x_next), t_next, condition_var(tape, ex.cond));
    ag::Var loss = ag::mean_squares(ag::sub(pred, tape.constant(goal)));
    tape.backward(loss);
    if (!std::isfinite(loss.scalar()))
      throw NumericError(fmt::format("non-finite distillation loss at grid index {} for clip '{}'", d.n, ex.clip_id));
    results[i] = {loss.scalar(), p.gradient()};
  });
  DistillLoss out;
  out.gradient = Eigen::VectorXd::Zero(cm.parameters().size());
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const PerExample& r : results) {
    out.loss += inv * r.loss;
    out.gradient += inv * r.grad;
  }
  return out;
}

double cd_train_step(DistillState& state, ConsistencyModel& cm, const Denoiser& teacher,
                     std::span<const TrainingExample> batch, std::mt19937_64& rng, const DistillConfig& config,
                     int threads) {
  if (batch.empty()) throw UsageError("distillation batch is empty");
  const int n_grid = cm.schedule().n_grid;
  std::uniform_int_distribution<int> pick(0, n_grid - 2);
  std::vector<DistillDraw> draws;
  draws.reserve(batch.size());
  for (const TrainingExample& ex : batch) {
    DistillDraw d;
    d.n = pick(rng);
    d.noise = standard_normal(ex.motion.rows(), ex.motion.cols(), rng);
    draws.push_back(std::move(d));
  }
  DistillLoss lg = consistency_loss_and_gradient(cm, state.target, teacher, batch, draws, config.solver, threads);
  if (!lg.gradient.allFinite()) throw NumericError("non-finite gradient in distillation step");
  state.optimizer.update(cm.parameters(), std::move(lg.gradient), config.adam);
  ema_update(state.target, cm.parameters(), state.mu);
  return lg.loss;
}

Matrix sample_onestep_raw(const ConsistencyModel& cm, const Matrix& cond, Eigen::Index frames, Eigen::Index features,
                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double T = cm.schedule().T;
  return cm.forward(draw_prior(frames, features, T, rng), T, cond);
}

MotionSequence sample_onestep(const ConsistencyModel& cm, const Matrix& cond, std::uint64_t seed, float fps,
                              std::string clip_id) {
  const Matrix x = sample_onestep_raw(cm, cond, cond.rows(), kPoseDim, seed);
  if (!x.allFinite()) throw NumericError("one-step sample is non-finite");
  return MotionSequence::from_matrix(x, fps, std::move(clip_id));
}

}  // namespace lm2d

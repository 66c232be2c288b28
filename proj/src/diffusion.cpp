#include "lm2d/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include "lm2d/error.hpp"
#include "lm2d/util.hpp"

namespace lm2d {

void DiffusionSchedule::validate() const {
  if (!(epsilon > 0.0) || !(epsilon < T)) throw UsageError("schedule requires 0 < epsilon < T");
  if (!(sigma_data > 0.0)) throw UsageError("schedule.sigma_data must be positive");
  if (!(rho > 0.0)) throw UsageError("schedule.rho must be positive");
  if (n_grid < 2) throw UsageError("schedule.n_grid must be >= 2");
}

std::vector<double> DiffusionSchedule::grid(int nodes) const {
  if (nodes < 2) throw UsageError("time grid needs at least 2 nodes");
  const double lo = std::pow(epsilon, 1.0 / rho);
  const double hi = std::pow(T, 1.0 / rho);
  std::vector<double> t(nodes);
  for (int i = 0; i < nodes; ++i) t[i] = std::pow(lo + (hi - lo) * i / (nodes - 1), rho);
  t.front() = epsilon;
  t.back() = T;
  return t;
}

Matrix perturb(const Matrix& x, double t, const Matrix& noise) {
  if (x.rows() != noise.rows() || x.cols() != noise.cols())
    throw DataError(fmt::format("perturb: motion is {}x{} but noise is {}x{}", x.rows(), x.cols(), noise.rows(),
                                noise.cols()));
  if (!(t >= 0.0)) throw UsageError("perturb: t must be >= 0");
  return x + t * noise;
}

namespace {

void require_same(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DataError(fmt::format("{}: shape mismatch {}x{} vs {}x{}", what, a.rows(), a.cols(), b.rows(), b.cols()));
}

}  // namespace

double loss_reconstruction(const Matrix& x, const Matrix& x_hat) {
  require_same(x, x_hat, "loss_reconstruction");
  return (x - x_hat).squaredNorm() / static_cast<double>(x.size());
}

double loss_positions(const Matrix& x, const Matrix& x_hat, const Skeleton& skeleton) {
  require_same(x, x_hat, "loss_positions");
  const Matrix d = motion_positions(skeleton, x) - motion_positions(skeleton, x_hat);
  return d.squaredNorm() / static_cast<double>(x.rows());
}

double loss_velocity(const Matrix& x, const Matrix& x_hat) {
  require_same(x, x_hat, "loss_velocity");
  const Eigen::Index n = x.rows();
  if (n < 2) throw DataError("loss_velocity: velocity is undefined for a single frame");
  const Matrix dx = x.bottomRows(n - 1) - x.topRows(n - 1);
  const Matrix dh = x_hat.bottomRows(n - 1) - x_hat.topRows(n - 1);
  return (dx - dh).squaredNorm() / static_cast<double>(n - 1);
}

double loss_total(const Matrix& x, const Matrix& x_hat, const Skeleton& skeleton, const LossWeights& weights) {
  return loss_reconstruction(x, x_hat) + weights.lambda_pos * loss_positions(x, x_hat, skeleton) +
         weights.lambda_vel * loss_velocity(x, x_hat);
}

LossTerms loss_terms(ag::Var x, ag::Var x_hat, const Skeleton* skeleton, const LossWeights& weights) {
  if (x.rows() != x_hat.rows() || x.cols() != x_hat.cols()) throw DataError("loss: shape mismatch");
  if (weights.lambda_pos < 0.0 || weights.lambda_vel < 0.0) throw UsageError("loss weights must be nonnegative");
  LossTerms t;
  t.rec = ag::mean_squares(ag::sub(x, x_hat));
  t.total = t.rec;
  if (weights.lambda_pos != 0.0) {
    if (!skeleton) throw UsageError("position loss requires a skeleton");
    ag::Var d = ag::sub(ag::forward_kinematics(x, *skeleton), ag::forward_kinematics(x_hat, *skeleton));
    t.pos = ag::scale(ag::sum_squares(d), 1.0 / static_cast<double>(x.rows()));
    t.total = ag::add(t.total, ag::scale(t.pos, weights.lambda_pos));
  }
  if (weights.lambda_vel != 0.0) {
    if (x.rows() < 2) throw DataError("loss_velocity: velocity is undefined for a single frame");
    ag::Var d = ag::sub(ag::row_diff(x), ag::row_diff(x_hat));
    t.vel = ag::scale(ag::sum_squares(d), 1.0 / static_cast<double>(x.rows() - 1));
    t.total = ag::add(t.total, ag::scale(t.vel, weights.lambda_vel));
  }
  return t;
}

void AdamState::update(Eigen::VectorXd& params, Eigen::VectorXd grad, const AdamConfig& cfg) {
  if (m.size() != params.size()) {
    m = Eigen::VectorXd::Zero(params.size());
    v = Eigen::VectorXd::Zero(params.size());
    step = 0;
  }
  if (cfg.clip_norm > 0.0) {
    const double norm = grad.norm();
    if (norm > cfg.clip_norm) grad *= cfg.clip_norm / norm;
  }
  ++step;
  m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
  v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  params.array() -= cfg.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps);
}

double sample_training_time(std::mt19937_64& rng, const DiffusionSchedule& schedule) {
  std::normal_distribution<double> log_t(-1.2, 1.2);
  return std::clamp(std::exp(log_t(rng)), schedule.epsilon, schedule.T);
}

Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = normal(rng);
  return m;
}

LossAndGradient denoiser_loss_and_gradient(const DenoiserModel& model, std::span<const TrainingExample> batch,
                                           std::span<const double> times, std::span<const Matrix> noises,
                                           const Skeleton* skeleton, const LossWeights& weights, int threads) {
  if (batch.empty()) throw UsageError("training batch is empty");
  if (times.size() != batch.size() || noises.size() != batch.size())
    throw UsageError("one time and one noise tensor per example required");
  struct PerExample {
    double loss, rec, pos, vel;
    Eigen::VectorXd grad;
  };
  std::vector<PerExample> results(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t i) {
    const TrainingExample& ex = batch[i];
    ag::Tape tape;
    ag::ParamBinding p(tape, model.network().params(), true);
    ag::Var x = tape.constant(ex.motion);
    ag::Var z = tape.constant(perturb(ex.motion, times[i], noises[i]));
    ag::Var x_hat = model.denoise(p, z, times[i], condition_var(tape, ex.cond));
    LossTerms terms = loss_terms(x, x_hat, skeleton, weights);
    tape.backward(terms.total);
    results[i] = {terms.total.scalar(), terms.rec.scalar(), terms.pos.valid() ? terms.pos.scalar() : 0.0,
                  terms.vel.valid() ? terms.vel.scalar() : 0.0, p.gradient()};
  });
  LossAndGradient out;
  out.gradient = Eigen::VectorXd::Zero(model.parameters().size());
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!std::isfinite(results[i].loss))
      throw NumericError(fmt::format("non-finite training loss at t={} for clip '{}' (start frame {})", times[i],
                                     batch[i].clip_id, batch[i].start_frame));
    out.loss += inv * results[i].loss;
    out.rec += inv * results[i].rec;
    out.pos += inv * results[i].pos;
    out.vel += inv * results[i].vel;
    out.gradient += inv * results[i].grad;
  }
  return out;
}

TrainStepResult train_step(DenoiserModel& model, std::span<const TrainingExample> batch,
                           const DiffusionSchedule& schedule, const LossWeights& weights, AdamState& optimizer,
                           const AdamConfig& adam, std::mt19937_64& rng, const Skeleton* skeleton, int threads) {
  if (batch.empty()) throw UsageError("training batch is empty");
  const Eigen::Index frames = batch[0].motion.rows();
  std::vector<double> times;
  std::vector<Matrix> noises;
  for (const TrainingExample& ex : batch) {
    if (ex.motion.rows() != frames) throw UsageError("all clips in a batch must share one window length");
    times.push_back(sample_training_time(rng, schedule));
    noises.push_back(standard_normal(ex.motion.rows(), ex.motion.cols(), rng));
  }
  LossAndGradient lg = denoiser_loss_and_gradient(model, batch, times, noises, skeleton, weights, threads);
  if (!lg.gradient.allFinite()) throw NumericError("non-finite gradient in training step");
  optimizer.update(model.parameters(), std::move(lg.gradient), adam);
  return {lg.loss, lg.rec, lg.pos, lg.vel};
}

}  // namespace lm2d

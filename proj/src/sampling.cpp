#include "lm2d/sampling.hpp"

#include <algorithm>
#include <fmt/format.h>

#include "lm2d/error.hpp"

namespace lm2d {

OdeMethod parse_ode_method(const std::string& name) {
  if (name == "euler") return OdeMethod::Euler;
  if (name == "heun") return OdeMethod::Heun;
  throw UsageError("unknown ODE method '" + name + "' (expected euler or heun)");
}

std::string to_string(OdeMethod method) { return method == OdeMethod::Euler ? "euler" : "heun"; }

Matrix score_from_denoiser(const Matrix& x_hat, const Matrix& z, double t) {
  if (!(t > 0.0)) throw UsageError(fmt::format("score is undefined at t={}", t));
  return (x_hat - z) / (t * t);
}

Matrix pf_ode_rhs(const Denoiser& denoiser, const Matrix& z, double t, const Matrix& cond) {
  if (!(t > 0.0)) throw UsageError(fmt::format("PF-ODE evaluated at t={}", t));
  return (z - denoiser.denoise(z, t, cond)) / t;
}

std::vector<double> sampling_times(const DiffusionSchedule& schedule, int n_steps) {
  if (n_steps < 1) throw UsageError("sampler needs at least one step");
  std::vector<double> t = schedule.grid(n_steps + 1);
  std::reverse(t.begin(), t.end());
  return t;
}

Matrix euler_step(const Denoiser& denoiser, const Matrix& z, double t_from, double t_to, const Matrix& cond) {
  return z + (t_to - t_from) * pf_ode_rhs(denoiser, z, t_from, cond);
}

Matrix heun_step(const Denoiser& denoiser, const Matrix& z, double t_from, double t_to, const Matrix& cond) {
  const double h = t_to - t_from;
  const Matrix d = pf_ode_rhs(denoiser, z, t_from, cond);
  const Matrix z_pred = z + h * d;
  const Matrix d_pred = pf_ode_rhs(denoiser, z_pred, t_to, cond);
  return z + (0.5 * h) * (d + d_pred);
}

Matrix integrate_pf_ode(const Denoiser& denoiser, Matrix z, const Matrix& cond, std::span<const double> times,
                        OdeMethod method) {
  if (times.size() < 2) throw UsageError("integration needs at least two times");
  const std::size_t steps = times.size() - 1;
  for (std::size_t i = 0; i < steps; ++i) {
    if (!(times[i + 1] < times[i])) throw UsageError("integration times must strictly decrease");
    const bool last = i + 1 == steps;
    if (method == OdeMethod::Heun && !last)
      z = heun_step(denoiser, z, times[i], times[i + 1], cond);
    else
      z = euler_step(denoiser, z, times[i], times[i + 1], cond);
    if (!z.allFinite()) throw NumericError(fmt::format("non-finite sampler state after step {} (t={})", i, times[i + 1]));
  }
  return z;
}

Matrix draw_prior(Eigen::Index rows, Eigen::Index cols, double T, std::mt19937_64& rng) {
  return T * standard_normal(rows, cols, rng);
}

Matrix sample_multistep_raw(const Denoiser& denoiser, const Matrix& cond, Eigen::Index frames, Eigen::Index features,
                            const DiffusionSchedule& schedule, const SamplerConfig& config) {
  std::mt19937_64 rng(config.seed);
  const std::vector<double> times = sampling_times(schedule, config.n_steps);
  return integrate_pf_ode(denoiser, draw_prior(frames, features, schedule.T, rng), cond, times, config.method);
}

MotionSequence sample_multistep(const Denoiser& denoiser, const Matrix& cond, const DiffusionSchedule& schedule,
                                const SamplerConfig& config, float fps, std::string clip_id) {
  const Matrix x = sample_multistep_raw(denoiser, cond, cond.rows(), kPoseDim, schedule, config);
  return MotionSequence::from_matrix(x, fps, std::move(clip_id));
}

}  // namespace lm2d

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "lm2d/diffusion.hpp"
#include "lm2d/network.hpp"
#include "lm2d/skeleton.hpp"

namespace lm2d {

enum class OdeMethod { Euler, Heun };

OdeMethod parse_ode_method(const std::string& name);
std::string to_string(OdeMethod method);

struct SamplerConfig {
  int n_steps = 32;
  OdeMethod method = OdeMethod::Heun;
  std::uint64_t seed = 0;
};

/// (x_hat - z) / t^2. Throws for t <= 0.
Matrix score_from_denoiser(const Matrix& x_hat, const Matrix& z, double t);

/// dz/dt = (z - x_hat(z, t)) / t.
Matrix pf_ode_rhs(const Denoiser& denoiser, const Matrix& z, double t, const Matrix& cond);

/// n_steps + 1 integration times, strictly decreasing from T to epsilon.
std::vector<double> sampling_times(const DiffusionSchedule& schedule, int n_steps);

/// One explicit Euler step of the PF-ODE from t_from to t_to.
Matrix euler_step(const Denoiser& denoiser, const Matrix& z, double t_from, double t_to, const Matrix& cond);
/// Euler predictor with trapezoidal corrector.
Matrix heun_step(const Denoiser& denoiser, const Matrix& z, double t_from, double t_to, const Matrix& cond);

/// Integrates from times.front() down to times.back(). Heun skips the
/// corrector on the final step. Throws NumericError with the step index if
/// the state becomes non-finite.
Matrix integrate_pf_ode(const Denoiser& denoiser, Matrix z, const Matrix& cond, std::span<const double> times,
                        OdeMethod method);

/// z_T ~ N(0, T^2 I).
Matrix draw_prior(Eigen::Index rows, Eigen::Index cols, double T, std::mt19937_64& rng);

/// Raw multistep sample (frames x feature_dim) before pose decoding.
Matrix sample_multistep_raw(const Denoiser& denoiser, const Matrix& cond, Eigen::Index frames, Eigen::Index features,
                            const DiffusionSchedule& schedule, const SamplerConfig& config);

/// Multistep generation for a conditioning track of `cond.rows()` frames.
MotionSequence sample_multistep(const Denoiser& denoiser, const Matrix& cond, const DiffusionSchedule& schedule,
                                const SamplerConfig& config, float fps, std::string clip_id);

}  // namespace lm2d

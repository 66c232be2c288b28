#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <string>

#include "lm2d/autograd.hpp"

namespace lm2d {

using Matrix = Eigen::MatrixXd;

/// Architecture of the conditional sequence network. Serialized verbatim into
/// checkpoint headers; loading rejects any mismatch.
struct NetworkConfig {
  int feature_dim = 147;
  int cond_dim = 803;  // 35 audio + 768 lyric; 0 disables conditioning
  int width = 256;
  int blocks = 4;
  int heads = 4;
  int ff_mult = 4;
  // Temporal self-attention plus cross-attention to the conditioning. When
  // off, blocks are per-frame MLPs and conditioning is added per frame.
  bool attention = true;
  bool positional = true;
  int window_frames = 360;

  void validate() const;
  std::map<std::string, std::string> to_fields() const;
  static NetworkConfig from_fields(const std::map<std::string, std::string>& fields);
  bool operator==(const NetworkConfig&) const = default;
};

/// The raw network F(x, c_noise, cond): N x feature_dim in, N x feature_dim out.
class Network {
 public:
  explicit Network(NetworkConfig config);

  const NetworkConfig& config() const { return config_; }
  ag::ParameterSet& params() { return params_; }
  const ag::ParameterSet& params() const { return params_; }

  /// Scaled-normal initialization (fan-in), LayerNorm gains at 1, biases at 0.
  void initialize(std::uint64_t seed);

  /// cond may be an invalid Var when cond_dim == 0.
  ag::Var forward(ag::ParamBinding& p, ag::Var x, double c_noise, ag::Var cond) const;

 private:
  struct Linear {
    int w = -1, b = -1;
  };
  struct Norm {
    int gain = -1, bias = -1;
  };
  struct Block {
    Norm ln_self, ln_cross, ln_ff;
    int q = -1, k = -1, v = -1;
    Linear o;
    int cq = -1, ck = -1, cv = -1;
    Linear co;
    Linear cond_add;
    Linear ff1, ff2;
  };

  Linear add_linear(const std::string& name, int in, int out, bool bias = true);
  Norm add_norm(const std::string& name, int dim);
  ag::Var apply(ag::ParamBinding& p, const Linear& l, ag::Var x) const;
  ag::Var apply(ag::ParamBinding& p, const Norm& n, ag::Var x) const;
  ag::Var attention(ag::ParamBinding& p, ag::Var q, ag::Var k, ag::Var v) const;

  NetworkConfig config_;
  ag::ParameterSet params_;
  Linear in_proj_, time1_, time2_, cond_proj_, cond_add0_, out_proj_;
  Norm final_norm_;
  std::vector<Block> blocks_;
};

/// Anything that maps a noised sequence at time t to an estimate of the clean
/// sequence. Samplers and distillation only see this interface, which lets
/// analytic oracles stand in for trained networks.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual Matrix denoise(const Matrix& z, double t, const Matrix& cond) const = 0;
};

/// Noise-level preconditioning for the variance-exploding process:
///   x_hat = c_skip(t) z + c_out(t) F(c_in(t) z, c_noise(t))
/// with c_skip = s^2/(t^2+s^2), c_out = t s / sqrt(t^2+s^2),
/// c_in = 1/sqrt(t^2+s^2), c_noise = ln(t)/4 and s = sigma_data.
struct Preconditioning {
  double c_skip, c_out, c_in, c_noise;
  static Preconditioning at(double t, double sigma_data);
};

/// Trainable x-prediction denoiser.
class DenoiserModel : public Denoiser {
 public:
  DenoiserModel(NetworkConfig config, double sigma_data);

  Network& network() { return network_; }
  const Network& network() const { return network_; }
  const NetworkConfig& config() const { return network_.config(); }
  double sigma_data() const { return sigma_data_; }
  Eigen::VectorXd& parameters() { return network_.params().values(); }
  const Eigen::VectorXd& parameters() const { return network_.params().values(); }

  ag::Var denoise(ag::ParamBinding& p, ag::Var z, double t, ag::Var cond) const;
  Matrix denoise(const Matrix& z, double t, const Matrix& cond) const override;
  /// Same as denoise() but evaluated with an explicit parameter vector.
  Matrix denoise_with(const Eigen::VectorXd& params, const Matrix& z, double t, const Matrix& cond) const;

  /// Number of network evaluations performed through the Matrix overloads.
  std::uint64_t evaluations() const { return evaluations_.load(); }
  void reset_evaluations() { evaluations_ = 0; }

 private:
  Network network_;
  double sigma_data_;
  mutable std::atomic<std::uint64_t> evaluations_{0};
};

/// Conditioning matrix as a tape constant, or an invalid Var when empty.
ag::Var condition_var(ag::Tape& tape, const Matrix& cond);

}  // namespace lm2d

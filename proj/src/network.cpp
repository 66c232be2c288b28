#include "lm2d/network.hpp"

#include <cmath>
#include <fmt/format.h>
#include <random>

#include "lm2d/error.hpp"

namespace lm2d {

namespace {

int parse_int(const std::map<std::string, std::string>& f, const std::string& key) {
  auto it = f.find(key);
  if (it == f.end()) throw DataError("architecture field missing: " + key);
  try {
    std::size_t used = 0;
    const int v = std::stoi(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw DataError("architecture field is not an integer: " + key + "=" + it->second);
  }
}

bool parse_bool(const std::map<std::string, std::string>& f, const std::string& key) {
  auto it = f.find(key);
  if (it == f.end()) throw DataError("architecture field missing: " + key);
  if (it->second == "true") return true;
  if (it->second == "false") return false;
  throw DataError("architecture field is not a boolean: " + key + "=" + it->second);
}

// Sinusoidal features of a scalar; frequencies span 1 to 1000.
Matrix scalar_embedding(double value, int dim) {
  Matrix e(1, dim);
  const int half = dim / 2;
  for (int k = 0; k < half; ++k) {
    const double freq = half > 1 ? std::exp(std::log(1000.0) * k / (half - 1)) : 1.0;
    e(0, k) = std::sin(value * freq);
    e(0, half + k) = std::cos(value * freq);
  }
  if (dim % 2 == 1) e(0, dim - 1) = value;
  return e;
}

Matrix positional_encoding(Eigen::Index frames, int dim) {
  Matrix pe(frames, dim);
  for (Eigen::Index i = 0; i < frames; ++i)
    for (int k = 0; k < dim; ++k) {
      const double rate = std::pow(10000.0, -2.0 * (k / 2) / dim);
      pe(i, k) = (k % 2 == 0) ? std::sin(i * rate) : std::cos(i * rate);
    }
  return pe;
}

}  // namespace

void NetworkConfig::validate() const {
  if (feature_dim < 1) throw UsageError("model.feature_dim must be >= 1");
  if (cond_dim < 0) throw UsageError("model.cond_dim must be >= 0");
  if (width < 1) throw UsageError("model.width must be >= 1");
  if (blocks < 0) throw UsageError("model.blocks must be >= 0");
  if (ff_mult < 1) throw UsageError("model.ff_mult must be >= 1");
  if (attention && (heads < 1 || width % heads != 0)) throw UsageError("model.heads must divide model.width");
  if (window_frames < 1) throw UsageError("model.window_frames must be >= 1");
}

std::map<std::string, std::string> NetworkConfig::to_fields() const {
  return {
      {"model.feature_dim", std::to_string(feature_dim)},
      {"model.cond_dim", std::to_string(cond_dim)},
      {"model.width", std::to_string(width)},
      {"model.blocks", std::to_string(blocks)},
      {"model.heads", std::to_string(heads)},
      {"model.ff_mult", std::to_string(ff_mult)},
      {"model.attention", attention ? "true" : "false"},
      {"model.positional", positional ? "true" : "false"},
      {"model.window_frames", std::to_string(window_frames)},
  };
}

NetworkConfig NetworkConfig::from_fields(const std::map<std::string, std::string>& f) {
  NetworkConfig c;
  c.feature_dim = parse_int(f, "model.feature_dim");
  c.cond_dim = parse_int(f, "model.cond_dim");
  c.width = parse_int(f, "model.width");
  c.blocks = parse_int(f, "model.blocks");
  c.heads = parse_int(f, "model.heads");
  c.ff_mult = parse_int(f, "model.ff_mult");
  c.attention = parse_bool(f, "model.attention");
  c.positional = parse_bool(f, "model.positional");
  c.window_frames = parse_int(f, "model.window_frames");
  return c;
}

Network::Linear Network::add_linear(const std::string& name, int in, int out, bool bias) {
  Linear l;
  l.w = params_.add(name + ".w", in, out);
  if (bias) l.b = params_.add(name + ".b", 1, out);
  return l;
}

Network::Norm Network::add_norm(const std::string& name, int dim) {
  return {params_.add(name + ".gain", 1, dim), params_.add(name + ".bias", 1, dim)};
}

Network::Network(NetworkConfig config) : config_(config) {
  config_.validate();
  const int w = config_.width;
  in_proj_ = add_linear("in", config_.feature_dim, w);
  time1_ = add_linear("time1", w, w);
  time2_ = add_linear("time2", w, w);
  if (config_.cond_dim > 0) {
    cond_proj_ = add_linear("cond", config_.cond_dim, w);
    if (config_.blocks == 0) cond_add0_ = add_linear("cond_add", w, w, false);
  }
  for (int b = 0; b < config_.blocks; ++b) {
    const std::string p = fmt::format("block{}.", b);
    Block blk;
    if (config_.attention) {
      blk.ln_self = add_norm(p + "ln_self", w);
      blk.q = params_.add(p + "q", w, w);
      blk.k = params_.add(p + "k", w, w);
      blk.v = params_.add(p + "v", w, w);
      blk.o = add_linear(p + "o", w, w);
      if (config_.cond_dim > 0) {
        blk.ln_cross = add_norm(p + "ln_cross", w);
        blk.cq = params_.add(p + "cq", w, w);
        blk.ck = params_.add(p + "ck", w, w);
        blk.cv = params_.add(p + "cv", w, w);
        blk.co = add_linear(p + "co", w, w);
      }
    } else if (config_.cond_dim > 0) {
      blk.cond_add = add_linear(p + "cond_add", w, w, false);
    }
    blk.ln_ff = add_norm(p + "ln_ff", w);
    blk.ff1 = add_linear(p + "ff1", w, w * config_.ff_mult);
    blk.ff2 = add_linear(p + "ff2", w * config_.ff_mult, w);
    blocks_.push_back(blk);
  }
  if (config_.blocks > 0) final_norm_ = add_norm("final_norm", w);
  out_proj_ = add_linear("out", w, config_.feature_dim);
}

void Network::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < params_.blocks().size(); ++i) {
    const auto& b = params_.blocks()[i];
    auto m = params_.block(static_cast<int>(i));
    const bool is_gain = b.name.ends_with(".gain");
    const bool is_bias = b.name.ends_with(".b") || b.name.ends_with(".bias");
    if (is_gain) {
      m.setOnes();
    } else if (is_bias) {
      m.setZero();
    } else {
      const double stdev = 1.0 / std::sqrt(static_cast<double>(b.rows));
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = stdev * normal(rng);
    }
  }
}

ag::Var Network::apply(ag::ParamBinding& p, const Linear& l, ag::Var x) const {
  ag::Var y = ag::matmul(x, p[l.w]);
  return l.b >= 0 ? ag::add_row(y, p[l.b]) : y;
}

ag::Var Network::apply(ag::ParamBinding& p, const Norm& n, ag::Var x) const {
  return ag::layer_norm(x, p[n.gain], p[n.bias]);
}

ag::Var Network::attention(ag::ParamBinding& p, ag::Var q, ag::Var k, ag::Var v) const {
  (void)p;
  const int heads = config_.heads;
  const int d = config_.width / heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<ag::Var> outs;
  outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    ag::Var qh = heads == 1 ? q : ag::slice_cols(q, h * d, d);
    ag::Var kh = heads == 1 ? k : ag::slice_cols(k, h * d, d);
    ag::Var vh = heads == 1 ? v : ag::slice_cols(v, h * d, d);
    ag::Var scores = ag::scale(ag::matmul_nt(qh, kh), inv_sqrt_d);
    outs.push_back(ag::matmul(ag::softmax_rows(scores), vh));
  }
  return heads == 1 ? outs[0] : ag::concat_cols(outs);
}

ag::Var Network::forward(ag::ParamBinding& p, ag::Var x, double c_noise, ag::Var cond) const {
  ag::Tape& tape = p.tape();
  if (x.cols() != config_.feature_dim)
    throw DataError(fmt::format("network input has {} features, expected {}", x.cols(), config_.feature_dim));
  const bool use_cond = config_.cond_dim > 0;
  if (use_cond) {
    if (!cond.valid()) throw DataError("network requires conditioning features");
    if (cond.cols() != config_.cond_dim || cond.rows() != x.rows())
      throw DataError(fmt::format("conditioning is {}x{}, expected {}x{}", cond.rows(), cond.cols(), x.rows(),
                                  config_.cond_dim));
  }
  const int w = config_.width;
  ag::Var h = apply(p, in_proj_, x);
  if (config_.positional) h = ag::add(h, tape.constant(positional_encoding(x.rows(), w)));
  ag::Var temb = tape.constant(scalar_embedding(c_noise, w));
  temb = apply(p, time2_, ag::silu(apply(p, time1_, temb)));

  ag::Var c;
  if (use_cond) c = ag::silu(apply(p, cond_proj_, cond));

  if (blocks_.empty()) {
    h = ag::add_row(h, temb);
    if (use_cond) h = ag::add(h, apply(p, cond_add0_, c));
    return apply(p, out_proj_, h);
  }

  for (const Block& blk : blocks_) {
    h = ag::add_row(h, temb);
    if (config_.attention) {
      ag::Var a = apply(p, blk.ln_self, h);
      ag::Var att = attention(p, ag::matmul(a, p[blk.q]), ag::matmul(a, p[blk.k]), ag::matmul(a, p[blk.v]));
      h = ag::add(h, apply(p, blk.o, att));
      if (use_cond) {
        ag::Var a2 = apply(p, blk.ln_cross, h);
        ag::Var cross = attention(p, ag::matmul(a2, p[blk.cq]), ag::matmul(c, p[blk.ck]), ag::matmul(c, p[blk.cv]));
        h = ag::add(h, apply(p, blk.co, cross));
      }
    } else if (use_cond) {
      h = ag::add(h, apply(p, blk.cond_add, c));
    }
    ag::Var f = apply(p, blk.ln_ff, h);
    f = apply(p, blk.ff2, ag::silu(apply(p, blk.ff1, f)));
    h = ag::add(h, f);
  }
  h = apply(p, final_norm_, h);
  return apply(p, out_proj_, h);
}

Preconditioning Preconditioning::at(double t, double sigma_data) {
  const double s2 = sigma_data * sigma_data;
  const double denom = t * t + s2;
  return {s2 / denom, t * sigma_data / std::sqrt(denom), 1.0 / std::sqrt(denom), std::log(t) / 4.0};
}

DenoiserModel::DenoiserModel(NetworkConfig config, double sigma_data)
    : network_(std::move(config)), sigma_data_(sigma_data) {
  if (!(sigma_data > 0.0)) throw UsageError("sigma_data must be positive");
}

ag::Var DenoiserModel::denoise(ag::ParamBinding& p, ag::Var z, double t, ag::Var cond) const {
  if (!(t > 0.0)) throw NumericError(fmt::format("denoiser evaluated at non-positive time {}", t));
  const Preconditioning pc = Preconditioning::at(t, sigma_data_);
  ag::Var f = network_.forward(p, ag::scale(z, pc.c_in), pc.c_noise, cond);
  return ag::add(ag::scale(z, pc.c_skip), ag::scale(f, pc.c_out));
}

Matrix DenoiserModel::denoise(const Matrix& z, double t, const Matrix& cond) const {
  return denoise_with(network_.params().values(), z, t, cond);
}

Matrix DenoiserModel::denoise_with(const Eigen::VectorXd& params, const Matrix& z, double t, const Matrix& cond) const {
  ++evaluations_;
  ag::Tape tape(false);
  ag::ParamBinding p(tape, network_.params(), params, false);
  return denoise(p, tape.constant(z), t, condition_var(tape, cond)).value();
}

ag::Var condition_var(ag::Tape& tape, const Matrix& cond) {
  if (cond.size() == 0) return {};
  return tape.constant(cond);
}

}  // namespace lm2d

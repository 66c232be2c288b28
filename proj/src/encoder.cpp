#include "lm2d/encoder.hpp"

#include <fmt/format.h>

#include <cmath>
#include <random>
#include <numeric>
#include <set>

#include "lm2d/checkpoint.hpp"
#include "lm2d/error.hpp"
#include "lm2d/util.hpp"

namespace lm2d {

namespace {

constexpr int kRotationInputs = kPoseDim - 3;

int field_int(const std::map<std::string, std::string>& f, const std::string& key) {
  const auto it = f.find(key);
  if (it == f.end()) throw DataError("encoder header is missing " + key);
  try {
    return std::stoi(it->second);
  } catch (const std::exception&) {
    throw DataError("encoder header field is not an integer: " + key + "=" + it->second);
  }
}

}  // namespace

void EncoderConfig::validate() const {
  if (hidden < 1) throw UsageError("encoder.hidden must be >= 1");
  if (kernel < 1 || kernel % 2 == 0) throw UsageError("encoder.kernel must be a positive odd number");
  if (embed_dim < 1) throw UsageError("encoder.embed_dim must be >= 1");
}

std::map<std::string, std::string> EncoderConfig::to_fields() const {
  return {{"encoder.hidden", std::to_string(hidden)},
          {"encoder.kernel", std::to_string(kernel)},
          {"encoder.embed_dim", std::to_string(embed_dim)}};
}

EncoderConfig EncoderConfig::from_fields(const std::map<std::string, std::string>& f) {
  EncoderConfig c;
  c.hidden = field_int(f, "encoder.hidden");
  c.kernel = field_int(f, "encoder.kernel");
  c.embed_dim = field_int(f, "encoder.embed_dim");
  c.validate();
  return c;
}

MotionEncoder::MotionEncoder(EncoderConfig config) : config_(config) {
  config_.validate();
  const int h = config_.hidden;
  w1_ = params_.add("enc.in.w", kRotationInputs, h);
  b1_ = params_.add("enc.in.b", 1, h);
  wc_ = params_.add("enc.conv.w", config_.kernel * h, h);
  bc_ = params_.add("enc.conv.b", 1, h);
  w2_ = params_.add("enc.out.w", h, config_.embed_dim);
  b2_ = params_.add("enc.out.b", 1, config_.embed_dim);
}

void MotionEncoder::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int w : {w1_, wc_, w2_}) {
    auto block = params_.block(w);
    const double scale = 1.0 / std::sqrt(static_cast<double>(block.rows()));
    for (Eigen::Index i = 0; i < block.rows(); ++i)
      for (Eigen::Index j = 0; j < block.cols(); ++j) block(i, j) = scale * normal(rng);
  }
  for (int b : {b1_, bc_, b2_}) params_.block(b).setZero();
}

ag::Var MotionEncoder::forward(ag::ParamBinding& p, const Eigen::MatrixXd& motion) const {
  if (motion.cols() != kPoseDim) throw DataError(fmt::format("encoder expects {} columns", kPoseDim));
  if (motion.rows() < 1) throw DataError("encoder input has no frames");
  ag::Tape& tape = p.tape();
  ag::Var x = tape.constant(motion.rightCols(kRotationInputs));
  ag::Var h = ag::silu(ag::add_row(ag::matmul(x, p[w1_]), p[b1_]));
  std::vector<ag::Var> taps;
  const int r = config_.kernel / 2;
  for (int k = -r; k <= r; ++k) taps.push_back(k == 0 ? h : ag::shift_rows(h, k));
  ag::Var c = ag::silu(ag::add_row(ag::matmul(ag::concat_cols(taps), p[wc_]), p[bc_]));
  ag::Var pooled = ag::mean_rows(c);
  return ag::normalize_rows(ag::add_row(ag::matmul(pooled, p[w2_]), p[b2_]));
}

Eigen::VectorXd MotionEncoder::embed(const Eigen::MatrixXd& motion) const {
  ag::Tape tape(false);
  ag::ParamBinding p(tape, params_, false);
  return forward(p, motion).value().row(0).transpose();
}

void MotionEncoder::save(const std::filesystem::path& path, const std::map<std::string, std::string>& extra) const {
  Checkpoint ckpt;
  ckpt.kind = "encoder";
  ckpt.header = extra;
  for (const auto& [k, v] : config_.to_fields()) ckpt.header[k] = v;
  ckpt.parameters = params_.values();
  save_checkpoint(ckpt, path);
}

MotionEncoder MotionEncoder::load(const std::filesystem::path& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.kind != "encoder")
    throw UsageError(fmt::format("{} is a {} checkpoint, expected an encoder checkpoint", path.string(), ckpt.kind));
  MotionEncoder enc(EncoderConfig::from_fields(ckpt.header));
  if (ckpt.parameters.size() != enc.params_.size())
    throw DataError(fmt::format("{}: encoder has {} parameters, file holds {}", path.string(), enc.params_.size(),
                                ckpt.parameters.size()));
  enc.params_.values() = ckpt.parameters;
  return enc;
}

ContrastiveLoss contrastive_loss_and_gradient(const MotionEncoder& encoder, std::span<const EncoderPair> batch,
                                              double temperature, int threads) {
  const auto B = static_cast<Eigen::Index>(batch.size());
  if (B < 2) throw UsageError("contrastive batch needs at least 2 pairs");
  if (!(temperature > 0.0)) throw UsageError("temperature must be positive");
  const int D = encoder.config().embed_dim;

  // Embeddings first, then the batch-coupled loss on a small tape, then one
  // backward pass per example seeded with dL/d(embedding).
  Eigen::MatrixXd emb(B, D);
  parallel_for(batch.size(), threads, [&](std::size_t i) { emb.row(i) = encoder.embed(batch[i].motion).transpose(); });

  std::vector<Eigen::VectorXd> distinct;
  std::vector<int> cls(B);
  for (Eigen::Index i = 0; i < B; ++i) {
    const Eigen::VectorXd& l = batch[i].lyric;
    if (l.size() != D) throw DataError(fmt::format("lyric embedding has {} values, expected {}", l.size(), D));
    int found = -1;
    for (std::size_t k = 0; k < distinct.size(); ++k)
      if (distinct[k] == l) found = static_cast<int>(k);
    if (found < 0) {
      found = static_cast<int>(distinct.size());
      distinct.push_back(l);
    }
    cls[i] = found;
  }
  Eigen::MatrixXd texts(distinct.size(), D), pair_texts(B, D);
  for (std::size_t k = 0; k < distinct.size(); ++k) texts.row(k) = distinct[k].transpose();
  for (Eigen::Index i = 0; i < B; ++i) pair_texts.row(i) = batch[i].lyric.transpose();

  ag::Tape tape;
  ag::Var e = tape.variable(emb);
  ag::Var m2t = ag::scale(ag::matmul_nt(e, tape.constant(texts)), 1.0 / temperature);
  ag::Var t2m = ag::scale(ag::matmul_nt(tape.constant(pair_texts), e), 1.0 / temperature);
  std::vector<int> self(B);
  for (Eigen::Index i = 0; i < B; ++i) self[i] = static_cast<int>(i);
  ag::Var loss = ag::scale(ag::add(ag::cross_entropy_rows(m2t, cls), ag::cross_entropy_rows(t2m, self)), 0.5);
  tape.backward(loss);
  const Eigen::MatrixXd g_emb = tape.grad(e);

  std::vector<Eigen::VectorXd> grads(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t i) {
    ag::Tape t;
    ag::ParamBinding p(t, encoder.params(), true);
    ag::Var out = encoder.forward(p, batch[i].motion);
    t.backward(ag::matmul_nt(out, t.constant(g_emb.row(i))));
    grads[i] = p.gradient();
  });
  ContrastiveLoss result;
  result.loss = loss.scalar();
  result.gradient = Eigen::VectorXd::Zero(encoder.params().size());
  for (const Eigen::VectorXd& g : grads) result.gradient += g;
  if (!std::isfinite(result.loss) || !result.gradient.allFinite())
    throw NumericError("non-finite contrastive loss or gradient");
  return result;
}

MotionEncoder train_motion_encoder(const std::vector<EncoderPair>& pairs, const EncoderConfig& config,
                                   const EncoderTrainConfig& train, const std::function<void(int, double)>& on_step) {
  std::set<std::vector<double>> distinct;
  for (const EncoderPair& p : pairs) {
    if (p.lyric.norm() == 0.0) continue;
    distinct.insert(std::vector<double>(p.lyric.data(), p.lyric.data() + p.lyric.size()));
  }
  if (distinct.size() < 2)
    throw DataError("motion-encoder training needs at least two distinct lyric embeddings");
  if (train.batch < 2) throw UsageError("encoder batch must be >= 2");
  std::vector<const EncoderPair*> usable;
  for (const EncoderPair& p : pairs)
    if (p.lyric.norm() > 0.0) usable.push_back(&p);

  MotionEncoder enc(config);
  enc.initialize(train.seed);
  std::mt19937_64 rng(fnv1a64("encoder", train.seed));
  AdamState opt;
  std::vector<std::size_t> order(usable.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const auto batch_size = std::min<std::size_t>(train.batch, usable.size());
  for (int step = 0; step < train.steps; ++step) {
    std::vector<EncoderPair> batch;
    while (batch.size() < batch_size) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(*usable[order[cursor++]]);
    }
    ContrastiveLoss lg = contrastive_loss_and_gradient(enc, batch, train.temperature, train.threads);
    opt.update(enc.parameters(), std::move(lg.gradient), train.adam);
    if (on_step) on_step(step, lg.loss);
  }
  return enc;
}

}  // namespace lm2d

#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lm2d/autograd.hpp"
#include "lm2d/diffusion.hpp"
#include "lm2d/skeleton.hpp"

namespace lm2d {

struct EncoderConfig {
  int hidden = 128;
  int kernel = 5;  // temporal convolution width, odd
  int embed_dim = 768;

  void validate() const;
  std::map<std::string, std::string> to_fields() const;
  static EncoderConfig from_fields(const std::map<std::string, std::string>& fields);
  bool operator==(const EncoderConfig&) const = default;
};

/// Per-frame joint rotations (root translation dropped) -> linear + SiLU ->
/// temporal convolution + SiLU -> mean over frames -> linear -> unit norm.
class MotionEncoder {
 public:
  explicit MotionEncoder(EncoderConfig config = {});

  const EncoderConfig& config() const { return config_; }
  ag::ParameterSet& params() { return params_; }
  const ag::ParameterSet& params() const { return params_; }
  Eigen::VectorXd& parameters() { return params_.values(); }
  const Eigen::VectorXd& parameters() const { return params_.values(); }
  void initialize(std::uint64_t seed);

  /// 1 x embed_dim, unit norm. `motion` is frames x 147.
  ag::Var forward(ag::ParamBinding& p, const Eigen::MatrixXd& motion) const;
  Eigen::VectorXd embed(const Eigen::MatrixXd& motion) const;
  Eigen::VectorXd embed(const MotionSequence& motion) const { return embed(motion.to_matrix()); }

  void save(const std::filesystem::path& path, const std::map<std::string, std::string>& extra = {}) const;
  static MotionEncoder load(const std::filesystem::path& path);

 private:
  EncoderConfig config_;
  ag::ParameterSet params_;
  int w1_, b1_, wc_, bc_, w2_, b2_;
};

struct EncoderPair {
  Eigen::MatrixXd motion;  // frames x 147
  Eigen::VectorXd lyric;   // unit-norm 768
  std::string clip_id;
};

struct EncoderTrainConfig {
  int steps = 300;
  int batch = 32;
  double temperature = 0.07;
  AdamConfig adam{1e-3, 0.9, 0.999, 1e-8, 1.0};
  std::uint64_t seed = 0;
  int threads = 1;
};

/// Symmetric contrastive loss over a batch and its gradient. Motion -> text
/// uses the distinct lyric embeddings in the batch as classes; text -> motion
/// scores each pair's lyric against every motion in the batch.
struct ContrastiveLoss {
  double loss = 0.0;
  Eigen::VectorXd gradient;
};
ContrastiveLoss contrastive_loss_and_gradient(const MotionEncoder& encoder, std::span<const EncoderPair> batch,
                                              double temperature, int threads = 1);

/// Throws DataError when fewer than two distinct lyric embeddings are present.
/// `on_step(step, loss)` is called after every update when set.
MotionEncoder train_motion_encoder(const std::vector<EncoderPair>& pairs, const EncoderConfig& config,
                                   const EncoderTrainConfig& train,
                                   const std::function<void(int, double)>& on_step = {});

}  // namespace lm2d

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lm2d/audio.hpp"
#include "lm2d/consistency.hpp"
#include "lm2d/dataio.hpp"
#include "lm2d/diffusion.hpp"
#include "lm2d/encoder.hpp"
#include "lm2d/network.hpp"
#include "lm2d/sampling.hpp"

namespace lm2d {

/// Canonical key=value run configuration. Every key has a default; unknown
/// keys are rejected on set and on load.
class RunConfig {
 public:
  RunConfig();

  /// Parses "key=value" lines; blank lines and lines starting with '#' are
  /// ignored. Later assignments win.
  void merge_text(const std::string& text, const std::string& context = "config");
  void merge_file(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  double get_double(const std::string& key) const;
  long long get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;

  /// Sorted "key=value\n" lines.
  std::string render() const;
  /// SHA-256 of render().
  std::string digest() const;

  static const std::map<std::string, std::string>& defaults();

  // Typed views.
  DiffusionSchedule schedule() const;
  NetworkConfig network() const;
  LossWeights loss_weights() const;
  AdamConfig adam() const;
  SamplerConfig sampler() const;
  SyntheticSpec synthetic() const;
  EncoderConfig encoder() const;
  EncoderTrainConfig encoder_training() const;
  AudioFeatureConfig audio() const;
  std::uint64_t seed() const { return get_u64("seed"); }
  int threads() const { return static_cast<int>(get_int("threads")); }
  int window_frames() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace lm2d

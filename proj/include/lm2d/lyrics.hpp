#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace lm2d {

inline constexpr int kLyricDim = 768;

struct LyricWindow {
  double start = 0.0;  // seconds, inclusive
  double end = 0.0;    // seconds, exclusive
  std::string text;
};

/// Lowercased, whitespace runs collapsed to one space, trimmed. Embeddings are
/// keyed by this form.
std::string normalize_lyric_text(const std::string& text);
std::uint64_t lyric_text_hash(const std::string& text);

/// Timing file: one `start<TAB>end<TAB>text` line per window.
std::vector<LyricWindow> parse_lyric_timing(const std::string& content, const std::string& context = "lyrics");
std::vector<LyricWindow> load_lyric_timing(const std::filesystem::path& path);
std::string serialize_lyric_timing(const std::vector<LyricWindow>& windows);

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual Eigen::VectorXd embed(const std::string& text) const = 0;
};

/// Seeded hash of the normalized text expanded to 768 Gaussian values and
/// scaled to unit norm.
class TestEmbedder : public EmbeddingProvider {
 public:
  explicit TestEmbedder(std::uint64_t seed = 0) : seed_(seed) {}
  Eigen::VectorXd embed(const std::string& text) const override;

 private:
  std::uint64_t seed_;
};

/// Read-only table loaded from an LYE1 file: "LYE1" | u32 count | count x
/// (u64 text hash, 768 f32).
class PrecomputedEmbeddings : public EmbeddingProvider {
 public:
  static PrecomputedEmbeddings load(const std::filesystem::path& path);
  static PrecomputedEmbeddings decode(std::span<const std::uint8_t> bytes, const std::string& context);
  void insert(const std::string& text, const Eigen::VectorXd& v);
  std::vector<std::uint8_t> encode() const;
  void save(const std::filesystem::path& path) const;
  std::size_t size() const { return table_.size(); }
  /// Throws DataError naming the text when absent.
  Eigen::VectorXd embed(const std::string& text) const override;

 private:
  std::map<std::uint64_t, Eigen::VectorXf> table_;
};

struct EmbeddedWindow {
  double start = 0.0;
  double end = 0.0;
  Eigen::VectorXd embedding;
};

/// Validates ordering (start < end, no overlaps) and embeds every window.
std::vector<EmbeddedWindow> embed_lyrics(const std::vector<LyricWindow>& windows, const EmbeddingProvider& provider);

struct ConditioningTrack {
  Eigen::MatrixXd audio;  // frames x 35
  Eigen::MatrixXd lyric;  // frames x 768
  double fps = 60.0;

  Eigen::Index frames() const { return audio.rows(); }
  /// frames x 803: audio columns then lyric columns.
  Eigen::MatrixXd combined() const;
};

/// Frame i carries the embedding of the window containing i / fps, or zeros.
/// Audio longer than n_frames is truncated; up to 2 frames short is padded by
/// repeating the last frame.
ConditioningTrack align_conditioning(const Eigen::MatrixXd& audio, const std::vector<EmbeddedWindow>& windows,
                                     int n_frames, double fps);

}  // namespace lm2d

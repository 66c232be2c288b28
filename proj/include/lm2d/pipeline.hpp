#pragma once

// Batch workflows behind the command-line tool. Each writes run.log and
// config.resolved into its output directory and never modifies its inputs.

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <string>

#include "lm2d/config.hpp"
#include "lm2d/dataio.hpp"
#include "lm2d/encoder.hpp"
#include "lm2d/lyrics.hpp"

namespace lm2d {

/// Canonical key=value run log, written sorted by key.
class RunLog {
 public:
  explicit RunLog(std::filesystem::path out_dir);
  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, double value);
  void input(const std::string& name, const std::filesystem::path& path);
  void begin_phase(const std::string& name);
  void end_phase();
  void write() const;

 private:
  std::filesystem::path out_dir_;
  std::map<std::string, std::string> entries_;
  std::string phase_;
  std::chrono::steady_clock::time_point phase_start_;
};

/// Audio columns with MFCCs scaled by 1/50, then lyric columns scaled by
/// sqrt(768) so each input block has entries of order one.
Eigen::MatrixXd network_conditioning(const ConditioningTrack& track);

std::unique_ptr<EmbeddingProvider> make_embedder(const RunConfig& config);

/// Loads every manifest entry; results are in manifest order.
std::vector<LoadedClip> load_clips(const Manifest& manifest, const EmbeddingProvider& embedder,
                                   const AudioFeatureConfig& audio_cfg, int threads);

/// One pair per lyric window: the frames i with start <= i / fps < end and the
/// window's embedding. Windows covering fewer than 2 frames are skipped.
std::vector<EncoderPair> lyric_segments(const MotionSequence& motion, const std::vector<LyricWindow>& lyrics,
                                        const EmbeddingProvider& embedder);

/// Distinct lyric embeddings in first-seen order.
std::vector<Eigen::VectorXd> distinct_lyrics(const std::vector<EncoderPair>& pairs);

struct RetrievalStats {
  double matched = 0.0;     // mean cosine to the pair's own lyric
  double mismatched = 0.0;  // mean cosine to every other candidate
  double top1 = 0.0;        // fraction whose own lyric scores highest
  std::size_t pairs = 0;
  std::size_t candidates = 0;
};
RetrievalStats evaluate_retrieval(const MotionEncoder& encoder, const std::vector<EncoderPair>& pairs,
                                  const std::vector<Eigen::VectorXd>& candidates);

namespace pipeline {

void make_synthetic(const RunConfig& config, const std::filesystem::path& out_dir);
void extract_features(const RunConfig& config, const std::filesystem::path& manifest,
                      const std::filesystem::path& out_dir);
void train(const RunConfig& config, const std::filesystem::path& manifest, const std::filesystem::path& out_dir);
void distill(const RunConfig& config, const std::filesystem::path& manifest, const std::filesystem::path& teacher,
             const std::filesystem::path& out_dir);
/// Samples every test-split clip (all clips if the manifest has no test
/// split). one_step requires a consistency checkpoint, multi-step a diffusion
/// checkpoint.
void sample(const RunConfig& config, const std::filesystem::path& manifest, const std::filesystem::path& checkpoint,
            bool one_step, const std::filesystem::path& out_dir);
void train_encoder(const RunConfig& config, const std::filesystem::path& manifest,
                   const std::filesystem::path& out_dir);
/// encoder may be empty, in which case semantic matching is not reported.
void evaluate(const RunConfig& config, const std::filesystem::path& manifest, const std::filesystem::path& samples,
              const std::filesystem::path& encoder, const std::filesystem::path& out_dir);

}  // namespace pipeline

}  // namespace lm2d

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lm2d/audio.hpp"
#include "lm2d/diffusion.hpp"
#include "lm2d/lyrics.hpp"
#include "lm2d/skeleton.hpp"

namespace lm2d {

// Motion file: "MSQ1" | u16 version | f32 fps | u16 joint_count (24) |
//              u32 frame_count | frame_count x 147 f32, little-endian.
inline constexpr std::uint16_t kMotionFileVersion = 1;

std::vector<std::uint8_t> encode_motion(const MotionSequence& motion);
/// Throws ParseError (with byte offset) on bad magic, version, joint count or
/// truncation.
MotionSequence decode_motion(std::span<const std::uint8_t> bytes, const std::string& context = "motion");
void save_motion(const MotionSequence& motion, const std::filesystem::path& path);
/// clip_id is set to the file stem.
MotionSequence load_motion(const std::filesystem::path& path);

struct ClipManifestEntry {
  std::string id;
  std::string motion_path;
  std::string audio_path;  // WAV or AFT1 features
  std::string lyric_path;  // may be empty: no lyrics
  double fps = 60.0;
  std::string split = "train";  // train | test

  bool operator==(const ClipManifestEntry&) const = default;
};

/// JSON-lines manifest. Relative paths resolve against base_dir.
struct Manifest {
  std::filesystem::path base_dir;
  std::vector<ClipManifestEntry> entries;

  std::filesystem::path resolve(const std::string& path) const;
  Manifest filter_split(const std::string& split) const;
};

Manifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir,
                        const std::string& context = "manifest");
/// Also checks that every referenced file exists.
Manifest load_manifest(const std::filesystem::path& path);
std::string serialize_manifest(const Manifest& manifest);
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

/// Deterministic per-clip split by seeded hash of the id. Entries keep their
/// order; the split field is rewritten.
std::pair<Manifest, Manifest> split_dataset(const Manifest& manifest, double test_fraction, std::uint64_t seed);

struct LoadedClip {
  MotionSequence motion;
  ConditioningTrack conditioning;
  std::vector<LyricWindow> lyrics;
};

LoadedClip load_clip(const Manifest& manifest, const ClipManifestEntry& entry, const EmbeddingProvider& embedder,
                     const AudioFeatureConfig& audio_cfg = {});

/// Cuts full clips (start_frame 0) into windows of round(window_s * fps)
/// frames every round(stride_s * fps) frames, ordered by (clip id, start
/// frame). Clips shorter than the window are skipped with a warning.
std::vector<TrainingExample> window_clips(const std::vector<TrainingExample>& clips, double fps, double window_seconds,
                                          double stride_seconds);

struct SyntheticSpec {
  int n_clips = 100;
  double clip_seconds = 6.0;
  double bpm_min = 90.0;
  double bpm_max = 150.0;
  std::vector<std::string> motif_vocab{"raise", "wave", "clap", "turn"};
  double noise = 0.002;  // rad, i.i.d. per frame and joint axis
  std::uint64_t seed = 0;
  double fps = 60.0;
  int sample_rate = 22050;
  double test_fraction = 0.2;
  // Shifts the motion (not the audio) by this many beats; used to build
  // deliberately misaligned clips.
  double motion_phase_beats = 0.0;

  void validate() const;
};

struct SyntheticClip {
  std::string id;
  double bpm = 0.0;
  MotionSequence motion;
  Waveform audio;
  std::vector<LyricWindow> lyrics;
  std::vector<int> beat_frames;    // click positions rounded to frames, >= 2 frames from either edge
  std::vector<int> window_tokens;  // motif index per lyric window
};

/// Number of motifs the generator can bind to tokens.
int synthetic_motif_capacity();
/// Joints driven by a motif (distinct between motifs).
std::vector<int> synthetic_motif_joints(int motif);

SyntheticClip generate_synthetic_clip(const SyntheticSpec& spec, int index);

/// Writes clips/<id>.msq, clips/<id>.wav, clips/<id>.lyr and manifest.jsonl
/// under out_dir and returns the manifest.
Manifest generate_synthetic_dataset(const SyntheticSpec& spec, const std::filesystem::path& out_dir, int threads = 1);

}  // namespace lm2d

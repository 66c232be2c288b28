#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <span>
#include <vector>

namespace lm2d {

inline constexpr int kAudioFeatureDim = 35;
inline constexpr int kMfccCount = 20;
inline constexpr int kChromaCount = 12;

// Column layout of one audio feature frame.
namespace audio_col {
inline constexpr int kOnset = 0;
inline constexpr int kMfcc = 1;     // 20 columns
inline constexpr int kChroma = 21;  // 12 columns, C .. B
inline constexpr int kPeak = 33;
inline constexpr int kBeat = 34;
}  // namespace audio_col

struct Waveform {
  std::vector<float> samples;  // mono
  int sample_rate = 22050;

  double duration_seconds() const { return samples.size() / static_cast<double>(sample_rate); }
};

/// RIFF/WAVE, PCM 16-bit or IEEE float 32-bit; multi-channel input is averaged
/// to mono.
Waveform load_wav(const std::filesystem::path& path);
Waveform decode_wav(std::span<const std::uint8_t> bytes, const std::string& context = "wav");
/// Writes 16-bit PCM mono.
void save_wav(const Waveform& wave, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_wav(const Waveform& wave);

struct AudioFeatureConfig {
  // Analysis window at 22050 Hz; scaled to the next power of two at other
  // rates so the frequency resolution stays constant.
  int window = 1024;
  int mel_bands = 40;
  double log_floor = 1e-10;
  double chroma_min_hz = 55.0;
  double chroma_max_hz = 5000.0;
  // Peak picking: local mean + peak_delta * local std over +-peak_radius_s.
  double peak_radius_s = 0.25;
  double peak_delta = 0.5;
  double tempo_min_bpm = 60.0;
  double tempo_max_bpm = 180.0;
  double tempo_prior_bpm = 120.0;
  double tempo_prior_octaves = 1.0;
  double beat_tightness = 100.0;
};

struct AudioAnalysis {
  Eigen::MatrixXd features;  // frames x 35
  std::vector<int> beat_frames;
  std::vector<int> peak_frames;
  double tempo_bpm = 0.0;  // 0 when no onsets were found
  int fft_size = 0;
  int hop = 0;
};

/// FFT size used for a sample rate.
int analysis_window(int sample_rate, const AudioFeatureConfig& cfg);

/// One frame per motion frame: hop = round(sample_rate / fps), frame i
/// centered on sample i * hop (odd reflection at the edges), ceil(len / hop)
/// frames.
AudioAnalysis extract_audio_features(std::span<const float> samples, int sample_rate, double fps,
                                     const AudioFeatureConfig& cfg = {});

/// Tempo (BPM) and beat frames from an onset envelope; exposed for tests.
double estimate_tempo(std::span<const double> onset, double fps, const AudioFeatureConfig& cfg);
std::vector<int> track_beats(std::span<const double> onset, double fps, double bpm, const AudioFeatureConfig& cfg);
std::vector<int> pick_peaks(std::span<const double> onset, double fps, const AudioFeatureConfig& cfg);

/// HTK mel scale.
double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Precomputed feature file: "AFT1" | u32 frames | u16 dim (35) | f32 fps |
/// frames x dim f32.
struct FeatureFile {
  Eigen::MatrixXd features;
  float fps = 60.0f;
};
void save_features(const FeatureFile& f, const std::filesystem::path& path);
FeatureFile load_features(const std::filesystem::path& path);

/// Loads audio features from either a WAV file (extracting) or an AFT1 file,
/// detected by magic.
Eigen::MatrixXd load_audio_features(const std::filesystem::path& path, double fps, const AudioFeatureConfig& cfg = {});

}  // namespace lm2d

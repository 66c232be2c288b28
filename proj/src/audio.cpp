#include "lm2d/audio.hpp"

#include <fftw3.h>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <numeric>

#include "lm2d/error.hpp"
#include "lm2d/util.hpp"

namespace lm2d {

namespace {

// FFTW planning is not thread-safe; execution with a private plan is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

class RealFft {
 public:
  explicit RealFft(int n) : n_(n) {
    in_ = static_cast<double*>(fftw_malloc(sizeof(double) * n));
    out_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)));
    std::lock_guard lock(fftw_planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(n, in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    {
      std::lock_guard lock(fftw_planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_; }
  // |X_k|^2 for k = 0 .. n/2.
  void power(std::vector<double>& out) {
    fftw_execute(plan_);
    out.resize(n_ / 2 + 1);
    for (int k = 0; k <= n_ / 2; ++k) out[k] = out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1];
  }

 private:
  int n_;
  double* in_;
  fftw_complex* out_;
  fftw_plan plan_;
};

// Odd (point) reflection about the end samples. Keeps value and slope
// continuous, so a steady tone does not smear across pitch classes in the edge
// frames. Callers keep |overhang| < len.
double extended_sample(std::span<const float> s, std::int64_t j) {
  const auto len = static_cast<std::int64_t>(s.size());
  if (j < 0) return 2.0 * s[0] - s[-j];
  if (j >= len) return 2.0 * s[len - 1] - s[2 * (len - 1) - j];
  return s[j];
}

// Triangular mel filters over the FFT bin frequencies, bands x bins.
Eigen::MatrixXd mel_filterbank(int bands, int n_fft, int sample_rate) {
  const int bins = n_fft / 2 + 1;
  const double mel_lo = hz_to_mel(0.0);
  const double mel_hi = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(bands + 2);
  for (int i = 0; i < bands + 2; ++i) edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (bands + 1));
  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(bands, bins);
  for (int b = 0; b < bands; ++b) {
    const double lo = edges[b], mid = edges[b + 1], hi = edges[b + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = k * static_cast<double>(sample_rate) / n_fft;
      if (f > lo && f < hi) fb(b, k) = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
    }
  }
  return fb;
}

// Pitch class (C = 0) of each FFT bin, or -1 outside the chroma band.
std::vector<int> chroma_map(int n_fft, int sample_rate, const AudioFeatureConfig& cfg) {
  std::vector<int> cls(n_fft / 2 + 1, -1);
  for (int k = 1; k <= n_fft / 2; ++k) {
    const double f = k * static_cast<double>(sample_rate) / n_fft;
    if (f < cfg.chroma_min_hz || f > cfg.chroma_max_hz) continue;
    const long midi = std::lround(69.0 + 12.0 * std::log2(f / 440.0));
    cls[k] = static_cast<int>(((midi % 12) + 12) % 12);
  }
  return cls;
}

}  // namespace

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

int analysis_window(int sample_rate, const AudioFeatureConfig& cfg) {
  const double wanted = cfg.window * static_cast<double>(sample_rate) / 22050.0;
  int n = 1;
  while (n < wanted) n <<= 1;
  return std::max(n, 16);
}

std::vector<int> pick_peaks(std::span<const double> onset, double fps, const AudioFeatureConfig& cfg) {
  const int n = static_cast<int>(onset.size());
  const double top = n ? *std::max_element(onset.begin(), onset.end()) : 0.0;
  std::vector<int> peaks;
  if (!(top > 0.0)) return peaks;
  const int radius = std::max(1, static_cast<int>(std::lround(cfg.peak_radius_s * fps)));
  for (int i = 0; i < n; ++i) {
    const double v = onset[i];
    // Ignore numerical ripple far below the strongest onset.
    if (!(v > 0.01 * top)) continue;
    if (i > 0 && !(v > onset[i - 1])) continue;
    if (i + 1 < n && !(v >= onset[i + 1])) continue;
    const int a = std::max(0, i - radius), b = std::min(n - 1, i + radius);
    double sum = 0.0, sq = 0.0;
    for (int j = a; j <= b; ++j) {
      sum += onset[j];
      sq += onset[j] * onset[j];
    }
    const double cnt = b - a + 1;
    const double mean = sum / cnt;
    const double sd = std::sqrt(std::max(0.0, sq / cnt - mean * mean));
    if (v > mean + cfg.peak_delta * sd) peaks.push_back(i);
  }
  return peaks;
}

double estimate_tempo(std::span<const double> onset, double fps, const AudioFeatureConfig& cfg) {
  const int n = static_cast<int>(onset.size());
  if (std::none_of(onset.begin(), onset.end(), [](double v) { return v > 0.0; })) return 0.0;
  const int lag_lo = std::max(1, static_cast<int>(std::floor(60.0 * fps / cfg.tempo_max_bpm)));
  const int lag_hi = std::min(n - 1, static_cast<int>(std::ceil(60.0 * fps / cfg.tempo_min_bpm)));
  if (lag_hi < lag_lo) return 0.0;
  std::vector<double> score(lag_hi + 2, 0.0);
  for (int lag = std::max(1, lag_lo - 1); lag <= std::min(n - 1, lag_hi + 1); ++lag) {
    double ac = 0.0;
    for (int i = 0; i + lag < n; ++i) ac += onset[i] * onset[i + lag];
    ac /= static_cast<double>(n - lag);
    const double bpm = 60.0 * fps / lag;
    const double z = std::log2(bpm / cfg.tempo_prior_bpm) / cfg.tempo_prior_octaves;
    score[lag] = ac * std::exp(-0.5 * z * z);
  }
  int best = lag_lo;
  for (int lag = lag_lo; lag <= lag_hi; ++lag)
    if (score[lag] > score[best]) best = lag;
  double lag = best;
  if (best - 1 >= 1 && best + 1 < static_cast<int>(score.size())) {
    const double a = score[best - 1], b = score[best], c = score[best + 1];
    const double denom = a - 2.0 * b + c;
    if (denom < 0.0) lag += std::clamp(0.5 * (a - c) / denom, -0.5, 0.5);
  }
  return 60.0 * fps / lag;
}

std::vector<int> track_beats(std::span<const double> onset, double fps, double bpm, const AudioFeatureConfig& cfg) {
  const int n = static_cast<int>(onset.size());
  std::vector<int> beats;
  if (!(bpm > 0.0) || n == 0) return beats;
  const double period = 60.0 * fps / bpm;
  const int reach_lo = std::max(1, static_cast<int>(std::lround(period / 2.0)));
  const int reach_hi = std::max(reach_lo, static_cast<int>(std::lround(2.0 * period)));
  std::vector<double> cum(n);
  std::vector<int> back(n, -1);
  for (int t = 0; t < n; ++t) {
    double best = -std::numeric_limits<double>::infinity();
    int arg = -1;
    for (int tau = t - reach_hi; tau <= t - reach_lo; ++tau) {
      if (tau < 0) continue;
      const double dev = std::log((t - tau) / period);
      const double s = cum[tau] - cfg.beat_tightness * dev * dev;
      if (s > best) {
        best = s;
        arg = tau;
      }
    }
    cum[t] = onset[t] + (arg >= 0 ? std::max(best, 0.0) : 0.0);
    back[t] = arg >= 0 && best > 0.0 ? arg : -1;
  }
  const int tail = std::max(0, n - static_cast<int>(std::ceil(period)));
  int t = tail;
  for (int i = tail; i < n; ++i)
    if (cum[i] > cum[t]) t = i;
  while (t >= 0) {
    beats.push_back(t);
    t = back[t];
  }
  std::reverse(beats.begin(), beats.end());
  // Drop beats extrapolated into silent lead-in and tail.
  auto strength = [&](int b) {
    double s = onset[b];
    if (b > 0) s = std::max(s, onset[b - 1]);
    if (b + 1 < n) s = std::max(s, onset[b + 1]);
    return s;
  };
  const double top = *std::max_element(onset.begin(), onset.end());
  while (!beats.empty() && strength(beats.front()) <= 0.05 * top) beats.erase(beats.begin());
  while (!beats.empty() && strength(beats.back()) <= 0.05 * top) beats.pop_back();
  return beats;
}

AudioAnalysis extract_audio_features(std::span<const float> samples, int sample_rate, double fps,
                                     const AudioFeatureConfig& cfg) {
  if (sample_rate < 8000) throw DataError(fmt::format("sample rate {} Hz is below 8000 Hz", sample_rate));
  if (!(fps > 0.0)) throw UsageError("feature frame rate must be positive");
  const int n_fft = analysis_window(sample_rate, cfg);
  const auto len = static_cast<std::int64_t>(samples.size());
  if (len < n_fft)
    throw DataError(fmt::format("waveform has {} samples, shorter than one {}-sample analysis window", len, n_fft));
  for (std::int64_t i = 0; i < len; ++i)
    if (!std::isfinite(samples[i])) throw DataError(fmt::format("waveform sample {} is not finite", i));

  const double step = sample_rate / fps;
  const int frames = static_cast<int>(std::ceil(len / step - 1e-9));
  const int bins = n_fft / 2 + 1;
  const Eigen::MatrixXd fb = mel_filterbank(cfg.mel_bands, n_fft, sample_rate);
  const std::vector<int> pitch = chroma_map(n_fft, sample_rate, cfg);
  std::vector<double> window(n_fft);
  for (int j = 0; j < n_fft; ++j) window[j] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * j / n_fft);

  // DCT-II (orthonormal) rows for the first 20 coefficients.
  const int B = cfg.mel_bands;
  Eigen::MatrixXd dct(kMfccCount, B);
  for (int k = 0; k < kMfccCount; ++k)
    for (int b = 0; b < B; ++b)
      dct(k, b) = (k == 0 ? std::sqrt(1.0 / B) : std::sqrt(2.0 / B)) * std::cos(std::numbers::pi * k * (b + 0.5) / B);

  AudioAnalysis out;
  out.fft_size = n_fft;
  out.hop = static_cast<int>(std::lround(step));
  out.features = Eigen::MatrixXd::Zero(frames, kAudioFeatureDim);
  Eigen::MatrixXd mel_mag(frames, B);
  RealFft fft(n_fft);
  std::vector<double> power;
  Eigen::VectorXd p(bins);
  for (int i = 0; i < frames; ++i) {
    const std::int64_t center = std::llround(i * step);
    double* in = fft.input();
    for (int j = 0; j < n_fft; ++j) in[j] = window[j] * extended_sample(samples, center - n_fft / 2 + j);
    fft.power(power);
    for (int k = 0; k < bins; ++k) p[k] = power[k] / n_fft;
    const Eigen::VectorXd mel = fb * p;
    Eigen::VectorXd log_mel(B);
    for (int b = 0; b < B; ++b) {
      log_mel[b] = std::log(std::max(mel[b], cfg.log_floor));
      mel_mag(i, b) = std::sqrt(mel[b]);
    }
    out.features.row(i).segment(audio_col::kMfcc, kMfccCount) = (dct * log_mel).transpose();
    Eigen::Matrix<double, kChromaCount, 1> chroma = Eigen::Matrix<double, kChromaCount, 1>::Zero();
    for (int k = 0; k < bins; ++k)
      if (pitch[k] >= 0) chroma[pitch[k]] += p[k];
    const double peak = chroma.maxCoeff();
    if (peak > 0.0) chroma /= peak;
    out.features.row(i).segment(audio_col::kChroma, kChromaCount) = chroma.transpose();
  }

  // Half-wave rectified flux of mel magnitudes; frame 0 is compared with
  // silence. Normalized to a maximum of 1.
  std::vector<double> onset(frames, 0.0);
  for (int i = 0; i < frames; ++i) {
    double flux = 0.0;
    for (int b = 0; b < B; ++b) flux += std::max(0.0, mel_mag(i, b) - (i > 0 ? mel_mag(i - 1, b) : 0.0));
    onset[i] = flux;
  }
  const double top = *std::max_element(onset.begin(), onset.end());
  if (top > 0.0)
    for (double& v : onset) v /= top;
  for (int i = 0; i < frames; ++i) out.features(i, audio_col::kOnset) = onset[i];

  out.peak_frames = pick_peaks(onset, fps, cfg);
  out.tempo_bpm = estimate_tempo(onset, fps, cfg);
  out.beat_frames = track_beats(onset, fps, out.tempo_bpm, cfg);
  for (int f : out.peak_frames) out.features(f, audio_col::kPeak) = 1.0;
  for (int f : out.beat_frames) out.features(f, audio_col::kBeat) = 1.0;
  return out;
}

Waveform decode_wav(std::span<const std::uint8_t> bytes, const std::string& context) {
  ByteReader r(bytes, context);
  if (r.raw(4) != "RIFF") r.fail("missing RIFF magic");
  r.u32();
  if (r.raw(4) != "WAVE") r.fail("missing WAVE tag");
  int format = -1, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::vector<float> mono;
  bool have_data = false;
  while (r.remaining() >= 8 && !have_data) {
    const std::string id = r.raw(4);
    const std::uint32_t size = r.u32();
    if (size > r.remaining()) r.fail(fmt::format("chunk '{}' claims {} bytes but only {} remain", id, size, r.remaining()));
    if (id == "fmt ") {
      if (size < 16) r.fail("fmt chunk too short");
      format = r.u16();
      channels = r.u16();
      rate = r.u32();
      r.u32();
      r.u16();
      bits = r.u16();
      std::uint32_t used = 16;
      if (format == 0xFFFE && size >= 26) {
        r.u16();
        r.u16();
        r.u32();
        format = r.u16();
        used = 26;
      }
      r.raw(size - used);
    } else if (id == "data") {
      if (format < 0) r.fail("data chunk before fmt chunk");
      if (channels < 1) r.fail("zero channels");
      const bool pcm16 = format == 1 && bits == 16;
      const bool f32 = format == 3 && bits == 32;
      if (!pcm16 && !f32) r.fail(fmt::format("unsupported WAV encoding (format {}, {} bits)", format, bits));
      const std::size_t frame_bytes = static_cast<std::size_t>(channels) * (bits / 8);
      const std::size_t count = size / frame_bytes;
      mono.resize(count);
      for (std::size_t i = 0; i < count; ++i) {
        double acc = 0.0;
        for (int c = 0; c < channels; ++c) {
          if (pcm16)
            acc += static_cast<std::int16_t>(r.u16()) / 32768.0;
          else
            acc += r.f32();
        }
        mono[i] = static_cast<float>(acc / channels);
      }
      r.raw(size - count * frame_bytes);
      have_data = true;
    } else {
      r.raw(size);
    }
    if ((size & 1u) && r.remaining() > 0 && !have_data) r.raw(1);
  }
  if (!have_data) r.fail("no data chunk");
  if (rate == 0) throw DataError(context + ": sample rate is zero");
  return {std::move(mono), static_cast<int>(rate)};
}

Waveform load_wav(const std::filesystem::path& path) { return decode_wav(read_file_bytes(path), path.string()); }

std::vector<std::uint8_t> encode_wav(const Waveform& wave) {
  ByteWriter w;
  const auto data_bytes = static_cast<std::uint32_t>(wave.samples.size() * 2);
  w.raw("RIFF");
  w.u32(36 + data_bytes);
  w.raw("WAVE");
  w.raw("fmt ");
  w.u32(16);
  w.u16(1);
  w.u16(1);
  w.u32(static_cast<std::uint32_t>(wave.sample_rate));
  w.u32(static_cast<std::uint32_t>(wave.sample_rate * 2));
  w.u16(2);
  w.u16(16);
  w.raw("data");
  w.u32(data_bytes);
  for (float s : wave.samples) {
    const double c = std::clamp(static_cast<double>(s), -1.0, 32767.0 / 32768.0);
    w.u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32768.0))));
  }
  return w.bytes();
}

void save_wav(const Waveform& wave, const std::filesystem::path& path) { write_file_bytes(path, encode_wav(wave)); }

void save_features(const FeatureFile& f, const std::filesystem::path& path) {
  if (f.features.cols() != kAudioFeatureDim)
    throw UsageError(fmt::format("feature matrix has {} columns, expected {}", f.features.cols(), kAudioFeatureDim));
  ByteWriter w;
  w.raw("AFT1");
  w.u32(static_cast<std::uint32_t>(f.features.rows()));
  w.u16(kAudioFeatureDim);
  w.f32(f.fps);
  for (Eigen::Index i = 0; i < f.features.rows(); ++i)
    for (int j = 0; j < kAudioFeatureDim; ++j) w.f32(static_cast<float>(f.features(i, j)));
  write_file_bytes(path, w.bytes());
}

FeatureFile load_features(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  ByteReader r(bytes, path.string());
  if (r.raw(4) != "AFT1") r.fail("bad magic, expected AFT1");
  const std::uint32_t frames = r.u32();
  const std::uint16_t dim = r.u16();
  if (dim != kAudioFeatureDim) r.fail(fmt::format("feature dimension {} is not {}", dim, kAudioFeatureDim));
  FeatureFile f;
  f.fps = r.f32();
  if (!(f.fps > 0.0f)) r.fail("fps must be positive");
  f.features.resize(frames, dim);
  for (std::uint32_t i = 0; i < frames; ++i)
    for (int j = 0; j < dim; ++j) f.features(i, j) = r.f32();
  return f;
}

Eigen::MatrixXd load_audio_features(const std::filesystem::path& path, double fps, const AudioFeatureConfig& cfg) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  if (bytes.size() >= 4 && std::equal(bytes.begin(), bytes.begin() + 4, "AFT1")) {
    FeatureFile f = load_features(path);
    if (std::abs(f.fps - fps) > 1e-3)
      throw DataError(fmt::format("{}: features are at {} fps but motion is at {} fps", path.string(), f.fps, fps));
    return f.features;
  }
  const Waveform wave = decode_wav(bytes, path.string());
  return extract_audio_features(wave.samples, wave.sample_rate, fps, cfg).features;
}

}  // namespace lm2d

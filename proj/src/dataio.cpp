#include "lm2d/dataio.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <json.hpp>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "lm2d/error.hpp"
#include "lm2d/util.hpp"

namespace lm2d {

std::vector<std::uint8_t> encode_motion(const MotionSequence& motion) {
  ByteWriter w;
  w.raw("MSQ1");
  w.u16(kMotionFileVersion);
  w.f32(motion.fps);
  w.u16(kJointCount);
  w.u32(static_cast<std::uint32_t>(motion.frames.rows()));
  w.f32s(std::span<const float>(motion.frames.data(), static_cast<std::size_t>(motion.frames.size())));
  return w.bytes();
}

MotionSequence decode_motion(std::span<const std::uint8_t> bytes, const std::string& context) {
  ByteReader r(bytes, context);
  if (r.raw(4) != "MSQ1") throw ParseError(context + ": bad magic, expected MSQ1", 0);
  const std::size_t version_at = r.offset();
  const std::uint16_t version = r.u16();
  if (version != kMotionFileVersion)
    throw ParseError(fmt::format("{}: unsupported motion file version {}", context, version), version_at);
  MotionSequence m;
  m.fps = r.f32();
  const std::size_t joints_at = r.offset();
  const std::uint16_t joints = r.u16();
  if (joints != kJointCount)
    throw ParseError(fmt::format("{}: unsupported skeleton with {} joints (expected {})", context, joints, kJointCount),
                     joints_at);
  const std::uint32_t frames = r.u32();
  const std::size_t need = static_cast<std::size_t>(frames) * kPoseDim * sizeof(float);
  if (r.remaining() < need)
    r.fail(fmt::format("truncated frame data: expected {} bytes for {} frames but only {} remain", need, frames,
                       r.remaining()));
  if (r.remaining() > need) r.fail(fmt::format("{} trailing bytes after frame data", r.remaining() - need));
  m.frames.resize(frames, kPoseDim);
  r.f32s(std::span<float>(m.frames.data(), static_cast<std::size_t>(m.frames.size())));
  if (!(m.fps > 0.0f) || !std::isfinite(m.fps)) throw ParseError(context + ": fps must be positive", 6);
  return m;
}

void save_motion(const MotionSequence& motion, const std::filesystem::path& path) {
  write_file_bytes(path, encode_motion(motion));
}

MotionSequence load_motion(const std::filesystem::path& path) {
  MotionSequence m = decode_motion(read_file_bytes(path), path.string());
  m.clip_id = path.stem().string();
  m.validate();
  return m;
}

std::filesystem::path Manifest::resolve(const std::string& path) const {
  const std::filesystem::path p(path);
  return p.is_absolute() ? p : base_dir / p;
}

Manifest Manifest::filter_split(const std::string& split) const {
  Manifest out{base_dir, {}};
  for (const ClipManifestEntry& e : entries)
    if (e.split == split) out.entries.push_back(e);
  return out;
}

Manifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir, const std::string& context) {
  static const std::set<std::string> kKeys{"id", "motion_path", "audio_path", "lyric_path", "fps", "split"};
  Manifest m{base_dir, {}};
  std::set<std::string> ids;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = fmt::format("{}:{}", context, line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(fmt::format("{}: invalid JSON ({})", where, e.what()));
    }
    if (!j.is_object()) throw DataError(where + ": expected a JSON object");
    for (const auto& [key, value] : j.items())
      if (!kKeys.count(key)) throw DataError(fmt::format("{}: unknown key '{}'", where, key));
    ClipManifestEntry e;
    try {
      e.id = j.at("id").get<std::string>();
      e.motion_path = j.at("motion_path").get<std::string>();
      e.audio_path = j.at("audio_path").get<std::string>();
      e.lyric_path = j.value("lyric_path", std::string());
      e.fps = j.value("fps", 60.0);
      e.split = j.value("split", std::string("train"));
    } catch (const nlohmann::json::exception& ex) {
      throw DataError(fmt::format("{}: {}", where, ex.what()));
    }
    if (e.id.empty()) throw DataError(where + ": empty id");
    if (!ids.insert(e.id).second) throw DataError(fmt::format("{}: duplicate id '{}'", where, e.id));
    if (!(e.fps > 0.0)) throw DataError(where + ": fps must be positive");
    if (e.split != "train" && e.split != "test")
      throw DataError(fmt::format("{}: split must be train or test, got '{}'", where, e.split));
    m.entries.push_back(std::move(e));
  }
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
  Manifest m = parse_manifest(read_text_file(path), path.parent_path(), path.string());
  for (const ClipManifestEntry& e : m.entries) {
    for (const std::string* p : {&e.motion_path, &e.audio_path, &e.lyric_path}) {
      if (p->empty() && p == &e.lyric_path) continue;
      if (!std::filesystem::exists(m.resolve(*p)))
        throw DataError(fmt::format("{}: clip '{}' references missing file {}", path.string(), e.id, *p));
    }
  }
  return m;
}

std::string serialize_manifest(const Manifest& manifest) {
  std::string out;
  for (const ClipManifestEntry& e : manifest.entries) {
    nlohmann::ordered_json j;
    j["id"] = e.id;
    j["motion_path"] = e.motion_path;
    j["audio_path"] = e.audio_path;
    j["lyric_path"] = e.lyric_path;
    j["fps"] = e.fps;
    j["split"] = e.split;
    out += j.dump() + "\n";
  }
  return out;
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  write_text_file(path, serialize_manifest(manifest));
}

std::pair<Manifest, Manifest> split_dataset(const Manifest& manifest, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw UsageError("test fraction must lie in (0, 1)");
  Manifest train{manifest.base_dir, {}}, test{manifest.base_dir, {}};
  for (ClipManifestEntry e : manifest.entries) {
    const double u = static_cast<double>(mix64(fnv1a64(e.id, seed)) >> 11) * 0x1.0p-53;
    if (u < test_fraction) {
      e.split = "test";
      test.entries.push_back(std::move(e));
    } else {
      e.split = "train";
      train.entries.push_back(std::move(e));
    }
  }
  return {std::move(train), std::move(test)};
}

LoadedClip load_clip(const Manifest& manifest, const ClipManifestEntry& entry, const EmbeddingProvider& embedder,
                     const AudioFeatureConfig& audio_cfg) {
  LoadedClip clip;
  clip.motion = load_motion(manifest.resolve(entry.motion_path));
  clip.motion.clip_id = entry.id;
  if (std::abs(clip.motion.fps - entry.fps) > 1e-3)
    throw DataError(fmt::format("clip '{}': motion file is at {} fps but the manifest says {}", entry.id,
                                clip.motion.fps, entry.fps));
  const Eigen::MatrixXd audio = load_audio_features(manifest.resolve(entry.audio_path), entry.fps, audio_cfg);
  if (!entry.lyric_path.empty()) clip.lyrics = load_lyric_timing(manifest.resolve(entry.lyric_path));
  const std::vector<EmbeddedWindow> embedded = embed_lyrics(clip.lyrics, embedder);
  try {
    clip.conditioning = align_conditioning(audio, embedded, clip.motion.frame_count(), entry.fps);
  } catch (const DataError& e) {
    throw DataError(fmt::format("clip '{}': {}", entry.id, e.what()));
  }
  return clip;
}

std::vector<TrainingExample> window_clips(const std::vector<TrainingExample>& clips, double fps, double window_seconds,
                                          double stride_seconds) {
  if (!(window_seconds > 0.0) || !(stride_seconds > 0.0)) throw UsageError("window and stride must be positive");
  const auto window = static_cast<Eigen::Index>(std::lround(window_seconds * fps));
  const auto stride = std::max<Eigen::Index>(1, std::lround(stride_seconds * fps));
  std::vector<const TrainingExample*> order;
  for (const TrainingExample& c : clips) order.push_back(&c);
  std::stable_sort(order.begin(), order.end(),
                   [](const TrainingExample* a, const TrainingExample* b) { return a->clip_id < b->clip_id; });
  std::vector<TrainingExample> out;
  for (const TrainingExample* c : order) {
    const Eigen::Index n = c->motion.rows();
    if (c->cond.size() > 0 && c->cond.rows() != n)
      throw DataError(fmt::format("clip '{}': conditioning has {} frames, motion has {}", c->clip_id, c->cond.rows(), n));
    if (n < window) {
      spdlog::warn("clip '{}' has {} frames, shorter than the {}-frame window; skipped", c->clip_id, n, window);
      continue;
    }
    for (Eigen::Index s = 0; s + window <= n; s += stride) {
      TrainingExample w;
      w.clip_id = c->clip_id;
      w.start_frame = static_cast<int>(c->start_frame + s);
      w.motion = c->motion.middleRows(s, window);
      if (c->cond.size() > 0) w.cond = c->cond.middleRows(s, window);
      out.push_back(std::move(w));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic generator

void SyntheticSpec::validate() const {
  if (n_clips < 1) throw UsageError("synthetic.n_clips must be >= 1");
  if (!(clip_seconds > 0.0)) throw UsageError("synthetic.clip_seconds must be positive");
  if (!(bpm_min >= 60.0 && bpm_max <= 180.0 && bpm_min <= bpm_max))
    throw UsageError("synthetic BPM range must lie within [60, 180]");
  if (motif_vocab.empty()) throw UsageError("synthetic.motif_vocab must not be empty");
  if (static_cast<int>(motif_vocab.size()) > synthetic_motif_capacity())
    throw UsageError(fmt::format("synthetic.motif_vocab holds at most {} tokens", synthetic_motif_capacity()));
  std::set<std::string> seen;
  for (const std::string& t : motif_vocab) {
    if (normalize_lyric_text(t).empty()) throw UsageError("motif tokens must be non-empty");
    if (!seen.insert(normalize_lyric_text(t)).second) throw UsageError("motif tokens must be distinct");
  }
  if (!(noise >= 0.0)) throw UsageError("synthetic.noise must be >= 0");
  if (!(fps > 0.0)) throw UsageError("synthetic.fps must be positive");
  if (sample_rate < 8000) throw UsageError("synthetic.sample_rate must be >= 8000");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw UsageError("synthetic.test_fraction must lie in (0, 1)");
}

namespace {

struct AxisTerm {
  int joint;
  int axis;  // 0 = x, 1 = y, 2 = z
  double amplitude;
};

struct Motif {
  std::vector<AxisTerm> terms;
  std::array<double, 3> levels;  // at beats 1..3 of the window; 0 at beats 0 and 4
};

const std::vector<Motif>& motif_bank() {
  static const std::vector<Motif> bank = {
      {{{kLeftShoulder, 2, 1.4}, {kRightShoulder, 2, -1.4}}, {1.0, 0.5, 1.0}},
      {{{kRightElbow, 1, -1.3}, {kRightWrist, 2, 0.8}}, {1.0, 0.0, 1.0}},
      {{{kLeftElbow, 1, 1.3}, {kLeftWrist, 2, -0.8}}, {0.3, 1.0, 0.3}},
      {{{kNeck, 1, 0.5}, {kHead, 1, 0.5}}, {1.0, -1.0, 1.0}},
      {{{kLeftCollar, 2, 0.4}, {kRightCollar, 2, -0.4}}, {1.0, 1.0, 0.0}},
      {{{kLeftHand, 0, 0.9}, {kRightHand, 0, -0.9}}, {1.0, -1.0, 0.5}},
  };
  return bank;
}

// Dance base: every term follows cos(pi t / P), so joint speeds vanish on the
// beats and nowhere else.
const std::vector<AxisTerm>& base_terms() {
  static const std::vector<AxisTerm> terms = {
      {kPelvis, 1, 0.12},     {kSpine1, 2, 0.08},    {kSpine2, 2, 0.08},    {kSpine3, 2, 0.06},
      {kLeftHip, 0, 0.35},    {kRightHip, 0, -0.35}, {kLeftKnee, 0, 0.25},  {kRightKnee, 0, -0.25},
      {kLeftAnkle, 0, -0.15}, {kRightAnkle, 0, 0.15}, {kLeftShoulder, 0, 0.2}, {kRightShoulder, 0, -0.2},
  };
  return terms;
}

Mat3 axis_rotation(int axis, double angle) { return axis_angle(Vec3::Unit(axis), angle); }

double eased(double u) { return 0.5 * (1.0 - std::cos(std::numbers::pi * u)); }

}  // namespace

int synthetic_motif_capacity() { return static_cast<int>(motif_bank().size()); }

std::vector<int> synthetic_motif_joints(int motif) {
  if (motif < 0 || motif >= synthetic_motif_capacity()) throw UsageError("motif index out of range");
  std::vector<int> joints;
  for (const AxisTerm& t : motif_bank()[motif].terms) joints.push_back(t.joint);
  return joints;
}

SyntheticClip generate_synthetic_clip(const SyntheticSpec& spec, int index) {
  spec.validate();
  std::mt19937_64 rng(fnv1a64(fmt::format("clip{}", index), spec.seed));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SyntheticClip clip;
  clip.id = fmt::format("syn{:04d}", index);
  clip.bpm = spec.bpm_min + (spec.bpm_max - spec.bpm_min) * unit(rng);
  const double period = 60.0 / clip.bpm;
  const int frames = static_cast<int>(std::lround(spec.clip_seconds * spec.fps));

  std::vector<double> gains(base_terms().size());
  for (double& g : gains) g = 0.7 + 0.6 * unit(rng);
  const double sway = 0.04 + 0.04 * unit(rng);
  const double bounce = 0.01 + 0.02 * unit(rng);

  // Lyric windows: 4 beats long starting on beat 1, 2-beat gaps.
  std::uniform_int_distribution<int> pick(0, static_cast<int>(spec.motif_vocab.size()) - 1);
  std::vector<int> window_start_beat;
  for (int b0 = 1; (b0 + 4) * period <= spec.clip_seconds + 1e-9; b0 += 6) {
    const int token = pick(rng);
    window_start_beat.push_back(b0);
    clip.window_tokens.push_back(token);
    clip.lyrics.push_back({b0 * period, (b0 + 4) * period, spec.motif_vocab[token]});
  }

  std::normal_distribution<double> jitter(0.0, spec.noise);
  Eigen::MatrixXd values(frames, kPoseDim);
  for (int i = 0; i < frames; ++i) {
    const double t = i / spec.fps + spec.motion_phase_beats * period;
    const double phase = std::cos(std::numbers::pi * t / period);
    std::array<Mat3, kJointCount> local;
    local.fill(Mat3::Identity());
    // Arms hang below the T-pose.
    local[kLeftShoulder] = axis_rotation(2, -1.1);
    local[kRightShoulder] = axis_rotation(2, 1.1);
    for (std::size_t k = 0; k < base_terms().size(); ++k) {
      const AxisTerm& term = base_terms()[k];
      local[term.joint] = local[term.joint] * axis_rotation(term.axis, gains[k] * term.amplitude * phase);
    }
    const double beat = t / period;
    for (std::size_t w = 0; w < window_start_beat.size(); ++w) {
      const double rel = beat - window_start_beat[w];
      if (rel <= 0.0 || rel >= 4.0) continue;
      const Motif& motif = motif_bank()[clip.window_tokens[w]];
      const std::array<double, 5> levels{0.0, motif.levels[0], motif.levels[1], motif.levels[2], 0.0};
      const int seg = static_cast<int>(std::floor(rel));
      const double level = levels[seg] + (levels[seg + 1] - levels[seg]) * eased(rel - seg);
      for (const AxisTerm& term : motif.terms)
        local[term.joint] = local[term.joint] * axis_rotation(term.axis, term.amplitude * level);
    }
    values(i, 0) = sway * phase;
    values(i, 1) = 0.95 + bounce * phase;
    values(i, 2) = 0.0;
    for (int j = 0; j < kJointCount; ++j) {
      Mat3 r = local[j];
      if (spec.noise > 0.0)
        r = r * axis_rotation(0, jitter(rng)) * axis_rotation(1, jitter(rng)) * axis_rotation(2, jitter(rng));
      const Rotation6D r6 = matrix_to_rot6d(r);
      for (int k = 0; k < kRotationDim; ++k) values(i, 3 + kRotationDim * j + k) = r6.r[k];
    }
  }
  clip.motion = MotionSequence::from_matrix(values, static_cast<float>(spec.fps), clip.id);

  // Click track: a short decaying burst on every beat. Beats within two
  // frames of either edge are left silent; no speed minimum can be detected
  // there.
  const auto n_samples = static_cast<std::size_t>(std::lround(spec.clip_seconds * spec.sample_rate));
  clip.audio.sample_rate = spec.sample_rate;
  clip.audio.samples.assign(n_samples, 0.0f);
  const auto burst = static_cast<std::size_t>(0.02 * spec.sample_rate);
  for (int k = 0; k * period < spec.clip_seconds; ++k) {
    const int frame = static_cast<int>(std::lround(k * period * spec.fps));
    if (frame < 2 || frame > frames - 3) continue;
    const auto at = static_cast<std::size_t>(std::lround(k * period * spec.sample_rate));
    for (std::size_t s = 0; s < burst && at + s < n_samples; ++s) {
      const double tau = s / static_cast<double>(spec.sample_rate);
      const double v = 0.8 * std::exp(-tau / 0.003) *
                       (std::sin(2.0 * std::numbers::pi * 1500.0 * tau) + 0.5 * std::sin(2.0 * std::numbers::pi * 220.0 * tau));
      clip.audio.samples[at + s] += static_cast<float>(v);
    }
    clip.beat_frames.push_back(frame);
  }
  return clip;
}

Manifest generate_synthetic_dataset(const SyntheticSpec& spec, const std::filesystem::path& out_dir, int threads) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "clips", ec);
  if (ec) throw DataError(fmt::format("cannot create {}: {}", (out_dir / "clips").string(), ec.message()));
  Manifest all{out_dir, std::vector<ClipManifestEntry>(spec.n_clips)};
  parallel_for(static_cast<std::size_t>(spec.n_clips), threads, [&](std::size_t i) {
    const SyntheticClip clip = generate_synthetic_clip(spec, static_cast<int>(i));
    ClipManifestEntry& e = all.entries[i];
    e.id = clip.id;
    e.motion_path = "clips/" + clip.id + ".msq";
    e.audio_path = "clips/" + clip.id + ".wav";
    e.lyric_path = "clips/" + clip.id + ".lyr";
    e.fps = spec.fps;
    save_motion(clip.motion, out_dir / e.motion_path);
    save_wav(clip.audio, out_dir / e.audio_path);
    write_text_file(out_dir / e.lyric_path, serialize_lyric_timing(clip.lyrics));
  });
  auto [train, test] = split_dataset(all, spec.test_fraction, spec.seed);
  std::set<std::string> test_ids;
  for (const ClipManifestEntry& e : test.entries) test_ids.insert(e.id);
  for (ClipManifestEntry& e : all.entries) e.split = test_ids.count(e.id) ? "test" : "train";
  save_manifest(all, out_dir / "manifest.jsonl");
  return all;
}

}  // namespace lm2d

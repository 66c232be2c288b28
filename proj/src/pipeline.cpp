#include "lm2d/pipeline.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <set>

#include "lm2d/checkpoint.hpp"
#include "lm2d/consistency.hpp"
#include "lm2d/error.hpp"
#include "lm2d/metrics.hpp"
#include "lm2d/sampling.hpp"
#include "lm2d/util.hpp"

namespace fs = std::filesystem;

namespace lm2d {

namespace {

using Clock = std::chrono::steady_clock;

std::string format_double(double v) { return fmt::format("{:.9g}", v); }

void prepare_out_dir(const fs::path& out_dir, const RunConfig& config) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir))
    throw DataError(fmt::format("cannot create output directory {}: {}", out_dir.string(), ec.message()));
  write_text_file(out_dir / "config.resolved", config.render());
}

RunLog start_log(const fs::path& out_dir, const RunConfig& config, const std::string& command) {
  prepare_out_dir(out_dir, config);
  RunLog log(out_dir);
  log.set("command", command);
  log.set("seed", std::to_string(config.seed()));
  log.set("config_digest", config.digest());
  for (const auto& [k, v] : RunConfig::defaults()) log.set("config." + k, config.get(k));
  return log;
}

// Digest over every file a manifest references, in entry order.
std::string manifest_content_digest(const Manifest& manifest) {
  std::string joined;
  for (const ClipManifestEntry& e : manifest.entries) {
    joined += e.id + ":" + file_digest(manifest.resolve(e.motion_path)) + ":" +
              file_digest(manifest.resolve(e.audio_path));
    if (!e.lyric_path.empty()) joined += ":" + file_digest(manifest.resolve(e.lyric_path));
    joined += "\n";
  }
  return sha256_hex(joined);
}

Manifest load_logged_manifest(RunLog& log, const fs::path& path) {
  Manifest m = load_manifest(path);
  log.input("manifest", path);
  log.set("input.clips.sha256", manifest_content_digest(m));
  log.set("input.clips.count", std::to_string(m.entries.size()));
  return m;
}

// Test split if the manifest has one, otherwise every clip.
Manifest evaluation_split(const Manifest& m) {
  Manifest test = m.filter_split("test");
  if (test.entries.empty()) {
    spdlog::warn("manifest has no test split; using all {} clips", m.entries.size());
    return m;
  }
  return test;
}

std::vector<TrainingExample> training_windows(const RunConfig& config, const Manifest& manifest,
                                              const EmbeddingProvider& embedder) {
  const Manifest train = manifest.filter_split("train");
  if (train.entries.empty()) throw DataError("manifest has no clips in the train split");
  const std::vector<LoadedClip> clips = load_clips(train, embedder, config.audio(), config.threads());
  const double fps = config.get_double("data.fps");
  std::vector<TrainingExample> full;
  for (const LoadedClip& c : clips) {
    if (std::abs(c.motion.fps - fps) > 1e-3)
      throw DataError(fmt::format("clip '{}' is at {} fps but data.fps is {}", c.motion.clip_id, c.motion.fps, fps));
    TrainingExample e;
    e.motion = c.motion.to_matrix();
    e.cond = network_conditioning(c.conditioning);
    e.clip_id = c.motion.clip_id;
    full.push_back(std::move(e));
  }
  std::vector<TrainingExample> windows = window_clips(full, fps, config.get_double("data.window_seconds"),
                                                      config.get_double("data.stride_seconds"));
  if (windows.empty()) throw DataError("no training windows: every clip is shorter than data.window_seconds");
  return windows;
}

std::vector<TrainingExample> draw_batch(const std::vector<TrainingExample>& pool, int batch, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::vector<TrainingExample> out;
  out.reserve(batch);
  for (int i = 0; i < batch; ++i) out.push_back(pool[pick(rng)]);
  return out;
}

std::map<std::string, std::string> schedule_fields(const DiffusionSchedule& s) {
  return {{"schedule.epsilon", format_double(s.epsilon)},
          {"schedule.T", format_double(s.T)},
          {"schedule.sigma_data", format_double(s.sigma_data)},
          {"schedule.rho", format_double(s.rho)},
          {"schedule.n_grid", std::to_string(s.n_grid)}};
}

DiffusionSchedule schedule_from_checkpoint(const Checkpoint& ckpt) {
  DiffusionSchedule s;
  s.epsilon = ckpt.header_double("schedule.epsilon");
  s.T = ckpt.header_double("schedule.T");
  s.sigma_data = ckpt.header_double("schedule.sigma_data");
  s.rho = ckpt.header_double("schedule.rho");
  s.n_grid = static_cast<int>(ckpt.header_double("schedule.n_grid"));
  s.validate();
  return s;
}

void require_size(const Checkpoint& ckpt, const Eigen::VectorXd& params, const fs::path& path) {
  if (ckpt.parameters.size() != params.size())
    throw DataError(fmt::format("{}: network has {} parameters, file holds {}", path.string(), params.size(),
                                ckpt.parameters.size()));
}

void write_report(const fs::path& path, const std::map<std::string, std::string>& entries) {
  std::string text;
  for (const auto& [k, v] : entries) text += k + "=" + v + "\n";
  write_text_file(path, text);
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / v.size())};
}

std::vector<int> beat_column_frames(const ConditioningTrack& track) {
  std::vector<int> beats;
  for (Eigen::Index i = 0; i < track.audio.rows(); ++i)
    if (track.audio(i, audio_col::kBeat) > 0.5) beats.push_back(static_cast<int>(i));
  return beats;
}

}  // namespace

RunLog::RunLog(fs::path out_dir) : out_dir_(std::move(out_dir)) {}

void RunLog::set(const std::string& key, const std::string& value) { entries_[key] = value; }

void RunLog::set(const std::string& key, double value) { entries_[key] = format_double(value); }

void RunLog::input(const std::string& name, const fs::path& path) {
  entries_["input." + name + ".path"] = path.string();
  entries_["input." + name + ".sha256"] = file_digest(path);
}

void RunLog::begin_phase(const std::string& name) {
  phase_ = name;
  phase_start_ = Clock::now();
}

void RunLog::end_phase() {
  const double s = std::chrono::duration<double>(Clock::now() - phase_start_).count();
  entries_["phase." + phase_ + ".seconds"] = fmt::format("{:.6f}", s);
  phase_.clear();
}

void RunLog::write() const { write_report(out_dir_ / "run.log", entries_); }

Eigen::MatrixXd network_conditioning(const ConditioningTrack& track) {
  Eigen::MatrixXd c = track.combined();
  c.middleCols(audio_col::kMfcc, kMfccCount) /= 50.0;
  c.rightCols(kLyricDim) *= std::sqrt(static_cast<double>(kLyricDim));
  return c;
}

std::unique_ptr<EmbeddingProvider> make_embedder(const RunConfig& config) {
  const std::string& provider = config.get("lyrics.provider");
  if (provider == "test") return std::make_unique<TestEmbedder>(config.get_u64("lyrics.seed"));
  if (provider == "precomputed") {
    const std::string& path = config.get("lyrics.path");
    if (path.empty()) throw UsageError("lyrics.provider=precomputed requires lyrics.path");
    return std::make_unique<PrecomputedEmbeddings>(PrecomputedEmbeddings::load(path));
  }
  throw UsageError(fmt::format("unknown lyrics.provider '{}' (expected test or precomputed)", provider));
}

std::vector<LoadedClip> load_clips(const Manifest& manifest, const EmbeddingProvider& embedder,
                                   const AudioFeatureConfig& audio_cfg, int threads) {
  std::vector<LoadedClip> clips(manifest.entries.size());
  parallel_for(clips.size(), threads,
               [&](std::size_t i) { clips[i] = load_clip(manifest, manifest.entries[i], embedder, audio_cfg); });
  return clips;
}

std::vector<EncoderPair> lyric_segments(const MotionSequence& motion, const std::vector<LyricWindow>& lyrics,
                                        const EmbeddingProvider& embedder) {
  const Eigen::MatrixXd frames = motion.to_matrix();
  std::vector<EncoderPair> out;
  for (const LyricWindow& w : lyrics) {
    int first = -1, count = 0;
    for (int i = 0; i < motion.frame_count(); ++i) {
      const double time = i / static_cast<double>(motion.fps);
      if (w.start <= time && time < w.end) {
        if (first < 0) first = i;
        ++count;
      }
    }
    if (count < 2) continue;
    EncoderPair p;
    p.motion = frames.middleRows(first, count);
    p.lyric = embedder.embed(w.text);
    p.clip_id = motion.clip_id;
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Eigen::VectorXd> distinct_lyrics(const std::vector<EncoderPair>& pairs) {
  std::vector<Eigen::VectorXd> out;
  for (const EncoderPair& p : pairs) {
    bool seen = false;
    for (const Eigen::VectorXd& v : out) seen = seen || v == p.lyric;
    if (!seen) out.push_back(p.lyric);
  }
  return out;
}

RetrievalStats evaluate_retrieval(const MotionEncoder& encoder, const std::vector<EncoderPair>& pairs,
                                  const std::vector<Eigen::VectorXd>& candidates) {
  if (candidates.size() < 2) throw DataError("retrieval needs at least two distinct lyric candidates");
  RetrievalStats s;
  s.pairs = pairs.size();
  s.candidates = candidates.size();
  if (pairs.empty()) return s;
  double matched = 0.0, mismatched = 0.0;
  std::size_t mismatched_n = 0, hits = 0;
  for (const EncoderPair& p : pairs) {
    const Eigen::VectorXd e = encoder.embed(p.motion);
    double own = semantic_matching(e, p.lyric);
    double best_other = -2.0;
    bool found = false;
    for (const Eigen::VectorXd& c : candidates) {
      if (c == p.lyric) {
        found = true;
        continue;
      }
      const double sim = semantic_matching(e, c);
      mismatched += sim;
      ++mismatched_n;
      best_other = std::max(best_other, sim);
    }
    if (!found) throw DataError(fmt::format("clip '{}': lyric embedding is not among the candidates", p.clip_id));
    matched += own;
    if (own > best_other) ++hits;
  }
  s.matched = matched / pairs.size();
  s.mismatched = mismatched_n ? mismatched / mismatched_n : 0.0;
  s.top1 = static_cast<double>(hits) / pairs.size();
  return s;
}

namespace pipeline {

void make_synthetic(const RunConfig& config, const fs::path& out_dir) {
  RunLog log = start_log(out_dir, config, "make-synthetic");
  log.begin_phase("generate");
  const Manifest m = generate_synthetic_dataset(config.synthetic(), out_dir, config.threads());
  log.end_phase();
  log.set("synthetic.clips", std::to_string(m.entries.size()));
  log.set("synthetic.test_clips", std::to_string(m.filter_split("test").entries.size()));
  log.set("output.manifest.sha256", file_digest(out_dir / "manifest.jsonl"));
  log.write();
  spdlog::info("wrote {} clips to {}", m.entries.size(), out_dir.string());
}

void extract_features(const RunConfig& config, const fs::path& manifest_path, const fs::path& out_dir) {
  RunLog log = start_log(out_dir, config, "extract-features");
  const Manifest m = load_logged_manifest(log, manifest_path);
  const AudioFeatureConfig audio_cfg = config.audio();
  std::error_code ec;
  fs::create_directories(out_dir / "features", ec);
  if (ec) throw DataError(fmt::format("cannot create {}: {}", (out_dir / "features").string(), ec.message()));

  log.begin_phase("extract");
  std::vector<AudioAnalysis> results(m.entries.size());
  parallel_for(m.entries.size(), config.threads(), [&](std::size_t i) {
    const ClipManifestEntry& e = m.entries[i];
    const Waveform wave = load_wav(m.resolve(e.audio_path));
    results[i] = extract_audio_features(wave.samples, wave.sample_rate, e.fps, audio_cfg);
    save_features({results[i].features, static_cast<float>(e.fps)}, out_dir / "features" / (e.id + ".aft"));
  });
  log.end_phase();

  Manifest out;
  out.base_dir = out_dir;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    ClipManifestEntry e = m.entries[i];
    e.motion_path = fs::absolute(m.resolve(e.motion_path)).lexically_normal().string();
    if (!e.lyric_path.empty()) e.lyric_path = fs::absolute(m.resolve(e.lyric_path)).lexically_normal().string();
    e.audio_path = "features/" + e.id + ".aft";
    log.set(fmt::format("clip.{}.tempo_bpm", e.id), results[i].tempo_bpm);
    log.set(fmt::format("clip.{}.beats", e.id), std::to_string(results[i].beat_frames.size()));
    out.entries.push_back(std::move(e));
  }
  save_manifest(out, out_dir / "manifest.jsonl");
  log.write();
  spdlog::info("extracted features for {} clips", out.entries.size());
}

void train(const RunConfig& config, const fs::path& manifest_path, const fs::path& out_dir) {
  RunLog log = start_log(out_dir, config, "train");
  const Manifest m = load_logged_manifest(log, manifest_path);
  const auto embedder = make_embedder(config);
  const DiffusionSchedule schedule = config.schedule();
  const LossWeights weights = config.loss_weights();
  const AdamConfig adam = config.adam();
  const int steps = static_cast<int>(config.get_int("train.steps"));
  const int batch = static_cast<int>(config.get_int("train.batch"));
  if (steps < 0 || batch < 1) throw UsageError("train.steps must be >= 0 and train.batch >= 1");

  log.begin_phase("load");
  const std::vector<TrainingExample> windows = training_windows(config, m, *embedder);
  log.end_phase();
  log.set("train.windows", std::to_string(windows.size()));

  DenoiserModel model(config.network(), schedule.sigma_data);
  model.network().initialize(config.seed());
  log.set("model.parameters", std::to_string(model.parameters().size()));
  AdamState optimizer;
  std::mt19937_64 rng(fnv1a64("train", config.seed()));

  std::ofstream tsv(out_dir / "loss.tsv");
  if (!tsv) throw DataError(fmt::format("cannot write {}", (out_dir / "loss.tsv").string()));
  tsv << "step\tloss\trec\tpos\tvel\n";
  log.begin_phase("train");
  const Clock::time_point start = Clock::now();
  TrainStepResult last;
  for (int step = 1; step <= steps; ++step) {
    const std::vector<TrainingExample> b = draw_batch(windows, batch, rng);
    last = train_step(model, b, schedule, weights, optimizer, adam, rng, &Skeleton::canonical(), config.threads());
    tsv << fmt::format("{}\t{:.8g}\t{:.8g}\t{:.8g}\t{:.8g}\n", step, last.loss, last.rec, last.pos, last.vel);
    if (step % 100 == 0 || step == steps)
      spdlog::info("train step {}/{} loss {:.5f} ({:.1f}s)", step, steps, last.loss,
                   std::chrono::duration<double>(Clock::now() - start).count());
  }
  log.end_phase();
  tsv.close();
  if (!tsv) throw DataError(fmt::format("failed writing {}", (out_dir / "loss.tsv").string()));

  Checkpoint ckpt;
  ckpt.kind = "diffusion";
  ckpt.network = model.config();
  ckpt.header = schedule_fields(schedule);
  ckpt.header["config_digest"] = config.digest();
  ckpt.header["seed"] = std::to_string(config.seed());
  ckpt.header["train.steps"] = std::to_string(steps);
  ckpt.parameters = model.parameters();
  save_checkpoint(ckpt, out_dir / "diffusion.ckpt");
  log.set("train.final_loss", last.loss);
  log.set("output.checkpoint.sha256", file_digest(out_dir / "diffusion.ckpt"));
  log.write();
}

void distill(const RunConfig& config, const fs::path& manifest_path, const fs::path& teacher_path,
             const fs::path& out_dir) {
  RunLog log = start_log(out_dir, config, "distill");
  const Manifest m = load_logged_manifest(log, manifest_path);
  log.input("teacher", teacher_path);
  const Checkpoint ckpt = load_checkpoint(teacher_path);
  if (ckpt.kind != "diffusion")
    throw UsageError(fmt::format("distill needs a diffusion teacher checkpoint, but {} is a {} checkpoint",
                                 teacher_path.string(), ckpt.kind));
  const DiffusionSchedule schedule = schedule_from_checkpoint(ckpt);
  DenoiserModel teacher(ckpt.network, schedule.sigma_data);
  require_size(ckpt, teacher.parameters(), teacher_path);
  teacher.parameters() = ckpt.parameters;

  DistillConfig dc;
  dc.mu = config.get_double("distill.mu");
  dc.adam = config.adam();
  dc.solver = parse_ode_method(config.get("distill.solver"));
  if (!(dc.mu >= 0.0 && dc.mu < 1.0)) throw UsageError("distill.mu must lie in [0, 1)");
  const int steps = static_cast<int>(config.get_int("distill.steps"));
  const int batch = static_cast<int>(config.get_int("distill.batch"));
  if (steps < 0 || batch < 1) throw UsageError("distill.steps must be >= 0 and distill.batch >= 1");

  const auto embedder = make_embedder(config);
  log.begin_phase("load");
  const std::vector<TrainingExample> windows = training_windows(config, m, *embedder);
  log.end_phase();
  for (const TrainingExample& w : windows)
    if (w.cond.cols() != ckpt.network.cond_dim)
      throw DataError(fmt::format("clip '{}': conditioning has {} columns, the teacher expects {}", w.clip_id,
                                  w.cond.cols(), ckpt.network.cond_dim));

  ConsistencyModel student(ckpt.network, schedule);
  DistillState state = DistillState::from_teacher(teacher, student, dc.mu);
  std::mt19937_64 rng(fnv1a64("distill", config.seed()));

  std::ofstream tsv(out_dir / "loss.tsv");
  if (!tsv) throw DataError(fmt::format("cannot write {}", (out_dir / "loss.tsv").string()));
  tsv << "step\tloss\n";
  log.begin_phase("distill");
  const Clock::time_point start = Clock::now();
  double loss = 0.0;
  for (int step = 1; step <= steps; ++step) {
    const std::vector<TrainingExample> b = draw_batch(windows, batch, rng);
    loss = cd_train_step(state, student, teacher, b, rng, dc, config.threads());
    tsv << fmt::format("{}\t{:.8g}\n", step, loss);
    if (step % 100 == 0 || step == steps)
      spdlog::info("distill step {}/{} loss {:.6f} ({:.1f}s)", step, steps, loss,
                   std::chrono::duration<double>(Clock::now() - start).count());
  }
  log.end_phase();
  tsv.close();

  Checkpoint out;
  out.kind = "consistency";
  out.network = ckpt.network;
  out.header = schedule_fields(schedule);
  out.header["config_digest"] = config.digest();
  out.header["seed"] = std::to_string(config.seed());
  out.header["distill.steps"] = std::to_string(steps);
  out.header["teacher_sha256"] = file_digest(teacher_path);
  out.parameters = state.target;
  save_checkpoint(out, out_dir / "consistency.ckpt");
  log.set("distill.final_loss", loss);
  log.set("output.checkpoint.sha256", file_digest(out_dir / "consistency.ckpt"));
  log.write();
}

void sample(const RunConfig& config, const fs::path& manifest_path, const fs::path& checkpoint_path, bool one_step,
            const fs::path& out_dir) {
  RunLog log = start_log(out_dir, config, "sample");
  const Manifest m = evaluation_split(load_logged_manifest(log, manifest_path));
  log.input("checkpoint", checkpoint_path);
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const std::string wanted = one_step ? "consistency" : "diffusion";
  if (ckpt.kind != wanted)
    throw UsageError(fmt::format("{} sampling requires a {} checkpoint, but {} is a {} checkpoint",
                                 one_step ? "one-step" : "multi-step", wanted, checkpoint_path.string(), ckpt.kind));
  const DiffusionSchedule schedule = schedule_from_checkpoint(ckpt);
  const SamplerConfig sampler = config.sampler();

  std::unique_ptr<DenoiserModel> diffusion;
  std::unique_ptr<ConsistencyModel> consistency;
  if (one_step) {
    consistency = std::make_unique<ConsistencyModel>(ckpt.network, schedule);
    require_size(ckpt, consistency->parameters(), checkpoint_path);
    consistency->parameters() = ckpt.parameters;
  } else {
    diffusion = std::make_unique<DenoiserModel>(ckpt.network, schedule.sigma_data);
    require_size(ckpt, diffusion->parameters(), checkpoint_path);
    diffusion->parameters() = ckpt.parameters;
  }

  const auto embedder = make_embedder(config);
  log.begin_phase("load");
  const std::vector<LoadedClip> clips = load_clips(m, *embedder, config.audio(), config.threads());
  log.end_phase();

  std::error_code ec;
  fs::create_directories(out_dir / "samples", ec);
  if (ec) throw DataError(fmt::format("cannot create {}: {}", (out_dir / "samples").string(), ec.message()));

  log.set("sample.mode", one_step ? "one-step" : "multi-step");
  if (!one_step) {
    log.set("sample.steps", std::to_string(sampler.n_steps));
    log.set("sample.method", to_string(sampler.method));
  }
  log.begin_phase("sample");
  double total_seconds = 0.0;
  std::uint64_t total_evals = 0;
  for (const LoadedClip& clip : clips) {
    const std::string& id = clip.motion.clip_id;
    const Eigen::MatrixXd cond = network_conditioning(clip.conditioning);
    if (cond.cols() != ckpt.network.cond_dim)
      throw DataError(fmt::format("clip '{}': conditioning has {} columns, the checkpoint expects {}", id, cond.cols(),
                                  ckpt.network.cond_dim));
    const std::uint64_t seed = fnv1a64(id, config.seed());
    const Clock::time_point t0 = Clock::now();
    MotionSequence out;
    std::uint64_t evals = 0;
    if (one_step) {
      consistency->reset_evaluations();
      out = sample_onestep(*consistency, cond, seed, clip.motion.fps, id);
      evals = consistency->evaluations();
    } else {
      diffusion->reset_evaluations();
      SamplerConfig sc = sampler;
      sc.seed = seed;
      out = sample_multistep(*diffusion, cond, schedule, sc, clip.motion.fps, id);
      evals = diffusion->evaluations();
    }
    const double seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    save_motion(out, out_dir / "samples" / (id + ".msq"));
    log.set(fmt::format("clip.{}.network_evaluations", id), std::to_string(evals));
    log.set(fmt::format("clip.{}.seconds", id), fmt::format("{:.6f}", seconds));
    total_seconds += seconds;
    total_evals += evals;
    spdlog::info("sampled {} ({} frames, {} evaluations, {:.3f}s)", id, out.frame_count(), evals, seconds);
  }
  log.end_phase();
  log.set("sample.clips", std::to_string(clips.size()));
  if (!clips.empty()) {
    log.set("sample.seconds_per_clip", total_seconds / clips.size());
    log.set("sample.network_evaluations_per_clip", static_cast<double>(total_evals) / clips.size());
  }
  log.write();
}

void train_encoder(const RunConfig& config, const fs::path& manifest_path, const fs::path& out_dir) {
  RunLog log = start_log(out_dir, config, "encoder-train");
  const Manifest m = load_logged_manifest(log, manifest_path);
  const auto embedder = make_embedder(config);

  log.begin_phase("load");
  const std::vector<LoadedClip> clips = load_clips(m, *embedder, config.audio(), config.threads());
  log.end_phase();
  std::vector<EncoderPair> train_pairs, test_pairs;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    std::vector<EncoderPair> p = lyric_segments(clips[i].motion, clips[i].lyrics, *embedder);
    auto& dst = m.entries[i].split == "test" ? test_pairs : train_pairs;
    dst.insert(dst.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
  }
  log.set("encoder.train_pairs", std::to_string(train_pairs.size()));
  log.set("encoder.test_pairs", std::to_string(test_pairs.size()));

  std::ofstream tsv(out_dir / "loss.tsv");
  if (!tsv) throw DataError(fmt::format("cannot write {}", (out_dir / "loss.tsv").string()));
  tsv << "step\tloss\n";
  const EncoderTrainConfig tc = config.encoder_training();
  log.begin_phase("train");
  const MotionEncoder enc = train_motion_encoder(train_pairs, config.encoder(), tc, [&](int step, double loss) {
    tsv << fmt::format("{}\t{:.8g}\n", step, loss);
    if (step % 50 == 0 || step == tc.steps) spdlog::info("encoder step {}/{} loss {:.5f}", step, tc.steps, loss);
  });
  log.end_phase();
  tsv.close();
  enc.save(out_dir / "encoder.ckpt", {{"config_digest", config.digest()}, {"seed", std::to_string(config.seed())}});

  if (test_pairs.empty()) {
    spdlog::warn("manifest has no test split; held-out retrieval not measured");
  } else {
    std::vector<EncoderPair> all = train_pairs;
    all.insert(all.end(), test_pairs.begin(), test_pairs.end());
    const RetrievalStats s = evaluate_retrieval(enc, test_pairs, distinct_lyrics(all));
    log.set("encoder.heldout.matched", s.matched);
    log.set("encoder.heldout.mismatched", s.mismatched);
    log.set("encoder.heldout.margin", s.matched - s.mismatched);
    log.set("encoder.heldout.top1", s.top1);
    log.set("encoder.heldout.candidates", std::to_string(s.candidates));
    spdlog::info("held-out: matched {:.3f} mismatched {:.3f} top-1 {:.3f}", s.matched, s.mismatched, s.top1);
  }
  log.set("output.checkpoint.sha256", file_digest(out_dir / "encoder.ckpt"));
  log.write();
}

void evaluate(const RunConfig& config, const fs::path& manifest_path, const fs::path& samples_dir,
              const fs::path& encoder_path, const fs::path& out_dir) {
  RunLog log = start_log(out_dir, config, "evaluate");
  const Manifest m = evaluation_split(load_logged_manifest(log, manifest_path));
  if (m.entries.size() < 2) throw DataError("evaluation needs at least two clips");
  std::optional<MotionEncoder> encoder;
  if (!encoder_path.empty()) {
    log.input("encoder", encoder_path);
    encoder = MotionEncoder::load(encoder_path);
  }
  const auto embedder = make_embedder(config);
  const Skeleton& skel = Skeleton::canonical();
  const double sigma = config.get_double("metrics.ba_sigma");

  log.begin_phase("load");
  const std::vector<LoadedClip> clips = load_clips(m, *embedder, config.audio(), config.threads());
  std::vector<MotionSequence> generated(clips.size());
  parallel_for(clips.size(), config.threads(), [&](std::size_t i) {
    const std::string& id = clips[i].motion.clip_id;
    const fs::path p = samples_dir / (id + ".msq");
    if (!fs::exists(p)) throw DataError(fmt::format("no generated motion for clip '{}' (expected {})", id, p.string()));
    generated[i] = load_motion(p);
    generated[i].clip_id = id;
  });
  log.end_phase();

  log.begin_phase("score");
  const auto n = static_cast<Eigen::Index>(clips.size());
  Eigen::MatrixXd real_k(n, kKineticDim), gen_k(n, kKineticDim), real_g(n, kGeometricDim), gen_g(n, kGeometricDim);
  std::vector<double> ba(clips.size()), ba_real(clips.size()), sm(clips.size());
  std::vector<std::string> ids(clips.size());
  parallel_for(clips.size(), config.threads(), [&](std::size_t i) {
    const auto r = static_cast<Eigen::Index>(i);
    ids[i] = clips[i].motion.clip_id;
    real_k.row(r) = kinetic_features(clips[i].motion, skel).transpose();
    gen_k.row(r) = kinetic_features(generated[i], skel).transpose();
    real_g.row(r) = geometric_features(clips[i].motion, skel).transpose();
    gen_g.row(r) = geometric_features(generated[i], skel).transpose();
    const std::vector<int> beats = beat_column_frames(clips[i].conditioning);
    if (beats.empty()) throw DataError(fmt::format("clip '{}': no music beats detected", ids[i]));
    ba[i] = beat_alignment(generated[i], skel, beats, sigma);
    ba_real[i] = beat_alignment(clips[i].motion, skel, beats, sigma);
    if (encoder) {
      const std::vector<EncoderPair> segs = lyric_segments(generated[i], clips[i].lyrics, *embedder);
      if (segs.empty()) {
        spdlog::warn("clip '{}' has no lyric windows; semantic matching is 0", ids[i]);
        sm[i] = 0.0;
      } else {
        double s = 0.0;
        for (const EncoderPair& p : segs) s += semantic_matching(encoder->embed(p.motion), p.lyric);
        sm[i] = s / segs.size();
      }
    }
  });

  std::map<std::string, std::string> report;
  report["FID_k"] = format_double(fid(real_k, gen_k, ids, ids));
  report["FID_g"] = format_double(fid(real_g, gen_g, ids, ids));
  report["Div_k"] = format_double(diversity(gen_k, config.seed()));
  report["Div_g"] = format_double(diversity(gen_g, config.seed()));
  report["reference.Div_k"] = format_double(diversity(real_k, config.seed()));
  report["reference.Div_g"] = format_double(diversity(real_g, config.seed()));
  const auto [ba_mean, ba_std] = mean_std(ba);
  const auto [bar_mean, bar_std] = mean_std(ba_real);
  report["BA_mean"] = format_double(ba_mean);
  report["BA_std"] = format_double(ba_std);
  report["reference.BA_mean"] = format_double(bar_mean);
  report["reference.BA_std"] = format_double(bar_std);
  if (encoder) {
    const auto [sm_mean, sm_std] = mean_std(sm);
    report["SM_mean"] = format_double(sm_mean);
    report["SM_std"] = format_double(sm_std);
  } else {
    report["SM_mean"] = "na";
    report["SM_std"] = "na";
  }
  report["clips_real"] = std::to_string(clips.size());
  report["clips_generated"] = std::to_string(generated.size());
  report["config_digest"] = config.digest();
  log.end_phase();

  write_report(out_dir / "report.txt", report);
  for (const auto& [k, v] : report) log.set("report." + k, v);
  log.write();
  spdlog::info("FID_k {} FID_g {} BA {} SM {}", report["FID_k"], report["FID_g"], report["BA_mean"], report["SM_mean"]);
}

}  // namespace pipeline

}  // namespace lm2d

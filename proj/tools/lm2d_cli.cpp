// Command-line front end. Links only the C API.

#include <CLI11.hpp>

#include <cstdio>
#include <string>
#include <vector>

#include "lm2d/lm2d.h"

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::string seed;
  std::string threads;
  std::string out;
  std::string log_level = "info";
};

struct Args {
  std::string manifest;
  std::string teacher;
  std::string checkpoint;
  std::string samples;
  std::string encoder;
  int steps = -1;
  bool one_step = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "key=value configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.sets, "override one configuration key (key=value), repeatable");
  cmd->add_option("--seed", c.seed, "random seed");
  cmd->add_option("--threads", c.threads, "worker threads for per-clip work");
  cmd->add_option("--out", c.out, "output directory")->required();
  cmd->add_option("--log-level", c.log_level, "trace, debug, info, warn, error or off");
}

int report(lm2d_status s) {
  if (s != LM2D_OK) std::fprintf(stderr, "error: %s\n", lm2d_last_error());
  return static_cast<int>(s);
}

class ConfigHandle {
 public:
  ~ConfigHandle() { lm2d_config_destroy(cfg_); }
  lm2d_status init(const Common& c, const std::string& steps_key, int steps) {
    lm2d_status s = lm2d_config_create(&cfg_);
    if (s != LM2D_OK) return s;
    if (!c.config_path.empty() && (s = lm2d_config_load_file(cfg_, c.config_path.c_str())) != LM2D_OK) return s;
    for (const std::string& kv : c.sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) {
        std::fprintf(stderr, "error: --set expects key=value, got '%s'\n", kv.c_str());
        return LM2D_ERR_USAGE;
      }
      if ((s = lm2d_config_set(cfg_, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str())) != LM2D_OK) return s;
    }
    if (!c.seed.empty() && (s = lm2d_config_set(cfg_, "seed", c.seed.c_str())) != LM2D_OK) return s;
    if (!c.threads.empty() && (s = lm2d_config_set(cfg_, "threads", c.threads.c_str())) != LM2D_OK) return s;
    if (steps >= 0 && !steps_key.empty() &&
        (s = lm2d_config_set(cfg_, steps_key.c_str(), std::to_string(steps).c_str())) != LM2D_OK)
      return s;
    return LM2D_OK;
  }
  const lm2d_config* get() const { return cfg_; }

 private:
  lm2d_config* cfg_ = nullptr;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Music- and lyric-conditioned motion diffusion: data, training, distillation, sampling, evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", lm2d_version());

  Common common;
  Args args;

  auto* synth = app.add_subcommand("make-synthetic", "generate the synthetic beat/motif dataset");
  add_common(synth, common);

  auto* feats = app.add_subcommand("extract-features", "precompute audio features for every clip");
  add_common(feats, common);
  feats->add_option("--manifest", args.manifest, "clip manifest (JSON lines)")->required()->check(CLI::ExistingFile);

  auto* train = app.add_subcommand("train", "train the diffusion denoiser");
  add_common(train, common);
  train->add_option("--manifest", args.manifest, "clip manifest (JSON lines)")->required()->check(CLI::ExistingFile);
  train->add_option("--steps", args.steps, "optimizer steps (train.steps)")->check(CLI::NonNegativeNumber);

  auto* distill = app.add_subcommand("distill", "distill a diffusion checkpoint into a consistency model");
  add_common(distill, common);
  distill->add_option("--manifest", args.manifest, "clip manifest (JSON lines)")->required()->check(CLI::ExistingFile);
  distill->add_option("--teacher", args.teacher, "diffusion checkpoint")->required()->check(CLI::ExistingFile);
  distill->add_option("--steps", args.steps, "optimizer steps (distill.steps)")->check(CLI::NonNegativeNumber);

  auto* sample = app.add_subcommand("sample", "generate motion for the test clips");
  add_common(sample, common);
  sample->add_option("--manifest", args.manifest, "clip manifest (JSON lines)")->required()->check(CLI::ExistingFile);
  sample->add_option("--checkpoint", args.checkpoint, "diffusion or consistency checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  auto* steps_opt = sample->add_option("--steps", args.steps, "PF-ODE steps for multi-step sampling (sample.steps)")
                        ->check(CLI::PositiveNumber);
  sample->add_flag("--one-step", args.one_step, "one network evaluation with a consistency checkpoint")
      ->excludes(steps_opt);

  auto* eval = app.add_subcommand("evaluate", "score generated motion against the test clips");
  add_common(eval, common);
  eval->add_option("--manifest", args.manifest, "clip manifest (JSON lines)")->required()->check(CLI::ExistingFile);
  eval->add_option("--samples", args.samples, "directory holding <clip id>.msq files")
      ->required()
      ->check(CLI::ExistingDirectory);
  eval->add_option("--encoder", args.encoder, "motion encoder checkpoint for semantic matching")
      ->check(CLI::ExistingFile);

  auto* enc = app.add_subcommand("encoder-train", "train the motion encoder used for semantic matching");
  add_common(enc, common);
  enc->add_option("--manifest", args.manifest, "clip manifest (JSON lines)")->required()->check(CLI::ExistingFile);
  enc->add_option("--steps", args.steps, "optimizer steps (encoder.steps)")->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : LM2D_ERR_USAGE;
  }

  if (lm2d_set_log_level(common.log_level.c_str()) != LM2D_OK) return report(LM2D_ERR_USAGE);

  std::string steps_key;
  if (train->parsed()) steps_key = "train.steps";
  if (distill->parsed()) steps_key = "distill.steps";
  if (sample->parsed()) steps_key = "sample.steps";
  if (enc->parsed()) steps_key = "encoder.steps";

  ConfigHandle cfg;
  if (const lm2d_status s = cfg.init(common, steps_key, args.steps); s != LM2D_OK) return report(s);
  const char* out = common.out.c_str();

  if (synth->parsed()) return report(lm2d_make_synthetic(cfg.get(), out));
  if (feats->parsed()) return report(lm2d_extract_features(cfg.get(), args.manifest.c_str(), out));
  if (train->parsed()) return report(lm2d_train(cfg.get(), args.manifest.c_str(), out));
  if (distill->parsed()) return report(lm2d_distill(cfg.get(), args.manifest.c_str(), args.teacher.c_str(), out));
  if (sample->parsed())
    return report(lm2d_sample(cfg.get(), args.manifest.c_str(), args.checkpoint.c_str(), args.one_step ? 1 : 0, out));
  if (eval->parsed())
    return report(lm2d_evaluate(cfg.get(), args.manifest.c_str(), args.samples.c_str(),
                                args.encoder.empty() ? nullptr : args.encoder.c_str(), out));
  if (enc->parsed()) return report(lm2d_train_encoder(cfg.get(), args.manifest.c_str(), out));
  return LM2D_ERR_USAGE;
}

#include "lm2d/config.hpp"

#include <fmt/format.h>

#include <cmath>
#include <sstream>

#include "lm2d/error.hpp"
#include "lm2d/util.hpp"

namespace lm2d {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

const std::map<std::string, std::string>& RunConfig::defaults() {
  static const std::map<std::string, std::string> d = {
      {"seed", "0"},
      {"threads", "1"},
      {"schedule.epsilon", "0.002"},
      {"schedule.T", "80"},
      {"schedule.sigma_data", "0.5"},
      {"schedule.rho", "7"},
      {"schedule.n_grid", "18"},
      {"model.width", "256"},
      {"model.blocks", "4"},
      {"model.heads", "4"},
      {"model.ff_mult", "4"},
      {"model.attention", "true"},
      {"model.positional", "true"},
      {"loss.lambda_pos", "1"},
      {"loss.lambda_vel", "1"},
      {"optim.lr", "0.0003"},
      {"optim.beta1", "0.9"},
      {"optim.beta2", "0.999"},
      {"optim.eps", "1e-8"},
      {"optim.clip_norm", "1"},
      {"train.steps", "3000"},
      {"train.batch", "8"},
      {"distill.steps", "2000"},
      {"distill.batch", "8"},
      {"distill.mu", "0.95"},
      {"distill.solver", "euler"},
      {"sample.steps", "32"},
      {"sample.method", "heun"},
      {"data.fps", "60"},
      {"data.window_seconds", "6"},
      {"data.stride_seconds", "1"},
      {"audio.window", "1024"},
      {"audio.mel_bands", "40"},
      {"metrics.ba_sigma", "3"},
      {"encoder.hidden", "128"},
      {"encoder.kernel", "5"},
      {"encoder.steps", "300"},
      {"encoder.batch", "32"},
      {"encoder.temperature", "0.07"},
      {"encoder.lr", "0.001"},
      {"lyrics.provider", "test"},
      {"lyrics.path", ""},
      {"lyrics.seed", "0"},
      {"synthetic.n_clips", "100"},
      {"synthetic.clip_seconds", "6"},
      {"synthetic.bpm_min", "90"},
      {"synthetic.bpm_max", "150"},
      {"synthetic.vocab", "raise,wave,clap,turn"},
      {"synthetic.noise", "0.002"},
      {"synthetic.sample_rate", "22050"},
      {"synthetic.test_fraction", "0.2"},
  };
  return d;
}

RunConfig::RunConfig() : values_(defaults()) {}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!defaults().count(key)) throw UsageError(fmt::format("unknown configuration key '{}'", key));
  values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw UsageError(fmt::format("unknown configuration key '{}'", key));
  return it->second;
}

void RunConfig::merge_text(const std::string& text, const std::string& context) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw UsageError(fmt::format("{}:{}: expected key=value", context, line_no));
    const std::string key = trim(t.substr(0, eq));
    if (!defaults().count(key))
      throw UsageError(fmt::format("{}:{}: unknown configuration key '{}'", context, line_no, key));
    values_[key] = trim(t.substr(eq + 1));
  }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
  merge_text(text, path.string());
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size() && std::isfinite(d)) return d;
  } catch (const std::exception&) {
  }
  throw UsageError(fmt::format("configuration key '{}' expects a number, got '{}'", key, v));
}

long long RunConfig::get_int(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const long long i = std::stoll(v, &used);
    if (used == v.size()) return i;
  } catch (const std::exception&) {
  }
  throw UsageError(fmt::format("configuration key '{}' expects an integer, got '{}'", key, v));
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] != '-') {
      const unsigned long long i = std::stoull(v, &used);
      if (used == v.size()) return i;
    }
  } catch (const std::exception&) {
  }
  throw UsageError(fmt::format("configuration key '{}' expects a nonnegative integer, got '{}'", key, v));
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw UsageError(fmt::format("configuration key '{}' expects true or false, got '{}'", key, v));
}

std::vector<std::string> RunConfig::get_list(const std::string& key) const {
  std::vector<std::string> out;
  std::istringstream in(get(key));
  std::string item;
  while (std::getline(in, item, ','))
    if (!trim(item).empty()) out.push_back(trim(item));
  return out;
}

std::string RunConfig::render() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

std::string RunConfig::digest() const { return sha256_hex(render()); }

int RunConfig::window_frames() const {
  const double frames = get_double("data.window_seconds") * get_double("data.fps");
  if (!(frames >= 2.0)) throw UsageError("data.window_seconds * data.fps must give at least 2 frames");
  return static_cast<int>(std::lround(frames));
}

DiffusionSchedule RunConfig::schedule() const {
  DiffusionSchedule s;
  s.epsilon = get_double("schedule.epsilon");
  s.T = get_double("schedule.T");
  s.sigma_data = get_double("schedule.sigma_data");
  s.rho = get_double("schedule.rho");
  s.n_grid = static_cast<int>(get_int("schedule.n_grid"));
  s.validate();
  return s;
}

NetworkConfig RunConfig::network() const {
  NetworkConfig c;
  c.feature_dim = kPoseDim;
  c.cond_dim = kAudioFeatureDim + kLyricDim;
  c.width = static_cast<int>(get_int("model.width"));
  c.blocks = static_cast<int>(get_int("model.blocks"));
  c.heads = static_cast<int>(get_int("model.heads"));
  c.ff_mult = static_cast<int>(get_int("model.ff_mult"));
  c.attention = get_bool("model.attention");
  c.positional = get_bool("model.positional");
  c.window_frames = window_frames();
  c.validate();
  return c;
}

LossWeights RunConfig::loss_weights() const {
  LossWeights w{get_double("loss.lambda_pos"), get_double("loss.lambda_vel")};
  if (w.lambda_pos < 0.0 || w.lambda_vel < 0.0) throw UsageError("loss weights must be nonnegative");
  return w;
}

AdamConfig RunConfig::adam() const {
  AdamConfig a;
  a.lr = get_double("optim.lr");
  a.beta1 = get_double("optim.beta1");
  a.beta2 = get_double("optim.beta2");
  a.eps = get_double("optim.eps");
  a.clip_norm = get_double("optim.clip_norm");
  if (!(a.lr > 0.0)) throw UsageError("optim.lr must be positive");
  if (!(a.beta1 >= 0.0 && a.beta1 < 1.0 && a.beta2 >= 0.0 && a.beta2 < 1.0))
    throw UsageError("optim.beta1 and optim.beta2 must lie in [0, 1)");
  return a;
}

SamplerConfig RunConfig::sampler() const {
  SamplerConfig s;
  s.n_steps = static_cast<int>(get_int("sample.steps"));
  if (s.n_steps < 1) throw UsageError("sample.steps must be >= 1");
  s.method = parse_ode_method(get("sample.method"));
  s.seed = seed();
  return s;
}

SyntheticSpec RunConfig::synthetic() const {
  SyntheticSpec s;
  s.n_clips = static_cast<int>(get_int("synthetic.n_clips"));
  s.clip_seconds = get_double("synthetic.clip_seconds");
  s.bpm_min = get_double("synthetic.bpm_min");
  s.bpm_max = get_double("synthetic.bpm_max");
  s.motif_vocab = get_list("synthetic.vocab");
  s.noise = get_double("synthetic.noise");
  s.seed = seed();
  s.fps = get_double("data.fps");
  s.sample_rate = static_cast<int>(get_int("synthetic.sample_rate"));
  s.test_fraction = get_double("synthetic.test_fraction");
  s.validate();
  return s;
}

EncoderConfig RunConfig::encoder() const {
  EncoderConfig c;
  c.hidden = static_cast<int>(get_int("encoder.hidden"));
  c.kernel = static_cast<int>(get_int("encoder.kernel"));
  c.embed_dim = kLyricDim;
  c.validate();
  return c;
}

EncoderTrainConfig RunConfig::encoder_training() const {
  EncoderTrainConfig t;
  t.steps = static_cast<int>(get_int("encoder.steps"));
  t.batch = static_cast<int>(get_int("encoder.batch"));
  t.temperature = get_double("encoder.temperature");
  t.adam.lr = get_double("encoder.lr");
  t.seed = seed();
  t.threads = threads();
  if (t.steps < 0) throw UsageError("encoder.steps must be >= 0");
  return t;
}

AudioFeatureConfig RunConfig::audio() const {
  AudioFeatureConfig a;
  a.window = static_cast<int>(get_int("audio.window"));
  a.mel_bands = static_cast<int>(get_int("audio.mel_bands"));
  if (a.window < 16) throw UsageError("audio.window must be >= 16");
  if (a.mel_bands < kMfccCount) throw UsageError("audio.mel_bands must be >= 20");
  return a;
}

}  // namespace lm2d

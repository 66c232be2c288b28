#include "lm2d/lyrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "lm2d/audio.hpp"
#include "lm2d/error.hpp"
#include "lm2d/util.hpp"

namespace lm2d {

std::string normalize_lyric_text(const std::string& text) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : text) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
  }
  return out;
}

std::uint64_t lyric_text_hash(const std::string& text) { return fnv1a64(normalize_lyric_text(text)); }

std::vector<LyricWindow> parse_lyric_timing(const std::string& content, const std::string& context) {
  std::vector<LyricWindow> out;
  std::istringstream in(content);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos)
      throw DataError(fmt::format("{}:{}: expected start<TAB>end<TAB>text", context, line_no));
    LyricWindow w;
    try {
      std::size_t used = 0;
      w.start = std::stod(line.substr(0, t1), &used);
      if (used != t1) throw std::invalid_argument("trailing");
      const std::string end_text = line.substr(t1 + 1, t2 - t1 - 1);
      w.end = std::stod(end_text, &used);
      if (used != end_text.size()) throw std::invalid_argument("trailing");
    } catch (const std::logic_error&) {
      throw DataError(fmt::format("{}:{}: malformed time value", context, line_no));
    }
    w.text = line.substr(t2 + 1);
    if (!std::isfinite(w.start) || !std::isfinite(w.end) || !(w.start < w.end))
      throw DataError(fmt::format("{}:{}: window requires start < end", context, line_no));
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<LyricWindow> load_lyric_timing(const std::filesystem::path& path) {
  return parse_lyric_timing(read_text_file(path), path.string());
}

std::string serialize_lyric_timing(const std::vector<LyricWindow>& windows) {
  std::string out;
  for (const LyricWindow& w : windows) {
    if (w.text.find_first_of("\t\n") != std::string::npos)
      throw UsageError("lyric text may not contain tabs or newlines");
    out += fmt::format("{}\t{}\t{}\n", w.start, w.end, w.text);
  }
  return out;
}

Eigen::VectorXd TestEmbedder::embed(const std::string& text) const {
  std::mt19937_64 rng(fnv1a64(normalize_lyric_text(text), seed_));
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(kLyricDim);
  for (int i = 0; i < kLyricDim; ++i) v[i] = normal(rng);
  return v / v.norm();
}

void PrecomputedEmbeddings::insert(const std::string& text, const Eigen::VectorXd& v) {
  if (v.size() != kLyricDim) throw UsageError(fmt::format("embedding has {} values, expected {}", v.size(), kLyricDim));
  table_[lyric_text_hash(text)] = v.cast<float>();
}

PrecomputedEmbeddings PrecomputedEmbeddings::decode(std::span<const std::uint8_t> bytes, const std::string& context) {
  ByteReader r(bytes, context);
  if (r.raw(4) != "LYE1") r.fail("bad magic, expected LYE1");
  const std::uint32_t count = r.u32();
  PrecomputedEmbeddings out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint64_t hash = r.u64();
    Eigen::VectorXf v(kLyricDim);
    r.f32s(std::span<float>(v.data(), kLyricDim));
    if (!v.allFinite()) r.fail(fmt::format("entry {} has non-finite values", i));
    out.table_[hash] = std::move(v);
  }
  if (r.remaining() != 0) r.fail(fmt::format("{} trailing bytes", r.remaining()));
  return out;
}

PrecomputedEmbeddings PrecomputedEmbeddings::load(const std::filesystem::path& path) {
  return decode(read_file_bytes(path), path.string());
}

std::vector<std::uint8_t> PrecomputedEmbeddings::encode() const {
  ByteWriter w;
  w.raw("LYE1");
  w.u32(static_cast<std::uint32_t>(table_.size()));
  for (const auto& [hash, v] : table_) {
    w.u64(hash);
    w.f32s(std::span<const float>(v.data(), kLyricDim));
  }
  return w.bytes();
}

void PrecomputedEmbeddings::save(const std::filesystem::path& path) const { write_file_bytes(path, encode()); }

Eigen::VectorXd PrecomputedEmbeddings::embed(const std::string& text) const {
  const auto it = table_.find(lyric_text_hash(text));
  if (it == table_.end()) throw DataError(fmt::format("missing precomputed embedding for lyric text \"{}\"", text));
  return it->second.cast<double>();
}

std::vector<EmbeddedWindow> embed_lyrics(const std::vector<LyricWindow>& windows, const EmbeddingProvider& provider) {
  std::vector<const LyricWindow*> order;
  for (const LyricWindow& w : windows) {
    if (!(w.start < w.end)) throw DataError(fmt::format("lyric window \"{}\" has start >= end", w.text));
    order.push_back(&w);
  }
  std::sort(order.begin(), order.end(), [](const LyricWindow* a, const LyricWindow* b) { return a->start < b->start; });
  for (std::size_t i = 1; i < order.size(); ++i)
    if (order[i]->start < order[i - 1]->end)
      throw DataError(fmt::format("lyric windows overlap: \"{}\" [{}, {}) and \"{}\" [{}, {})", order[i - 1]->text,
                                  order[i - 1]->start, order[i - 1]->end, order[i]->text, order[i]->start,
                                  order[i]->end));
  std::vector<EmbeddedWindow> out;
  for (const LyricWindow* w : order) {
    Eigen::VectorXd v = provider.embed(w->text);
    if (v.size() != kLyricDim || !v.allFinite())
      throw DataError(fmt::format("embedding for \"{}\" is not a finite {}-vector", w->text, kLyricDim));
    out.push_back({w->start, w->end, std::move(v)});
  }
  return out;
}

Eigen::MatrixXd ConditioningTrack::combined() const {
  if (audio.rows() != lyric.rows()) throw DataError("conditioning track: audio and lyric lengths differ");
  Eigen::MatrixXd out(audio.rows(), audio.cols() + lyric.cols());
  out << audio, lyric;
  return out;
}

ConditioningTrack align_conditioning(const Eigen::MatrixXd& audio, const std::vector<EmbeddedWindow>& windows,
                                     int n_frames, double fps) {
  if (n_frames < 1) throw UsageError("conditioning needs at least one frame");
  if (!(fps > 0.0)) throw UsageError("fps must be positive");
  if (audio.cols() != kAudioFeatureDim)
    throw DataError(fmt::format("audio features have {} columns, expected {}", audio.cols(), kAudioFeatureDim));
  if (audio.rows() < 1 || audio.rows() + 2 < n_frames)
    throw DataError(fmt::format("audio track has {} frames but {} are required", audio.rows(), n_frames));
  for (std::size_t i = 1; i < windows.size(); ++i)
    if (windows[i].start < windows[i - 1].end) throw DataError("lyric windows overlap or are unsorted");

  ConditioningTrack track;
  track.fps = fps;
  track.audio.resize(n_frames, kAudioFeatureDim);
  for (int i = 0; i < n_frames; ++i) track.audio.row(i) = audio.row(std::min<Eigen::Index>(i, audio.rows() - 1));
  track.lyric = Eigen::MatrixXd::Zero(n_frames, kLyricDim);
  std::size_t w = 0;
  for (int i = 0; i < n_frames; ++i) {
    const double t = i / fps;
    while (w < windows.size() && windows[w].end <= t) ++w;
    if (w < windows.size() && windows[w].start <= t && t < windows[w].end)
      track.lyric.row(i) = windows[w].embedding.transpose();
  }
  return track;
}

}  // namespace lm2d

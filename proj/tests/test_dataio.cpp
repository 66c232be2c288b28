#include <doctest.h>

#include <fmt/format.h>

#include <set>

#include "helpers.hpp"
#include "lm2d/dataio.hpp"
#include "lm2d/error.hpp"
#include "lm2d/metrics.hpp"
#include "lm2d/util.hpp"

using namespace lm2d;

namespace {

MotionSequence small_motion() {
  std::mt19937_64 rng(1);
  Eigen::MatrixXd m(5, kPoseDim);
  for (int i = 0; i < 5; ++i) {
    const auto p = test::random_pose(rng, 0.5);
    for (int k = 0; k < kPoseDim; ++k) m(i, k) = p[k];
  }
  return MotionSequence::from_matrix(m, 60.0f, "m");
}

TrainingExample clip_of(const std::string& id, double seconds) {
  TrainingExample e;
  e.clip_id = id;
  e.motion = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(seconds * 60), kPoseDim);
  return e;
}

Manifest numbered_manifest(int n) {
  Manifest m;
  for (int i = 0; i < n; ++i) m.entries.push_back({fmt::format("clip_{:04d}", i), "m.msq", "a.wav", "", 60.0, "train"});
  return m;
}

// Rotation values of the motif joints across a lyric window, resampled on
// `points` beat phases.
Eigen::VectorXd motif_trace(const SyntheticClip& clip, std::size_t window, int points) {
  const double period = 60.0 / clip.bpm;
  const double fps = clip.motion.fps;
  const std::vector<int> joints = synthetic_motif_joints(clip.window_tokens[window]);
  Eigen::VectorXd out(points * static_cast<int>(joints.size()) * kRotationDim);
  int k = 0;
  for (int p = 0; p < points; ++p) {
    const double t = clip.lyrics[window].start + 4.0 * period * (p + 0.5) / points;
    const double f = t * fps;
    const auto i0 = static_cast<Eigen::Index>(std::floor(f));
    const double a = f - static_cast<double>(i0);
    for (int j : joints)
      for (int c = 0; c < kRotationDim; ++c) {
        const int col = 3 + kRotationDim * j + c;
        out(k++) = (1 - a) * clip.motion.frames(i0, col) + a * clip.motion.frames(i0 + 1, col);
      }
  }
  return out;
}

double correlation(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::VectorXd x = a.array() - a.mean(), y = b.array() - b.mean();
  return x.dot(y) / (x.norm() * y.norm());
}

}  // namespace

TEST_CASE("motion file round trip is bit-exact") {
  test::TempDir dir("msq");
  const MotionSequence m = small_motion();
  save_motion(m, dir / "x.msq");
  const MotionSequence back = load_motion(dir / "x.msq");
  CHECK(back.frames == m.frames);
  CHECK(back.fps == m.fps);
  CHECK(back.clip_id == "x");
  CHECK(encode_motion(back) == encode_motion(m));
}

TEST_CASE("motion decoding errors carry byte offsets") {
  const auto bytes = encode_motion(small_motion());
  auto truncated = bytes;
  truncated.resize(bytes.size() - 10);
  try {
    decode_motion(truncated);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    const std::string what = e.what();
    CHECK(what.find("expected 2940 bytes") != std::string::npos);
    CHECK(what.find("2930 remain") != std::string::npos);
  }
  auto magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(decode_motion(magic), ParseError);
  auto version = bytes;
  version[4] = 9;
  CHECK_THROWS_AS(decode_motion(version), ParseError);
  auto joints = bytes;
  joints[10] = 25;
  try {
    decode_motion(joints);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("unsupported skeleton") != std::string::npos);
    CHECK(e.offset() == 10);
  }
}

TEST_CASE("windowing arithmetic") {
  CHECK(window_clips({clip_of("a", 12.0)}, 60.0, 6.0, 6.0).size() == 2);
  CHECK(window_clips({clip_of("a", 6.0)}, 60.0, 6.0, 6.0).size() == 1);
  CHECK(window_clips({clip_of("a", 5.0)}, 60.0, 6.0, 6.0).empty());
  // floor((dur - window) / stride) + 1
  CHECK(window_clips({clip_of("a", 10.0)}, 60.0, 2.0, 0.5).size() == 17);
}

TEST_CASE("windows are ordered by clip id then start frame") {
  const auto w = window_clips({clip_of("b", 4.0), clip_of("a", 4.0)}, 60.0, 2.0, 1.0);
  REQUIRE(w.size() == 6);
  CHECK(w[0].clip_id == "a");
  CHECK(w[2].clip_id == "a");
  CHECK(w[2].start_frame == 120);
  CHECK(w[3].clip_id == "b");
  CHECK(w[3].start_frame == 0);
  CHECK(w[0].motion.rows() == 120);
}

TEST_CASE("split is deterministic, disjoint and exhaustive") {
  const Manifest m = numbered_manifest(1000);
  const auto [train, test] = split_dataset(m, 0.2, 7);
  const auto [train2, test2] = split_dataset(m, 0.2, 7);
  CHECK(train.entries == train2.entries);
  CHECK(test.entries == test2.entries);
  std::set<std::string> seen;
  for (const auto& e : train.entries) CHECK(seen.insert(e.id).second);
  for (const auto& e : test.entries) CHECK(seen.insert(e.id).second);
  CHECK(seen.size() == 1000);
  CHECK(test.entries.size() >= 150);
  CHECK(test.entries.size() <= 250);
  for (const auto& e : test.entries) CHECK(e.split == "test");
  CHECK(split_dataset(m, 0.2, 8).second.entries != test.entries);
  CHECK_THROWS_AS(split_dataset(m, 0.0, 1), UsageError);
}

TEST_CASE("manifest parsing and errors") {
  const std::string ok =
      R"({"id":"a","motion_path":"a.msq","audio_path":"a.wav","lyric_path":"a.lyr","fps":30,"split":"test"})"
      "\n\n"
      R"({"id":"b","motion_path":"b.msq","audio_path":"b.wav"})";
  const Manifest m = parse_manifest(ok, "/data");
  REQUIRE(m.entries.size() == 2);
  CHECK(m.entries[0].fps == 30.0);
  CHECK(m.entries[1].split == "train");
  CHECK(m.resolve("x.msq") == std::filesystem::path("/data/x.msq"));
  CHECK(parse_manifest(serialize_manifest(m), "/data").entries == m.entries);

  CHECK_THROWS_AS(parse_manifest("{not json", "/"), DataError);
  CHECK_THROWS_AS(parse_manifest(R"({"id":"a","motion_path":"m","audio_path":"w","color":1})", "/"), DataError);
  CHECK_THROWS_AS(parse_manifest(R"({"id":"a","audio_path":"w"})", "/"), DataError);
  CHECK_THROWS_AS(parse_manifest(R"({"id":"a","motion_path":"m","audio_path":"w","split":"dev"})", "/"), DataError);
  try {
    parse_manifest(std::string(R"({"id":"a","motion_path":"m","audio_path":"w"})") + "\n" +
                       R"({"id":"a","motion_path":"m","audio_path":"w"})",
                   "/", "list");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("list:2: duplicate id 'a'") != std::string::npos);
  }
  test::TempDir dir("manifest");
  write_text_file(dir / "m.jsonl", R"({"id":"a","motion_path":"gone.msq","audio_path":"w"})");
  CHECK_THROWS_AS(load_manifest(dir / "m.jsonl"), DataError);
}

TEST_CASE("synthetic generator is deterministic") {
  SyntheticSpec spec;
  spec.n_clips = 3;
  spec.seed = 4;
  test::TempDir a("syn_a"), b("syn_b");
  generate_synthetic_dataset(spec, a.path());
  generate_synthetic_dataset(spec, b.path());
  for (const auto& entry : std::filesystem::recursive_directory_iterator(a.path())) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), a.path());
    if (rel == "manifest.jsonl") continue;  // holds absolute base paths only through resolve()
    CHECK(read_file_bytes(entry.path()) == read_file_bytes(b.path() / rel));
  }
  CHECK(read_text_file(a / "manifest.jsonl") == read_text_file(b / "manifest.jsonl"));
  const Manifest m = load_manifest(a / "manifest.jsonl");
  CHECK(m.entries.size() == 3);
}

TEST_CASE("generated clips satisfy skeleton invariants and are beat-aligned") {
  SyntheticSpec spec;
  spec.seed = 5;
  const Skeleton& s = Skeleton::canonical();
  for (int i = 0; i < 8; ++i) {
    const SyntheticClip c = generate_synthetic_clip(spec, i);
    CHECK_NOTHROW(c.motion.validate());
    const Eigen::MatrixXd pos = motion_positions(s, c.motion.to_matrix());
    double worst = 0.0;
    for (Eigen::Index f = 0; f < pos.rows(); ++f)
      for (int j = 1; j < kJointCount; ++j) {
        const Eigen::Vector3d a = pos.row(f).segment<3>(3 * j), b = pos.row(f).segment<3>(3 * s.parent(j));
        worst = std::max(worst, std::abs((a - b).norm() - s.rest_offset(j).norm()));
      }
    CHECK(worst < 1e-5);
    const double ba = beat_alignment(c.motion, s, c.beat_frames, 3.0);
    MESSAGE("clip " << i << " bpm " << c.bpm << " BA " << ba);
    CHECK(ba >= 0.9);
  }
}

TEST_CASE("clips sharing a lyric token share the motif trace") {
  SyntheticSpec spec;
  spec.seed = 6;
  std::vector<SyntheticClip> clips;
  for (int i = 0; i < 12; ++i) clips.push_back(generate_synthetic_clip(spec, i));
  int compared = 0;
  for (int token = 0; token < static_cast<int>(spec.motif_vocab.size()); ++token) {
    std::vector<std::pair<int, std::size_t>> hits;
    for (int c = 0; c < static_cast<int>(clips.size()); ++c)
      for (std::size_t w = 0; w < clips[c].window_tokens.size(); ++w)
        if (clips[c].window_tokens[w] == token) hits.emplace_back(c, w);
    for (std::size_t k = 1; k < hits.size(); ++k) {
      if (hits[k].first == hits[0].first) continue;
      const double r = correlation(motif_trace(clips[hits[0].first], hits[0].second, 64),
                                   motif_trace(clips[hits[k].first], hits[k].second, 64));
      CHECK(r > 0.9);
      ++compared;
    }
  }
  MESSAGE(compared << " cross-clip motif pairs");
  CHECK(compared >= 4);
}

TEST_CASE("synthetic generator settings are validated") {
  SyntheticSpec spec;
  spec.bpm_max = 200.0;
  CHECK_THROWS_AS(spec.validate(), UsageError);
  spec = SyntheticSpec{};
  spec.motif_vocab.clear();
  CHECK_THROWS_AS(spec.validate(), UsageError);
}

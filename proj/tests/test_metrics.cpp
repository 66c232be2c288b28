#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "lm2d/dataio.hpp"
#include "lm2d/encoder.hpp"
#include "lm2d/error.hpp"
#include "lm2d/lyrics.hpp"
#include "lm2d/metrics.hpp"

using namespace lm2d;

namespace {

MotionSequence motion_of(const Eigen::MatrixXd& m, double fps = 60.0) {
  return MotionSequence::from_matrix(m, static_cast<float>(fps), "m");
}

// Root sways sinusoidally while the left elbow swings: a smooth trajectory
// with nonzero speed and acceleration on every joint.
MotionSequence smooth_motion(double fps, double seconds) {
  const int n = static_cast<int>(std::lround(fps * seconds)) + 1;
  Eigen::MatrixXd m = test::identity_motion(n);
  for (int i = 0; i < n; ++i) {
    const double t = i / fps;
    m(i, 0) = 0.3 * std::sin(2.0 * t);
    m(i, 2) = 0.2 * t;
    const Rotation6D r = matrix_to_rot6d(axis_angle(Vec3::UnitY(), 0.8 * std::sin(3.0 * t)));
    for (int k = 0; k < kRotationDim; ++k) m(i, 3 + kRotationDim * kLeftElbow + k) = r.r[k];
  }
  return motion_of(m, fps);
}

Eigen::MatrixXd gaussian(Eigen::Index n, Eigen::Index d, double sd, double shift, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  return Eigen::MatrixXd::NullaryExpr(n, d, [&] { return shift + sd * g(rng); });
}

}  // namespace

TEST_CASE("kinetic features of a static pose are zero") {
  const Eigen::VectorXd k = kinetic_features(motion_of(test::identity_motion(10)), Skeleton::canonical());
  CHECK(k.size() == kKineticDim);
  CHECK(k.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("kinetic features of uniform 1 m/s translation") {
  Eigen::MatrixXd m = test::identity_motion(61);
  for (int i = 0; i < 61; ++i) m(i, 0) = i / 60.0;
  const Eigen::VectorXd k = kinetic_features(motion_of(m), Skeleton::canonical());
  for (int j = 0; j < kJointCount; ++j) {
    CHECK(std::abs(k(j) - 1.0) < 1e-3);
    CHECK(std::abs(k(kJointCount + j)) < 1e-3);
    CHECK(std::abs(k(2 * kJointCount + j) - 1.0) < 2e-3);
  }
  CHECK_THROWS_AS(kinetic_features(motion_of(test::identity_motion(2)), Skeleton::canonical()), DataError);
}

TEST_CASE("kinetic features converge under fps doubling") {
  const Skeleton& s = Skeleton::canonical();
  const Eigen::VectorXd a = kinetic_features(smooth_motion(60.0, 4.0), s);
  const Eigen::VectorXd b = kinetic_features(smooth_motion(120.0, 4.0), s);
  for (Eigen::Index i = 0; i < a.size(); ++i) CHECK(std::abs(a(i) - b(i)) <= 0.02 * std::max(std::abs(b(i)), 1e-3));
}

TEST_CASE("geometric features: rest pose, half toggle and range") {
  const Skeleton& s = Skeleton::canonical();
  const auto& names = geometric_predicate_names();
  REQUIRE(names.size() == kGeometricDim);
  CHECK(names[0] == "left_wrist_above_head");
  const Eigen::VectorXd rest = geometric_features(motion_of(test::identity_motion(4)), s);
  CHECK(rest(0) == 0.0);
  CHECK(rest(1) == 0.0);

  Eigen::MatrixXd m = test::identity_motion(10);
  const Rotation6D up = matrix_to_rot6d(axis_angle(Vec3::UnitZ(), 1.6));
  for (int i = 0; i < 10; i += 2)
    for (int k = 0; k < kRotationDim; ++k) m(i, 3 + kRotationDim * kLeftShoulder + k) = up.r[k];
  CHECK(geometric_features(motion_of(m), s)(0) == 0.5);

  std::mt19937_64 rng(1);
  for (int c = 0; c < 100; ++c) {
    Eigen::MatrixXd r(6, kPoseDim);
    for (int i = 0; i < 6; ++i) {
      const auto p = test::random_pose(rng, 0.5);
      for (int k = 0; k < kPoseDim; ++k) r(i, k) = p[k];
    }
    const Eigen::VectorXd g = geometric_features(motion_of(r), s);
    CHECK(g.minCoeff() >= 0.0);
    CHECK(g.maxCoeff() <= 1.0);
  }
}

TEST_CASE("FID of identical sets and of an exact mean shift") {
  std::mt19937_64 rng(2);
  const Eigen::MatrixXd a = gaussian(200, 8, 1.0, 0.0, rng);
  CHECK(std::abs(fid(a, a)) < 1e-6);
  Eigen::RowVectorXd c(8);
  c << 1.0, -0.5, 0.25, 2.0, 0.0, 0.0, -1.0, 0.5;
  const Eigen::MatrixXd b = a.rowwise() + c;
  CHECK(std::abs(fid(a, b) - c.squaredNorm()) < 1e-6);
  CHECK(fid(a, b) == doctest::Approx(fid(b, a)).epsilon(1e-9));
}

TEST_CASE("FID matches closed-form Gaussian distances") {
  std::mt19937_64 rng(3);
  // ||mu1 - mu2||^2 = 4 in dim 4 (shift 1 per coordinate).
  const double shift = fid(gaussian(10000, 4, 1.0, 0.0, rng), gaussian(10000, 4, 1.0, 1.0, rng));
  MESSAGE("mean-shift FID " << shift);
  CHECK(std::abs(shift - 4.0) < 0.2);
  // N(0, I) vs N(0, 4I) in dim 2: 2 (1 + 4 - 2 * 2) = 2.
  const double scale = fid(gaussian(10000, 2, 1.0, 0.0, rng), gaussian(10000, 2, 2.0, 0.0, rng));
  MESSAGE("diagonal FID " << scale);
  CHECK(std::abs(scale - 2.0) < 0.1);
}

TEST_CASE("FID errors and regularization") {
  Eigen::MatrixXd a = Eigen::MatrixXd::Ones(4, 2);
  a(2, 1) = std::nan("");
  const std::vector<std::string> ids{"w", "x", "y", "z"};
  try {
    fid(a, Eigen::MatrixXd::Ones(4, 2), ids);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("y") != std::string::npos);
  }
  std::mt19937_64 rng(4);
  CHECK(fit_gaussian(gaussian(3, 5, 1.0, 0.0, rng)).regularized);
  CHECK_FALSE(fit_gaussian(gaussian(6, 5, 1.0, 0.0, rng)).regularized);
}

TEST_CASE("diversity examples and Monte Carlo oracle") {
  CHECK(diversity(Eigen::MatrixXd::Ones(5, 3)) == 0.0);
  Eigen::MatrixXd two(2, 2);
  two << 0.0, 0.0, 3.0, 4.0;
  CHECK(diversity(two) == doctest::Approx(5.0));
  CHECK_THROWS_AS(diversity(Eigen::MatrixXd::Ones(1, 3)), DataError);

  std::mt19937_64 rng(5);
  const Eigen::MatrixXd x = gaussian(10000, 16, 1.0, 0.0, rng);
  const double div = diversity(x, 7);
  // Independent Monte Carlo estimate of E||x - y|| for x, y ~ N(0, I_16).
  std::mt19937_64 mc_rng(6);
  double sum = 0.0;
  const int pairs = 200000;
  for (int i = 0; i < pairs; ++i) sum += (gaussian(1, 16, 1.0, 0.0, mc_rng) - gaussian(1, 16, 1.0, 0.0, mc_rng)).norm();
  const double mc = sum / pairs;
  MESSAGE("diversity " << div << " vs Monte Carlo " << mc);
  CHECK(std::abs(div - mc) < 0.02 * mc);
  CHECK(diversity(x.array() + 10.0, 7) == doctest::Approx(div).epsilon(1e-9));
}

TEST_CASE("beat alignment arithmetic") {
  const std::vector<double> beats{10.0, 40.0, 70.0};
  CHECK(beat_alignment_score(beats, beats, 3.0) == 1.0);
  const std::vector<double> one{10.0}, kin{13.0, 30.0};
  CHECK(std::abs(beat_alignment_score(one, kin, 3.0) - std::exp(-0.5)) < 1e-6);
  CHECK(beat_alignment_score(one, std::vector<double>{}, 3.0) == 0.0);
  CHECK_THROWS_AS(beat_alignment_score(std::vector<double>{}, kin, 3.0), DataError);
}

TEST_CASE("kinematic beats sit at speed minima between frames") {
  // Turning points of the sway sit at frames 15, 45, 75 and 105. The two
  // steps around each one tie, so the detected minimum is within a frame.
  Eigen::MatrixXd m = test::identity_motion(121);
  for (int i = 0; i < 121; ++i) m(i, 0) = 0.2 * std::sin(2 * M_PI * i / 60.0);
  const Eigen::MatrixXd pos = motion_positions(Skeleton::canonical(), m);
  const std::vector<double> kb = kinematic_beats(pos, 60.0);
  REQUIRE(kb.size() == 4);
  for (std::size_t i = 0; i < kb.size(); ++i) CHECK(std::abs(kb[i] - (15.0 + 30.0 * i)) <= 1.0);
  CHECK(kb[1] - kb[0] == 30.0);
}

TEST_CASE("beat-locked generator clips beat phase-shifted ones") {
  SyntheticSpec locked, shifted;
  locked.seed = shifted.seed = 8;
  shifted.motion_phase_beats = 0.5;
  const Skeleton& s = Skeleton::canonical();
  double sum_locked = 0.0, sum_shifted = 0.0;
  for (int i = 0; i < 6; ++i) {
    const SyntheticClip a = generate_synthetic_clip(locked, i);
    const SyntheticClip b = generate_synthetic_clip(shifted, i);
    CHECK(a.beat_frames == b.beat_frames);
    const double ba = beat_alignment(a.motion, s, a.beat_frames);
    const double bb = beat_alignment(b.motion, s, b.beat_frames);
    CHECK(ba - bb >= 0.15);
    sum_locked += ba;
    sum_shifted += bb;
  }
  MESSAGE("mean BA locked " << sum_locked / 6 << " shifted " << sum_shifted / 6);
}

TEST_CASE("semantic matching is a clamped cosine") {
  Eigen::VectorXd a(3), b(3);
  a << 1, 0, 0;
  b << 1, 1, 0;
  CHECK(semantic_matching(a, b) == doctest::Approx(1.0 / std::sqrt(2.0)));
  CHECK(semantic_matching(a, -a) == -1.0);
  CHECK(semantic_matching(a, Eigen::VectorXd::Zero(3)) == 0.0);
  CHECK_THROWS_AS(semantic_matching(a, Eigen::VectorXd::Zero(2)), DataError);
}

TEST_CASE("motion encoder: unit norm, deterministic training, degenerate data") {
  EncoderConfig cfg;
  cfg.hidden = 16;
  TestEmbedder embed;
  std::mt19937_64 rng(9);
  std::vector<EncoderPair> pairs;
  for (int i = 0; i < 8; ++i) {
    Eigen::MatrixXd m(12, kPoseDim);
    for (int f = 0; f < 12; ++f) {
      const auto p = test::random_pose(rng, 0.2);
      for (int k = 0; k < kPoseDim; ++k) m(f, k) = p[k];
    }
    pairs.push_back({m, embed.embed(i % 2 ? "up" : "down"), "c" + std::to_string(i)});
  }
  EncoderTrainConfig train;
  train.steps = 5;
  train.batch = 4;
  train.seed = 3;
  const MotionEncoder a = train_motion_encoder(pairs, cfg, train);
  const MotionEncoder b = train_motion_encoder(pairs, cfg, train);
  CHECK(a.parameters() == b.parameters());
  const Eigen::VectorXd e = a.embed(pairs[0].motion);
  CHECK(e.size() == kLyricDim);
  CHECK(std::abs(e.norm() - 1.0) < 1e-6);

  for (auto& p : pairs) p.lyric = embed.embed("same");
  CHECK_THROWS_AS(train_motion_encoder(pairs, cfg, train), DataError);
}

TEST_CASE("contrastive loss gradient matches finite differences") {
  EncoderConfig cfg;
  cfg.hidden = 4;
  cfg.embed_dim = 6;
  MotionEncoder enc(cfg);
  enc.initialize(10);
  std::mt19937_64 rng(11);
  std::vector<EncoderPair> batch;
  for (int i = 0; i < 3; ++i) {
    Eigen::MatrixXd m(6, kPoseDim);
    for (int f = 0; f < 6; ++f) {
      const auto p = test::random_pose(rng, 0.2);
      for (int k = 0; k < kPoseDim; ++k) m(f, k) = p[k];
    }
    Eigen::VectorXd l = gaussian(6, 1, 1.0, 0.0, rng);
    batch.push_back({m, l.normalized(), "c"});
  }
  batch.push_back({batch[0].motion * 0.9 + batch[1].motion * 0.1, batch[0].lyric, "d"});  // shared text
  const ContrastiveLoss l = contrastive_loss_and_gradient(enc, batch, 0.5);
  std::uniform_int_distribution<Eigen::Index> pick(0, enc.parameters().size() - 1);
  const double h = 1e-5;
  double worst = 0.0;
  for (int probe = 0; probe < 40; ++probe) {
    const Eigen::Index i = pick(rng);
    const double orig = enc.parameters()(i);
    enc.parameters()(i) = orig + h;
    const double up = contrastive_loss_and_gradient(enc, batch, 0.5).loss;
    enc.parameters()(i) = orig - h;
    const double down = contrastive_loss_and_gradient(enc, batch, 0.5).loss;
    enc.parameters()(i) = orig;
    const double fd = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(fd - l.gradient(i)) / std::max({std::abs(fd), std::abs(l.gradient(i)), 1e-4}));
  }
  CHECK(worst < 1e-4);
}

#include "lm2d/metrics.hpp"

#include <Eigen/Eigenvalues>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "lm2d/error.hpp"

namespace lm2d {

namespace {

Vec3 joint(const Eigen::MatrixXd& positions, Eigen::Index frame, int j) {
  return positions.block<1, 3>(frame, 3 * j).transpose();
}

double angle_at(const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 u = a - b, v = c - b;
  const double d = u.norm() * v.norm();
  if (!(d > 0.0)) return std::numbers::pi;
  return std::acos(std::clamp(u.dot(v) / d, -1.0, 1.0));
}

}  // namespace

Eigen::VectorXd kinetic_features(const Eigen::MatrixXd& positions, double fps) {
  const Eigen::Index n = positions.rows();
  if (n < 3) throw DataError(fmt::format("kinetic features need at least 3 frames, got {}", n));
  if (positions.cols() != kPositionDim) throw DataError("kinetic features expect 72 position columns");
  Eigen::VectorXd f = Eigen::VectorXd::Zero(kKineticDim);
  const double inv = 1.0 / static_cast<double>(n - 2);
  for (Eigen::Index i = 1; i + 1 < n; ++i) {
    for (int j = 0; j < kJointCount; ++j) {
      const Vec3 prev = joint(positions, i - 1, j), cur = joint(positions, i, j), next = joint(positions, i + 1, j);
      const double speed = ((next - prev) * (0.5 * fps)).norm();
      const double acc = ((next - 2.0 * cur + prev) * (fps * fps)).norm();
      f[j] += inv * speed;
      f[kJointCount + j] += inv * acc;
      f[2 * kJointCount + j] += inv * speed * speed;
    }
  }
  return f;
}

Eigen::VectorXd kinetic_features(const MotionSequence& motion, const Skeleton& skeleton) {
  return kinetic_features(motion_positions(skeleton, motion.to_matrix()), motion.fps);
}

const std::vector<std::string>& geometric_predicate_names() {
  static const std::vector<std::string> names = {
      "left_wrist_above_head",      "right_wrist_above_head",  "left_wrist_above_shoulder",
      "right_wrist_above_shoulder", "wrists_close",            "left_wrist_in_front",
      "right_wrist_in_front",       "left_foot_forward",       "right_foot_forward",
      "left_ankle_raised",          "right_ankle_raised",      "left_knee_bent",
      "right_knee_bent",            "left_elbow_bent",         "right_elbow_bent",
      "feet_apart",
  };
  return names;
}

Eigen::VectorXd geometric_features(const MotionSequence& motion, const Skeleton& skeleton) {
  const Eigen::MatrixXd poses = motion.to_matrix();
  const Eigen::MatrixXd p = motion_positions(skeleton, poses);
  const Eigen::Index n = p.rows();
  if (n < 1) throw DataError("geometric features need at least one frame");
  constexpr double kBent = 150.0 * std::numbers::pi / 180.0;
  Eigen::VectorXd f = Eigen::VectorXd::Zero(kGeometricDim);
  for (Eigen::Index i = 0; i < n; ++i) {
    Rotation6D root;
    for (int k = 0; k < kRotationDim; ++k) root.r[k] = poses(i, 3 + k);
    const Mat3 facing = rot6d_to_matrix(root);
    const Vec3 forward = facing.col(2);
    auto J = [&](int j) { return joint(p, i, j); };
    const Vec3 pelvis = J(kPelvis);
    auto ahead = [&](int j) { return (J(j) - pelvis).dot(forward); };
    const bool holds[kGeometricDim] = {
        J(kLeftWrist).y() > J(kHead).y(),
        J(kRightWrist).y() > J(kHead).y(),
        J(kLeftWrist).y() > J(kLeftShoulder).y() + 0.05,
        J(kRightWrist).y() > J(kRightShoulder).y() + 0.05,
        (J(kLeftWrist) - J(kRightWrist)).norm() < 0.3,
        ahead(kLeftWrist) > 0.15,
        ahead(kRightWrist) > 0.15,
        ahead(kLeftFoot) > 0.15,
        ahead(kRightFoot) > 0.15,
        J(kLeftAnkle).y() - J(kRightAnkle).y() > 0.05,
        J(kRightAnkle).y() - J(kLeftAnkle).y() > 0.05,
        angle_at(J(kLeftHip), J(kLeftKnee), J(kLeftAnkle)) < kBent,
        angle_at(J(kRightHip), J(kRightKnee), J(kRightAnkle)) < kBent,
        angle_at(J(kLeftShoulder), J(kLeftElbow), J(kLeftWrist)) < kBent,
        angle_at(J(kRightShoulder), J(kRightElbow), J(kRightWrist)) < kBent,
        (J(kLeftAnkle) - J(kRightAnkle)).norm() > 0.4,
    };
    for (int k = 0; k < kGeometricDim; ++k)
      if (holds[k]) f[k] += 1.0;
  }
  return f / static_cast<double>(n);
}

GaussianStats fit_gaussian(const Eigen::MatrixXd& samples, std::span<const std::string> ids) {
  const Eigen::Index n = samples.rows(), d = samples.cols();
  if (n < 1 || d < 1) throw DataError("cannot fit a Gaussian to an empty feature set");
  std::vector<std::string> bad;
  for (Eigen::Index i = 0; i < n; ++i)
    if (!samples.row(i).allFinite())
      bad.push_back(static_cast<std::size_t>(i) < ids.size() ? ids[i] : fmt::format("#{}", i));
  if (!bad.empty()) throw DataError(fmt::format("non-finite features for clips: {}", fmt::join(bad, ", ")));
  GaussianStats g;
  g.mean = samples.colwise().mean().transpose();
  const Eigen::MatrixXd centered = samples.rowwise() - g.mean.transpose();
  g.cov = n > 1 ? Eigen::MatrixXd(centered.transpose() * centered / static_cast<double>(n - 1))
                : Eigen::MatrixXd::Zero(d, d);
  g.cov = 0.5 * (g.cov + g.cov.transpose());
  if (n < d + 1) {
    spdlog::warn("{} samples for {}-dimensional features; adding 1e-6 I to the covariance", n, d);
    g.cov.diagonal().array() += 1e-6;
    g.regularized = true;
  }
  return g;
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  if (a.mean.size() != b.mean.size()) throw DataError("FID: feature dimensions differ");
  // Tr((S1 S2)^{1/2}) = Tr((S1^{1/2} S2 S1^{1/2})^{1/2}), both factors symmetric.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(a.cov);
  const Eigen::VectorXd la = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd sqrt_a = ea.eigenvectors() * la.asDiagonal() * ea.eigenvectors().transpose();
  Eigen::MatrixXd m = sqrt_a * b.cov * sqrt_a;
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(m, Eigen::EigenvaluesOnly);
  const double tr_sqrt = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double value = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, value);
}

double fid(const Eigen::MatrixXd& real, const Eigen::MatrixXd& gen, std::span<const std::string> real_ids,
           std::span<const std::string> gen_ids) {
  if (real.cols() != gen.cols()) throw DataError("FID: feature dimensions differ");
  return frechet_distance(fit_gaussian(real, real_ids), fit_gaussian(gen, gen_ids));
}

double diversity(const Eigen::MatrixXd& samples, std::uint64_t seed) {
  const Eigen::Index n = samples.rows();
  if (n < 2) throw DataError("diversity needs at least 2 samples");
  constexpr std::uint64_t kMaxPairs = 10000;
  const auto pairs = static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(n - 1) / 2;
  double sum = 0.0;
  if (pairs <= kMaxPairs) {
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j) sum += (samples.row(i) - samples.row(j)).norm();
    return sum / static_cast<double>(pairs);
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  for (std::uint64_t k = 0; k < kMaxPairs; ++k) {
    const Eigen::Index i = pick(rng);
    Eigen::Index j = pick(rng);
    while (j == i) j = pick(rng);
    sum += (samples.row(i) - samples.row(j)).norm();
  }
  return sum / static_cast<double>(kMaxPairs);
}

Eigen::VectorXd mean_joint_speed(const Eigen::MatrixXd& positions, double fps) {
  const Eigen::Index n = positions.rows();
  if (n < 2) return Eigen::VectorXd();
  Eigen::VectorXd s(n - 1);
  for (Eigen::Index k = 0; k + 1 < n; ++k) {
    double acc = 0.0;
    for (int j = 0; j < kJointCount; ++j) acc += (joint(positions, k + 1, j) - joint(positions, k, j)).norm();
    s[k] = acc * fps / kJointCount;
  }
  return s;
}

std::vector<double> kinematic_beats(const Eigen::MatrixXd& positions, double fps) {
  const Eigen::VectorXd s = mean_joint_speed(positions, fps);
  constexpr double kStill = 1e-9;
  Eigen::Index lo = 0, hi = s.size();
  while (lo < hi && s[lo] <= kStill) ++lo;
  while (hi > lo && s[hi - 1] <= kStill) --hi;
  std::vector<double> beats;
  if (hi - lo < 3) return beats;
  std::vector<double> span(s.data() + lo, s.data() + hi);
  std::vector<double> sorted = span;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t m = sorted.size();
  const double median = m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
  for (std::size_t k = 1; k + 1 < m; ++k)
    if (span[k] < span[k - 1] && span[k] <= span[k + 1] && span[k] < median)
      beats.push_back(static_cast<double>(lo + k) + 0.5);
  return beats;
}

double beat_alignment_score(std::span<const double> music_beats, std::span<const double> kinematic, double sigma) {
  if (music_beats.empty()) throw DataError("beat alignment needs at least one music beat");
  if (!(sigma > 0.0)) throw UsageError("beat alignment sigma must be positive");
  if (kinematic.empty()) {
    spdlog::warn("no kinematic beats detected; beat alignment is 0");
    return 0.0;
  }
  double total = 0.0;
  for (double b : music_beats) {
    double best = std::numeric_limits<double>::infinity();
    for (double k : kinematic) best = std::min(best, std::abs(b - k));
    total += std::exp(-best * best / (2.0 * sigma * sigma));
  }
  return total / static_cast<double>(music_beats.size());
}

double beat_alignment(const MotionSequence& motion, const Skeleton& skeleton, std::span<const int> music_beats,
                      double sigma) {
  const std::vector<double> kin = kinematic_beats(motion_positions(skeleton, motion.to_matrix()), motion.fps);
  std::vector<double> music(music_beats.begin(), music_beats.end());
  return beat_alignment_score(music, kin, sigma);
}

double semantic_matching(const Eigen::VectorXd& motion_embedding, const Eigen::VectorXd& lyric_embedding) {
  if (motion_embedding.size() != lyric_embedding.size()) throw DataError("semantic matching: dimension mismatch");
  const double ln = lyric_embedding.norm();
  if (!(ln > 0.0)) {
    spdlog::warn("semantic matching against a zero lyric embedding is defined as 0");
    return 0.0;
  }
  const double mn = motion_embedding.norm();
  if (!(mn > 0.0)) return 0.0;
  return std::clamp(motion_embedding.dot(lyric_embedding) / (mn * ln), -1.0, 1.0);
}

}  // namespace lm2d

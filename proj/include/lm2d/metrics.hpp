#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lm2d/skeleton.hpp"

namespace lm2d {

inline constexpr int kKineticDim = 72;
inline constexpr int kGeometricDim = 16;

/// Per joint, from FK positions with central differences: mean speed (m/s),
/// mean acceleration magnitude (m/s^2), mean squared speed. Layout: 24 speeds,
/// 24 accelerations, 24 energies. Requires N >= 3.
Eigen::VectorXd kinetic_features(const MotionSequence& motion, const Skeleton& skeleton);
Eigen::VectorXd kinetic_features(const Eigen::MatrixXd& positions, double fps);

/// Names of the 16 geometric predicates, in feature order.
const std::vector<std::string>& geometric_predicate_names();
/// Fraction of frames in which each predicate holds.
Eigen::VectorXd geometric_features(const MotionSequence& motion, const Skeleton& skeleton);

struct GaussianStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  bool regularized = false;  // 1e-6 I added because n < dim + 1
};

/// Rows are samples. Throws DataError naming the offending ids (or row
/// indices) when a value is non-finite.
GaussianStats fit_gaussian(const Eigen::MatrixXd& samples, std::span<const std::string> ids = {});
/// Frechet distance between Gaussian fits of two sample sets.
double fid(const Eigen::MatrixXd& real, const Eigen::MatrixXd& gen, std::span<const std::string> real_ids = {},
           std::span<const std::string> gen_ids = {});
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

/// Mean pairwise Euclidean distance over unordered pairs; above 10^4 pairs a
/// seeded subsample of 10^4 pairs is used.
double diversity(const Eigen::MatrixXd& samples, std::uint64_t seed = 0);

/// Mean-joint speed between consecutive frames (N - 1 values, m/s).
Eigen::VectorXd mean_joint_speed(const Eigen::MatrixXd& positions, double fps);
/// Local minima of the mean-joint speed below its median, after trimming a
/// motionless head and tail. A minimum of the speed between frames k and k+1
/// is reported at k + 0.5.
std::vector<double> kinematic_beats(const Eigen::MatrixXd& positions, double fps);
/// (1/|B_m|) sum over music beats of exp(-d^2 / (2 sigma^2)), d = distance to
/// the nearest kinematic beat. Returns 0 with a warning when there are no
/// kinematic beats; throws DataError without music beats.
double beat_alignment_score(std::span<const double> music_beats, std::span<const double> kinematic_beats,
                            double sigma);
double beat_alignment(const MotionSequence& motion, const Skeleton& skeleton, std::span<const int> music_beats,
                      double sigma = 3.0);

/// Cosine similarity; 0 with a warning when the lyric embedding is zero.
double semantic_matching(const Eigen::VectorXd& motion_embedding, const Eigen::VectorXd& lyric_embedding);

}  // namespace lm2d

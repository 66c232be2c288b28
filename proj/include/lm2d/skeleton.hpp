#pragma once

#include <Eigen/Core>
#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace lm2d {

inline constexpr int kJointCount = 24;
inline constexpr int kRotationDim = 6;
// Root translation followed by one 6D rotation per joint.
inline constexpr int kPoseDim = 3 + kJointCount * kRotationDim;  // 147
inline constexpr int kPositionDim = kJointCount * 3;             // 72

static_assert(kPoseDim == 147);

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using JointPositions = Eigen::Matrix<double, kJointCount, 3, Eigen::RowMajor>;

// SMPL joint order.
enum Joint : int {
  kPelvis = 0,
  kLeftHip,
  kRightHip,
  kSpine1,
  kLeftKnee,
  kRightKnee,
  kSpine2,
  kLeftAnkle,
  kRightAnkle,
  kSpine3,
  kLeftFoot,
  kRightFoot,
  kNeck,
  kLeftCollar,
  kRightCollar,
  kHead,
  kLeftShoulder,
  kRightShoulder,
  kLeftElbow,
  kRightElbow,
  kLeftWrist,
  kRightWrist,
  kLeftHand,
  kRightHand,
};

/// The first two columns of a rotation matrix, column 1 then column 2.
struct Rotation6D {
  std::array<double, 6> r{1, 0, 0, 0, 1, 0};

  Vec3 first() const { return {r[0], r[1], r[2]}; }
  Vec3 second() const { return {r[3], r[4], r[5]}; }
};

/// Gram-Schmidt decoding. Throws DegenerateRotationError when the columns are
/// zero or parallel.
Mat3 rot6d_to_matrix(const Rotation6D& rot);
/// Drops the third column. Throws DataError when the first two columns are not
/// orthonormal to within 1e-4.
Rotation6D matrix_to_rot6d(const Mat3& m);

Mat3 axis_angle(const Vec3& axis, double angle);

class Skeleton {
 public:
  static constexpr int kRootParent = -1;

  Skeleton(std::vector<std::string> names, std::array<int, kJointCount> parents,
           std::array<Vec3, kJointCount> rest_offsets);

  /// Built-in 24-joint adult skeleton, identical to data/skeleton_smpl24.txt.
  static const Skeleton& canonical();
  static Skeleton parse(const std::string& text);
  static Skeleton load(const std::filesystem::path& path);
  std::string serialize() const;

  int parent(int joint) const { return parents_[joint]; }
  const Vec3& rest_offset(int joint) const { return offsets_[joint]; }
  const std::string& name(int joint) const { return names_[joint]; }
  const std::array<int, kJointCount>& parents() const { return parents_; }

 private:
  void validate() const;

  std::vector<std::string> names_;
  std::array<int, kJointCount> parents_;
  std::array<Vec3, kJointCount> offsets_;
};

/// Typed view of the 147-dim pose layout.
struct PoseVector {
  Vec3 root_translation = Vec3::Zero();
  std::array<Rotation6D, kJointCount> joint_rotations{};

  static PoseVector decode(std::span<const double> values);
  std::array<double, kPoseDim> encode() const;
};

/// Global joint positions. Local rotations are relative to the parent; the root
/// joint's rotation is the global orientation and its position is the root
/// translation.
JointPositions forward_kinematics(const Skeleton& skeleton, std::span<const double> pose);

/// Vector-Jacobian product of forward_kinematics: adds dL/dpose into
/// grad_pose given dL/dpositions (72 values, joint-major xyz).
void forward_kinematics_vjp(const Skeleton& skeleton, std::span<const double> pose,
                            std::span<const double> grad_positions, std::span<double> grad_pose);

/// Replaces every 6D block by the decoded orthonormal columns.
void canonicalize_pose(std::span<double> pose);

using PoseMatrix = Eigen::Matrix<float, Eigen::Dynamic, kPoseDim, Eigen::RowMajor>;

/// Frames x 147 pose vectors at a fixed rate; stored at file precision (f32).
struct MotionSequence {
  PoseMatrix frames;
  float fps = 60.0f;
  std::string clip_id;

  int frame_count() const { return static_cast<int>(frames.rows()); }
  double duration_seconds() const { return frame_count() / static_cast<double>(fps); }
  Eigen::MatrixXd to_matrix() const { return frames.cast<double>(); }
  /// Throws when N < 1, fps <= 0, a value is non-finite or a rotation is degenerate.
  void validate() const;

  /// Canonicalizes each pose (Gram-Schmidt) before storing.
  static MotionSequence from_matrix(const Eigen::MatrixXd& values, float fps, std::string clip_id);
};

/// FK on every frame: N x 72, joint-major xyz.
Eigen::MatrixXd motion_positions(const Skeleton& skeleton, const Eigen::MatrixXd& poses);

}  // namespace lm2d

#include "lm2d/skeleton.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <fmt/format.h>
#include <sstream>

#include "lm2d/error.hpp"
#include "lm2d/util.hpp"

namespace lm2d {

namespace {

constexpr double kDegenerateTol = 1e-9;
constexpr double kOrthonormalTol = 1e-4;

struct GramSchmidt {
  Vec3 b1, b2, b3;
  Vec3 a2;
  double n1;  // |a1|
  double nu;  // |a2 - (b1.a2) b1|
};

GramSchmidt gram_schmidt(const double* r, int joint = -1) {
  const Vec3 a1(r[0], r[1], r[2]);
  const Vec3 a2(r[3], r[4], r[5]);
  if (!a1.allFinite() || !a2.allFinite())
    throw DegenerateRotationError(fmt::format("non-finite 6D rotation (joint {})", joint));
  GramSchmidt gs;
  gs.a2 = a2;
  gs.n1 = a1.norm();
  if (gs.n1 < kDegenerateTol) throw DegenerateRotationError(fmt::format("zero first column in 6D rotation (joint {})", joint));
  gs.b1 = a1 / gs.n1;
  const Vec3 u = a2 - gs.b1.dot(a2) * gs.b1;
  gs.nu = u.norm();
  if (gs.nu < kDegenerateTol * std::max(1.0, a2.norm()))
    throw DegenerateRotationError(fmt::format("parallel or zero columns in 6D rotation (joint {})", joint));
  gs.b2 = u / gs.nu;
  gs.b3 = gs.b1.cross(gs.b2);
  return gs;
}

Mat3 to_matrix(const GramSchmidt& gs) {
  Mat3 m;
  m.col(0) = gs.b1;
  m.col(1) = gs.b2;
  m.col(2) = gs.b3;
  return m;
}

// Backpropagates dL/dR (columns g1 g2 g3) through the Gram-Schmidt decoding.
void gram_schmidt_vjp(const GramSchmidt& gs, const Mat3& g, double* grad_r) {
  Vec3 gb1 = g.col(0);
  Vec3 gb2 = g.col(1);
  const Vec3 g3 = g.col(2);
  // b3 = b1 x b2
  gb1 += gs.b2.cross(g3);
  gb2 += g3.cross(gs.b1);
  // b2 = u / |u|
  const Vec3 gu = (gb2 - gs.b2 * gs.b2.dot(gb2)) / gs.nu;
  // u = a2 - (b1.a2) b1
  const Vec3 ga2 = gu - gs.b1 * gs.b1.dot(gu);
  const double proj = gs.b1.dot(gs.a2);
  gb1 -= proj * gu + gs.a2 * gs.b1.dot(gu);
  // b1 = a1 / |a1|
  const Vec3 ga1 = (gb1 - gs.b1 * gs.b1.dot(gb1)) / gs.n1;
  for (int k = 0; k < 3; ++k) {
    grad_r[k] += ga1[k];
    grad_r[3 + k] += ga2[k];
  }
}

struct JointTable {
  const char* name;
  int parent;
  double x, y, z;
};

// Approximate adult proportions in meters, y up, character facing +z.
constexpr JointTable kCanonical[kJointCount] = {
    {"pelvis", -1, 0.0, 0.0, 0.0},
    {"left_hip", 0, 0.0586, -0.0823, -0.0177},
    {"right_hip", 0, -0.0603, -0.0905, -0.0135},
    {"spine1", 0, 0.0044, 0.1244, -0.0384},
    {"left_knee", 1, 0.0435, -0.3865, 0.0080},
    {"right_knee", 2, -0.0433, -0.3831, -0.0048},
    {"spine2", 3, 0.0045, 0.1380, 0.0268},
    {"left_ankle", 4, -0.0148, -0.4269, -0.0374},
    {"right_ankle", 5, 0.0191, -0.4200, -0.0346},
    {"spine3", 6, -0.0023, 0.0560, 0.0029},
    {"left_foot", 7, 0.0411, -0.0603, 0.1220},
    {"right_foot", 8, -0.0348, -0.0621, 0.1303},
    {"neck", 9, -0.0134, 0.2116, -0.0335},
    {"left_collar", 9, 0.0717, 0.1140, -0.0189},
    {"right_collar", 9, -0.0830, 0.1125, -0.0237},
    {"head", 12, 0.0101, 0.0889, 0.0504},
    {"left_shoulder", 13, 0.1229, 0.0452, -0.0190},
    {"right_shoulder", 14, -0.1132, 0.0469, -0.0085},
    {"left_elbow", 16, 0.2553, -0.0156, -0.0229},
    {"right_elbow", 17, -0.2601, -0.0144, -0.0313},
    {"left_wrist", 18, 0.2657, 0.0127, -0.0073},
    {"right_wrist", 19, -0.2691, 0.0068, -0.0060},
    {"left_hand", 20, 0.0867, -0.0106, -0.0156},
    {"right_hand", 21, -0.0888, -0.0087, -0.0101},
};

}  // namespace

Mat3 rot6d_to_matrix(const Rotation6D& rot) { return to_matrix(gram_schmidt(rot.r.data())); }

Rotation6D matrix_to_rot6d(const Mat3& m) {
  if (!m.allFinite()) throw DataError("rotation matrix has non-finite entries");
  const double n0 = m.col(0).norm();
  const double n1 = m.col(1).norm();
  const double d = m.col(0).dot(m.col(1));
  if (std::abs(n0 - 1.0) > kOrthonormalTol || std::abs(n1 - 1.0) > kOrthonormalTol || std::abs(d) > kOrthonormalTol)
    throw DataError(fmt::format("matrix is not orthonormal (column norms {}, {}; dot {})", n0, n1, d));
  Rotation6D out;
  for (int k = 0; k < 3; ++k) {
    out.r[k] = m(k, 0);
    out.r[3 + k] = m(k, 1);
  }
  return out;
}

Mat3 axis_angle(const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

Skeleton::Skeleton(std::vector<std::string> names, std::array<int, kJointCount> parents,
                   std::array<Vec3, kJointCount> rest_offsets)
    : names_(std::move(names)), parents_(parents), offsets_(rest_offsets) {
  validate();
}

void Skeleton::validate() const {
  if (names_.size() != kJointCount) throw DataError(fmt::format("skeleton must have {} joints", kJointCount));
  if (parents_[0] != kRootParent) throw DataError("joint 0 must be the root (parent -1)");
  for (int j = 0; j < kJointCount; ++j) {
    if (!offsets_[j].allFinite()) throw DataError(fmt::format("joint {} has a non-finite rest offset", j));
    if (j == 0) continue;
    if (parents_[j] < 0 || parents_[j] >= j)
      throw DataError(fmt::format("joint {} has parent {}; parents must precede children", j, parents_[j]));
    if (!(offsets_[j].norm() > 0.0)) throw DataError(fmt::format("joint {} has a zero-length bone", j));
  }
}

const Skeleton& Skeleton::canonical() {
  static const Skeleton skeleton = [] {
    std::vector<std::string> names;
    std::array<int, kJointCount> parents{};
    std::array<Vec3, kJointCount> offsets{};
    for (int j = 0; j < kJointCount; ++j) {
      names.emplace_back(kCanonical[j].name);
      parents[j] = kCanonical[j].parent;
      offsets[j] = Vec3(kCanonical[j].x, kCanonical[j].y, kCanonical[j].z);
    }
    return Skeleton(std::move(names), parents, offsets);
  }();
  return skeleton;
}

Skeleton Skeleton::parse(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  bool saw_version = false;
  std::vector<std::string> names(kJointCount);
  std::array<int, kJointCount> parents{};
  std::array<Vec3, kJointCount> offsets{};
  std::array<bool, kJointCount> seen{};
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    if (!saw_version) {
      std::string tag;
      int version = 0;
      ls >> tag >> version;
      if (tag != "version" || version != 1)
        throw DataError(fmt::format("skeleton line {}: expected 'version 1' header", line_no));
      saw_version = true;
      continue;
    }
    int index = -1, parent = 0;
    std::string name;
    double x, y, z;
    if (!(ls >> index >> name >> parent >> x >> y >> z))
      throw DataError(fmt::format("skeleton line {}: expected 'index name parent x y z'", line_no));
    if (index < 0 || index >= kJointCount || seen[index])
      throw DataError(fmt::format("skeleton line {}: invalid or duplicate joint index {}", line_no, index));
    seen[index] = true;
    names[index] = name;
    parents[index] = parent;
    offsets[index] = Vec3(x, y, z);
  }
  for (int j = 0; j < kJointCount; ++j)
    if (!seen[j]) throw DataError(fmt::format("skeleton file is missing joint {}", j));
  return Skeleton(std::move(names), parents, offsets);
}

Skeleton Skeleton::load(const std::filesystem::path& path) { return parse(read_text_file(path)); }

std::string Skeleton::serialize() const {
  std::string out = "# lm2d skeleton definition\nversion 1\n# index name parent x y z (meters)\n";
  for (int j = 0; j < kJointCount; ++j)
    out += fmt::format("{} {} {} {} {} {}\n", j, names_[j], parents_[j], offsets_[j].x(), offsets_[j].y(),
                       offsets_[j].z());
  return out;
}

PoseVector PoseVector::decode(std::span<const double> values) {
  if (values.size() != kPoseDim)
    throw DataError(fmt::format("pose vector must have {} values, got {}", kPoseDim, values.size()));
  PoseVector p;
  p.root_translation = Vec3(values[0], values[1], values[2]);
  for (int j = 0; j < kJointCount; ++j)
    for (int k = 0; k < kRotationDim; ++k) p.joint_rotations[j].r[k] = values[3 + kRotationDim * j + k];
  return p;
}

std::array<double, kPoseDim> PoseVector::encode() const {
  std::array<double, kPoseDim> out{};
  for (int k = 0; k < 3; ++k) out[k] = root_translation[k];
  for (int j = 0; j < kJointCount; ++j)
    for (int k = 0; k < kRotationDim; ++k) out[3 + kRotationDim * j + k] = joint_rotations[j].r[k];
  return out;
}

JointPositions forward_kinematics(const Skeleton& skeleton, std::span<const double> pose) {
  if (pose.size() != kPoseDim) throw DataError("forward_kinematics: pose must have 147 values");
  std::array<Mat3, kJointCount> global;
  JointPositions pos;
  for (int j = 0; j < kJointCount; ++j) {
    const Mat3 local = to_matrix(gram_schmidt(pose.data() + 3 + kRotationDim * j, j));
    const int p = skeleton.parent(j);
    if (p < 0) {
      global[j] = local;
      pos.row(j) = Vec3(pose[0], pose[1], pose[2]).transpose();
    } else {
      global[j] = global[p] * local;
      pos.row(j) = pos.row(p) + (global[p] * skeleton.rest_offset(j)).transpose();
    }
  }
  return pos;
}

void forward_kinematics_vjp(const Skeleton& skeleton, std::span<const double> pose,
                            std::span<const double> grad_positions, std::span<double> grad_pose) {
  if (pose.size() != kPoseDim || grad_positions.size() != kPositionDim || grad_pose.size() != kPoseDim)
    throw DataError("forward_kinematics_vjp: size mismatch");
  std::array<GramSchmidt, kJointCount> gs;
  std::array<Mat3, kJointCount> local, global;
  for (int j = 0; j < kJointCount; ++j) {
    gs[j] = gram_schmidt(pose.data() + 3 + kRotationDim * j, j);
    local[j] = to_matrix(gs[j]);
    const int p = skeleton.parent(j);
    global[j] = p < 0 ? local[j] : Mat3(global[p] * local[j]);
  }
  std::array<Vec3, kJointCount> gpos;
  std::array<Mat3, kJointCount> gglobal;
  for (int j = 0; j < kJointCount; ++j) {
    gpos[j] = Vec3(grad_positions[3 * j], grad_positions[3 * j + 1], grad_positions[3 * j + 2]);
    gglobal[j].setZero();
  }
  // Children have larger indices than parents, so a reverse sweep sees every
  // child before its parent.
  for (int j = kJointCount - 1; j >= 0; --j) {
    const int p = skeleton.parent(j);
    Mat3 glocal;
    if (p < 0) {
      for (int k = 0; k < 3; ++k) grad_pose[k] += gpos[j][k];
      glocal = gglobal[j];
    } else {
      // pos_j = pos_p + G_p * offset_j ; G_j = G_p * R_j
      gpos[p] += gpos[j];
      gglobal[p] += gpos[j] * skeleton.rest_offset(j).transpose();
      gglobal[p] += gglobal[j] * local[j].transpose();
      glocal = global[p].transpose() * gglobal[j];
    }
    gram_schmidt_vjp(gs[j], glocal, grad_pose.data() + 3 + kRotationDim * j);
  }
}

void canonicalize_pose(std::span<double> pose) {
  if (pose.size() != kPoseDim) throw DataError("canonicalize_pose: pose must have 147 values");
  for (int j = 0; j < kJointCount; ++j) {
    double* r = pose.data() + 3 + kRotationDim * j;
    const GramSchmidt g = gram_schmidt(r, j);
    for (int k = 0; k < 3; ++k) {
      r[k] = g.b1[k];
      r[3 + k] = g.b2[k];
    }
  }
}

void MotionSequence::validate() const {
  if (frames.rows() < 1) throw DataError("motion '" + clip_id + "' has no frames");
  if (!(fps > 0.0f) || !std::isfinite(fps)) throw DataError("motion '" + clip_id + "' has invalid fps");
  if (!frames.allFinite()) throw DataError("motion '" + clip_id + "' contains non-finite values");
  std::array<double, kPoseDim> row;
  for (Eigen::Index i = 0; i < frames.rows(); ++i) {
    for (int k = 0; k < kPoseDim; ++k) row[k] = frames(i, k);
    for (int j = 0; j < kJointCount; ++j) gram_schmidt(row.data() + 3 + kRotationDim * j, j);
  }
}

MotionSequence MotionSequence::from_matrix(const Eigen::MatrixXd& values, float fps, std::string clip_id) {
  if (values.cols() != kPoseDim)
    throw DataError(fmt::format("motion matrix must have {} columns, got {}", kPoseDim, values.cols()));
  MotionSequence m;
  m.fps = fps;
  m.clip_id = std::move(clip_id);
  m.frames.resize(values.rows(), kPoseDim);
  std::array<double, kPoseDim> row;
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    for (int k = 0; k < kPoseDim; ++k) row[k] = values(i, k);
    canonicalize_pose(row);
    for (int k = 0; k < kPoseDim; ++k) m.frames(i, k) = static_cast<float>(row[k]);
  }
  return m;
}

Eigen::MatrixXd motion_positions(const Skeleton& skeleton, const Eigen::MatrixXd& poses) {
  if (poses.cols() != kPoseDim) throw DataError("motion_positions: expected 147 columns");
  Eigen::MatrixXd out(poses.rows(), kPositionDim);
  std::array<double, kPoseDim> row;
  for (Eigen::Index i = 0; i < poses.rows(); ++i) {
    for (int k = 0; k < kPoseDim; ++k) row[k] = poses(i, k);
    const JointPositions p = forward_kinematics(skeleton, row);
    for (int j = 0; j < kJointCount; ++j)
      for (int k = 0; k < 3; ++k) out(i, 3 * j + k) = p(j, k);
  }
  return out;
}

}  // namespace lm2d

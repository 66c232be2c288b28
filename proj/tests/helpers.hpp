#pragma once

#include <Eigen/Core>
#include <atomic>
#include <filesystem>
#include <random>
#include <string>

#include "lm2d/network.hpp"
#include "lm2d/skeleton.hpp"

namespace lm2d::test {

inline Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> a(-M_PI, M_PI);
  Mat3 r = Mat3::Identity();
  for (int k = 0; k < 3; ++k) r = r * axis_angle(Vec3(n(rng), n(rng), n(rng)).normalized(), a(rng));
  return r;
}

inline std::array<double, kPoseDim> random_pose(std::mt19937_64& rng, double root_scale = 1.0) {
  std::normal_distribution<double> n(0.0, 1.0);
  PoseVector p;
  p.root_translation = root_scale * Vec3(n(rng), n(rng), n(rng));
  for (auto& r : p.joint_rotations) r = matrix_to_rot6d(random_rotation(rng));
  return p.encode();
}

inline Eigen::MatrixXd identity_motion(int frames) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(frames, kPoseDim);
  const auto rest = PoseVector{}.encode();
  for (int i = 0; i < frames; ++i)
    for (int k = 0; k < kPoseDim; ++k) m(i, k) = rest[k];
  return m;
}

/// Joint 1 hangs off the root at (1,0,0), joint 2 off joint 1 at (1,0,0); the
/// remaining joints are short stubs on the root.
inline Skeleton two_bone_chain() {
  std::vector<std::string> names;
  std::array<int, kJointCount> parents{};
  std::array<Vec3, kJointCount> offsets{};
  for (int j = 0; j < kJointCount; ++j) {
    names.push_back("j" + std::to_string(j));
    parents[j] = j == 0 ? -1 : (j == 2 ? 1 : 0);
    offsets[j] = j == 0 ? Vec3::Zero() : (j <= 2 ? Vec3(1, 0, 0) : Vec3(0, 0, 0.01 * j));
  }
  return Skeleton(names, parents, offsets);
}

inline NetworkConfig tiny_network(int cond_dim = 0, bool attention = true) {
  NetworkConfig c;
  c.feature_dim = kPoseDim;
  c.cond_dim = cond_dim;
  c.width = 8;
  c.blocks = 1;
  c.heads = 2;
  c.ff_mult = 1;
  c.attention = attention;
  c.window_frames = 8;
  return c;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("lm2d_" + tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

}  // namespace lm2d::test

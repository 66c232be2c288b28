#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <map>
#include <string>

#include "lm2d/network.hpp"

namespace lm2d {

// Layout: "LM2D" | u32 version | u32 header length | header text |
//         u64 parameter count | count x f32 (little-endian).
// The header is canonical key-value text ("key=value\n", keys sorted) and
// always carries `kind`; diffusion and consistency checkpoints also carry the
// model.* architecture fields.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string kind;  // diffusion | consistency | encoder
  std::map<std::string, std::string> header;
  NetworkConfig network;  // unused for kind=encoder
  Eigen::VectorXd parameters;

  double header_double(const std::string& key) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& context = "checkpoint");
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Throws DataError naming the differing field when the stored architecture
/// does not match `expected`.
void require_architecture(const Checkpoint& ckpt, const NetworkConfig& expected);

}  // namespace lm2d

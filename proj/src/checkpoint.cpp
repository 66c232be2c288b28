#include "lm2d/checkpoint.hpp"

#include <fmt/format.h>

#include "lm2d/error.hpp"
#include "lm2d/util.hpp"

namespace lm2d {

double Checkpoint::header_double(const std::string& key) const {
  auto it = header.find(key);
  if (it == header.end()) throw DataError("checkpoint header is missing " + key);
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw DataError("checkpoint header field is not numeric: " + key + "=" + it->second);
  }
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::map<std::string, std::string> fields = ckpt.header;
  if (ckpt.kind != "encoder")
    for (const auto& [k, v] : ckpt.network.to_fields()) fields[k] = v;
  fields["kind"] = ckpt.kind;
  std::string text;
  for (const auto& [k, v] : fields) text += k + "=" + v + "\n";

  ByteWriter w;
  w.raw("LM2D");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.raw(text);
  w.u64(static_cast<std::uint64_t>(ckpt.parameters.size()));
  for (Eigen::Index i = 0; i < ckpt.parameters.size(); ++i) w.f32(static_cast<float>(ckpt.parameters[i]));
  return w.bytes();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& context) {
  ByteReader r(bytes, context);
  if (r.raw(4) != "LM2D") throw ParseError(context + ": bad magic (expected LM2D)", 0);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw ParseError(fmt::format("{}: unsupported checkpoint version {}", context, version), 4);
  const std::uint32_t len = r.u32();
  const std::string text = r.raw(len);
  Checkpoint ckpt;
  std::size_t start = 0;
  while (start < text.size()) {
    const std::size_t end = text.find('\n', start);
    const std::string line = text.substr(start, end == std::string::npos ? std::string::npos : end - start);
    start = end == std::string::npos ? text.size() : end + 1;
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) r.fail("malformed header line '" + line + "'");
    ckpt.header[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto kind = ckpt.header.find("kind");
  if (kind == ckpt.header.end()) r.fail("header has no kind field");
  ckpt.kind = kind->second;
  if (ckpt.kind != "encoder") {
    ckpt.network = NetworkConfig::from_fields(ckpt.header);
    for (const auto& [k, v] : ckpt.network.to_fields()) ckpt.header.erase(k);
  }
  ckpt.header.erase("kind");
  const std::uint64_t count = r.u64();
  if (r.remaining() != count * sizeof(float))
    r.fail(fmt::format("parameter block holds {} bytes, expected {}", r.remaining(), count * sizeof(float)));
  ckpt.parameters.resize(static_cast<Eigen::Index>(count));
  for (std::uint64_t i = 0; i < count; ++i) ckpt.parameters[static_cast<Eigen::Index>(i)] = r.f32();
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path), path.string());
}

void require_architecture(const Checkpoint& ckpt, const NetworkConfig& expected) {
  const auto have = ckpt.network.to_fields();
  for (const auto& [k, v] : expected.to_fields()) {
    const auto it = have.find(k);
    if (it == have.end() || it->second != v)
      throw DataError(fmt::format("checkpoint architecture mismatch: {}={} but configuration expects {}", k,
                                  it == have.end() ? "<missing>" : it->second, v));
  }
}

}  // namespace lm2d

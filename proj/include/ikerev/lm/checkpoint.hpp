#pragma once

// Checkpoint file layout (little-endian):
//   "IKRVCKPT" | u32 format_version | u64 header_bytes | header JSON
//   then for every parameter block: u32 name_len | name | u32 ndim | u64 dims[ndim] | f32 data
// The header carries the LMConfig and training metadata.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ikerev/error.hpp"
#include "ikerev/lm/config.hpp"
#include "ikerev/lm/transformer.hpp"
#include "ikerev/seed.hpp"

namespace ikerev::lm {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'I', 'K', 'R', 'V', 'C', 'K', 'P', 'T'};

struct TrainingMetadata {
  std::int64_t steps = 0;
  std::uint64_t seed = 0;
  double final_loss = 0.0;

  friend bool operator==(const TrainingMetadata&, const TrainingMetadata&) = default;
};

struct Checkpoint {
  LMConfig config;
  std::vector<float> parameters;
  TrainingMetadata metadata;

  std::uint64_t hash() const {
    return fnv1a64_bytes(parameters.data(), parameters.size() * sizeof(float));
  }

  template <typename T>
  Transformer<T> model() const {
    return Transformer<T>(config, std::vector<T>(parameters.begin(), parameters.end()));
  }

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

template <typename T>
Checkpoint make_checkpoint(const Transformer<T>& model, TrainingMetadata metadata) {
  const auto params = model.parameters();
  return {model.config(), std::vector<float>(params.begin(), params.end()), metadata};
}

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

template <typename U>
void write_pod(std::ostream& out, const U& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(U));
}

template <typename U>
U read_pod(std::istream& in, const std::string& path) {
  U value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(U));
  if (!in) fail_runtime("truncated checkpoint ", path);
  return value;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const ParamLayout layout(ckpt.config);
  require(ckpt.parameters.size() == layout.total(), "checkpoint: parameter count mismatch");
  nlohmann::ordered_json header;
  header["format_version"] = kCheckpointFormatVersion;
  header["config"] = to_json(ckpt.config);
  header["metadata"] = {{"steps", ckpt.metadata.steps},
                        {"seed", ckpt.metadata.seed},
                        {"final_loss", ckpt.metadata.final_loss}};
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) fail_runtime("cannot write checkpoint ", path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_pod(out, kCheckpointFormatVersion);
  detail::write_pod(out, static_cast<std::uint64_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& block : layout.blocks()) {
    detail::write_pod(out, static_cast<std::uint32_t>(block.name.size()));
    out.write(block.name.data(), static_cast<std::streamsize>(block.name.size()));
    detail::write_pod(out, static_cast<std::uint32_t>(block.shape.size()));
    for (auto dim : block.shape) detail::write_pod(out, static_cast<std::uint64_t>(dim));
    out.write(reinterpret_cast<const char*>(ckpt.parameters.data() + block.offset),
              static_cast<std::streamsize>(block.size() * sizeof(float)));
  }
  if (!out) fail_runtime("I/O error writing checkpoint ", path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_validation("cannot open checkpoint ", path);
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    fail_runtime(path, " is not a checkpoint file");
  }
  const auto version = detail::read_pod<std::uint32_t>(in, path);
  if (version != kCheckpointFormatVersion) {
    fail_runtime("checkpoint ", path, " has unsupported format version ", version);
  }
  const auto header_bytes = detail::read_pod<std::uint64_t>(in, path);
  std::string text(header_bytes, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_bytes));
  if (!in) fail_runtime("truncated checkpoint header in ", path);
  const auto header = nlohmann::json::parse(text);

  Checkpoint ckpt;
  ckpt.config = lm_config_from_json(header.at("config"));
  ckpt.config.validate();
  const auto& meta = header.at("metadata");
  ckpt.metadata.steps = meta.at("steps").get<std::int64_t>();
  ckpt.metadata.seed = meta.at("seed").get<std::uint64_t>();
  ckpt.metadata.final_loss = meta.at("final_loss").get<double>();

  const ParamLayout layout(ckpt.config);
  ckpt.parameters.assign(layout.total(), 0.0f);
  for (const auto& block : layout.blocks()) {
    const auto name_len = detail::read_pod<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (name != block.name) {
      fail_runtime("checkpoint ", path, ": expected block '", block.name, "', found '", name, "'");
    }
    const auto ndim = detail::read_pod<std::uint32_t>(in, path);
    if (ndim != block.shape.size()) fail_runtime("checkpoint ", path, ": bad rank for ", name);
    for (auto dim : block.shape) {
      if (detail::read_pod<std::uint64_t>(in, path) != dim) {
        fail_runtime("checkpoint ", path, ": shape mismatch for ", name);
      }
    }
    in.read(reinterpret_cast<char*>(ckpt.parameters.data() + block.offset),
            static_cast<std::streamsize>(block.size() * sizeof(float)));
    if (!in) fail_runtime("truncated checkpoint data in ", path);
  }
  return ckpt;
}

}  // namespace ikerev::lm

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fsvfm/autograd.hpp"

namespace fsvfm {

// Named-tensor container:
//   "FSVC" | u32le version | u64le meta length | meta (JSON object of
//   strings) | u32le tensor count | per tensor: u32le name length, name,
//   u32le rows, u32le cols, rows*cols little-endian doubles (row-major).
struct TensorRecord {
  std::string name;
  Matrix value;
};

struct CheckpointFile {
  std::map<std::string, std::string> meta;
  std::vector<TensorRecord> tensors;

  const Matrix* find(const std::string& name) const;
  const Matrix& at(const std::string& name) const;
  const std::string& meta_at(const std::string& key) const;
  void put(std::string name, Matrix value);
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& ckpt);
CheckpointFile decode_checkpoint(std::span<const std::uint8_t> bytes);
// Writes through a temporary file and renames it into place.
void write_checkpoint_file(const std::filesystem::path& path, const CheckpointFile& ckpt);
CheckpointFile read_checkpoint_file(const std::filesystem::path& path);

}  // namespace fsvfm

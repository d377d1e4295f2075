#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "defstereo/image.hpp"
#include "defstereo/model.hpp"
#include "defstereo/train.hpp"

namespace defstereo {

class CheckpointError : public IoError {
 public:
  using IoError::IoError;
};

/// Raised when a checkpoint was written for a different architecture; carries
/// both configuration echoes.
class CheckpointMismatch : public CheckpointError {
 public:
  CheckpointMismatch(const std::string& what, std::string expected, std::string found)
      : CheckpointError(what), expected_echo(std::move(expected)), found_echo(std::move(found)) {}
  std::string expected_echo, found_echo;
};

enum class DType : std::uint8_t { F32 = 0, U8 = 1, I64 = 2 };

struct CheckpointEntry {
  DType dtype = DType::F32;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> bytes;  // little-endian payload

  std::size_t numel() const;
  std::vector<float> floats() const;
  std::string text() const;
  std::int64_t int64() const;
  bool operator==(const CheckpointEntry&) const = default;
};

/// "DFSN", u32 version, u32 entry count, then per entry: u32 name length, name,
/// u8 dtype, u32 rank, u32 dims, little-endian data. Entries are written in name
/// order. Parameters use their own names; batch-norm buffers are under "buf/",
/// optimizer state under "opt/" and configuration under "meta/".
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  std::map<std::string, CheckpointEntry> entries;

  void put_floats(const std::string& name, const Dims& dims, std::span<const float> values);
  void put_text(const std::string& name, const std::string& text);
  void put_int(const std::string& name, std::int64_t v);
  bool has(const std::string& name) const { return entries.count(name) > 0; }
  const CheckpointEntry& at(const std::string& name) const;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
  bool operator==(const Checkpoint&) const = default;
};

/// Parameters, buffers, optimizer state, step and config echoes.
Checkpoint make_checkpoint(const DepthModel<float>& model, const AdamState<float>* adam,
                           long long step, const TrainConfig* train_cfg);

/// Copies parameters and buffers into `model` (and optimizer state into `adam`
/// when given). Throws CheckpointMismatch when the stored model echo differs,
/// CheckpointError on unknown names, missing names or shape mismatches.
/// Returns the stored step.
long long restore_checkpoint(const Checkpoint& ck, DepthModel<float>& model,
                             AdamState<float>* adam = nullptr);

/// Model configuration recorded in a checkpoint.
ModelConfig checkpoint_model_config(const Checkpoint& ck);

/// Number of trainable scalars stored (parameter entries only).
std::size_t checkpoint_parameter_count(const Checkpoint& ck);

}  // namespace defstereo

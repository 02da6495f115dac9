#pragma once

#include "snagg/config.hpp"
#include "snagg/training.hpp"

#include <filesystem>
#include <string>

namespace snagg {

/// On-disk layout:
///   "SNAGG001"
///   u64 LE byte length of the manifest
///   manifest: UTF-8 lines. First `key=value` metadata (step, seed, lr and
///     the model.* keys of the spec), then one line per tensor:
///       tensor <name> f64 <d0xd1x...> <offset> <nbytes>
///     Offsets count from the first payload byte. Velocities are stored
///     under "velocity/<name>".
///   payloads: little-endian float64, in manifest order.
struct Checkpoint {
  ArchitectureSpec spec;
  TrainState state;
  /// Metadata lines other than the spec and state keys (e.g. augment.*).
  KeyValues extra;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source = "<checkpoint>");

void save_checkpoint(const std::filesystem::path& file, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& file);

/// Parameter tensors only, concatenated in name order, for byte comparisons.
std::string parameter_payload(const ParamSet& params);

/// Copies every source tensor whose name and shape match a target tensor.
/// Returns the number of tensors copied.
std::size_t load_compatible(ParamSet& target, const ParamSet& source);

}  // namespace snagg

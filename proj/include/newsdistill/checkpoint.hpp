#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "newsdistill/config.hpp"
#include "newsdistill/tasks.hpp"

namespace newsdistill {

// Binary layout, all integers and floats little-endian:
//   "NDCK" u32 version
//   string config text (the RunConfig dump)
//   u64 block K, u64 block N
//   u32 parameter count, then per parameter: string name, u32 rank, u64 dims[rank], f64 values
//   Adam: u64 step, f64 lr beta1 beta2 eps, u32 count, per entry: string name, f64 m[], f64 v[]
//   string data rng, string dropout rng, string phase-start rng
//   i32 phase, u64 epoch, u64 global step, f64 best metric, u64 best epoch, i32 best phase
//   u32 digest count, u64 digests
// Strings are u32 length + bytes.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string config_text;
  tasks::TrainState state;

  RunConfig config() const { return RunConfig::parse(config_text); }
};

std::string encode_checkpoint(const std::string& config_text, const tasks::TrainState& state);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const std::string& config_text,
                     const tasks::TrainState& state);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace newsdistill

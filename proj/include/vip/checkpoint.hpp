#pragma once

#include "vip/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace vip {

struct Checkpoint {
  EpsilonNet net;
  std::uint64_t rng_seed = 0;
};

// Single JSON document:
//   {"format_version":1,
//    "arch":{"input_dim","time_embed_dim","hidden_width","n_blocks","block_active":[bool]},
//    "params":[{"name","shape":[int],"data":[float]}],
//    "rng_seed":int}
// Floats carry 17 significant digits so a save/load cycle is bit exact.
std::string checkpoint_json(const EpsilonNet& net, std::uint64_t rng_seed);
Checkpoint parse_checkpoint(const std::string& text);

// Writes the checkpoint and returns the SHA-256 of the written bytes.
std::string save_checkpoint(const EpsilonNet& net, std::uint64_t rng_seed, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace vip

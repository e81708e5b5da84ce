#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "cmcr/projector.hpp"

namespace cmcr {

// CMCR-CKPT v1: 8-byte magic "CMCRCKP1", u32 LE header length, JSON header
// (dims, final_relu, step, config_hash, tensor table), then every tensor of
// `checkpoint_tensors` in order as 32-bit LE floats.
inline constexpr char kCkptMagic[8] = {'C', 'M', 'C', 'R', 'C', 'K', 'P', '1'};

struct Checkpoint {
  ProjectorParams params;
  std::uint64_t step = 0;
  std::string config_hash;
};

void save_checkpoint(const std::filesystem::path& path, const ProjectorParams& params, std::uint64_t step,
                     const std::string& config_hash);

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cmcr

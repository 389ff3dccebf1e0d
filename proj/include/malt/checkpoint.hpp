#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "malt/config.hpp"
#include "malt/param_store.hpp"

namespace malt {

// Layout (little-endian):
//   "MALT" u32 version
//   string config-json          (u32 length + bytes)
//   u64 rng_state  u64 epoch  u64 adam_step
//   u32 record_count, then per record:
//     string name  u32 rank  u64 dims[rank]  f64 payload[prod(dims)]
// Records appear in parameter-name order as value, "adam_m/", "adam_v/".
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    MaltConfig config;
    ParamStore params;
    std::uint64_t rng_state = 0;
    std::uint64_t epoch = 0;
    std::uint64_t adam_step = 0;
};

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Copies values and Adam moments into `target`; every name and shape must
// match exactly and the stored config must describe the same model.
void restore_params(const Checkpoint& ckpt, const MaltConfig& expected, ParamStore& target);

}  // namespace malt

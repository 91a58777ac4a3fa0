#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>

#include <json.hpp>

#include "gaterace/policy.hpp"
#include "gaterace/trainer.hpp"

namespace gaterace {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  std::uint64_t config_hash = 0;
  nlohmann::json run_config;
  PolicyConfig policy;
  TrainerSnapshot trainer;
};

// FNV-1a over the canonical (key-sorted, compact) JSON text.
std::uint64_t config_hash(const nlohmann::json& config);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Rebuilds the policy stored in a checkpoint.
Policy policy_from_checkpoint(const Checkpoint& ckpt);

}  // namespace gaterace

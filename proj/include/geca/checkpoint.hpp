#pragma once

// Binary checkpoint: "GECA", u32 version, u32-length-prefixed JSON header,
// u32 tensor count, then per tensor: u32 name length, name, u32 rank, u64
// extents, u32 dtype (0 = f32), raw values. Little-endian throughout.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "geca/diffusion.hpp"

namespace geca {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kDtypeF32 = 0;

struct Checkpoint {
  nlohmann::json header;
  std::vector<std::pair<std::string, TensorF>> tensors;

  const TensorF& find(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws CorruptArtifact on bad magic, unknown version, truncation or
/// trailing bytes.
Checkpoint read_checkpoint(const std::filesystem::path& path);

nlohmann::json to_json(const ThetaConfig& config);
ThetaConfig theta_config_from_json(const nlohmann::json& j);

/// Model weights, Adam moments, step counter and the generator state, so a
/// resumed run continues exactly where it stopped. `extra` lands under
/// header["run"].
Checkpoint pack(const TrainState<float>& state, const Rng* rng, const nlohmann::json& extra = {});
TrainState<float> unpack(const Checkpoint& ckpt, Rng* rng = nullptr);

void save_train_state(const std::filesystem::path& path, const TrainState<float>& state, const Rng* rng,
                      const nlohmann::json& extra = {});
TrainState<float> load_train_state(const std::filesystem::path& path, Rng* rng = nullptr,
                                   nlohmann::json* header = nullptr);

}  // namespace geca

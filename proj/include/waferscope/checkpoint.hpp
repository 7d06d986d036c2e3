#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "waferscope/augmentation.hpp"
#include "waferscope/config.hpp"
#include "waferscope/network.hpp"
#include "waferscope/wdm.hpp"

namespace waferscope {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Sscn model;
  std::vector<ClassLabel> classes;
  std::optional<NoiseDist> noise;  // defect-count distribution of the training Normals
  Json provenance = Json::object();
};

// Layout is described in docs/checkpoint_format.md. Doubles are stored
// little-endian IEEE-754 regardless of host order.
std::string checkpoint_bytes(const Checkpoint& ck);
Checkpoint checkpoint_from_bytes(const std::string& bytes);  // DataError on any malformation

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace waferscope

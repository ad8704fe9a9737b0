#pragma once

#include <filesystem>
#include <vector>

#include <json.hpp>

namespace usersim {

// On-disk layout shared by policy and discriminator checkpoints: one line of
// compact JSON header terminated by '\n', followed by `n_weights` IEEE-754
// doubles in little-endian byte order. Round trips are bit-exact.
struct Checkpoint {
  nlohmann::ordered_json header;
  std::vector<double> weights;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace usersim

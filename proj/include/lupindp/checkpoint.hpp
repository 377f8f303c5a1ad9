#pragma once

// Text checkpoints: model config echo plus every named parameter block at
// 17 significant digits, so a save/load round trip is bitwise exact.

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "lupindp/model.hpp"
#include "lupindp/training.hpp"

namespace lupindp {

struct Checkpoint {
  ModelParams params;
  TrainingMode mode = TrainingMode::Lupi;
  std::uint64_t seed = 0;
  int epochs = 0;
};

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(std::ostream& os, const Checkpoint& ckpt);
// Parses the whole stream before returning; nothing is half-loaded on error.
Checkpoint load_checkpoint(std::istream& is);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lupindp

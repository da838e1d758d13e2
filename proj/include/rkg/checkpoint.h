#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rkg/config.h"
#include "rkg/model.h"
#include "rkg/training.h"

namespace rkg {

inline constexpr int kCheckpointVersion = 1;

// File layout: a magic line, the header length in bytes on its own line, a
// JSON header, then raw little-endian arrays in header order.
struct Checkpoint {
  RunConfig config;
  std::size_t num_entities = 0;
  std::size_t num_relations = 0;       // including reciprocals
  std::size_t num_base_relations = 0;
  std::vector<std::string> relation_names;  // base relations
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  std::optional<double> best_valid_mrr;
  std::int64_t best_epoch = -1;
  std::string rng_state;

  // Entity table holds node states in refactor mode; relations hold psi.
  ModelParams params;
  std::optional<OptimizerState> optimizer;

  // Refactor mode.
  std::optional<Matrix> features;
  std::optional<Matrix> cache_accumulator;
  std::int64_t layer_counter = 0;
  std::int64_t batches_since_clear = 0;
};

// f32 payloads lose the bitwise-resume guarantee.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path, bool f32 = false);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::string read_checkpoint_header(const std::filesystem::path& path);

std::string rng_to_string(const Rng& rng);
Rng rng_from_string(const std::string& state);

}  // namespace rkg

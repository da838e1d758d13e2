#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rkg/eval.h"
#include "rkg/refactor.h"
#include "rkg/training.h"

namespace rkg {

enum class RunMode { FM, Refactor };

std::string_view mode_name(RunMode m);

// Everything a `train` run needs besides paths. File form is flat key=value,
// one pair per line, '#' starts a comment.
struct RunConfig {
  RunMode mode = RunMode::FM;
  TrainConfig train;
  RefactorConfig refactor;
  bool reciprocals = true;
  bool drop_self_loops = false;  // ReFactor only; otherwise self-loops are rejected
  int eval_every = 1;            // epochs between validation passes
  Protocol eval_protocol = Protocol::Full;
  std::int64_t inductive_rounds = 3;

  void validate() const;
};

// Parses "random:<seed>" or "file:<path>" into the feature fields.
void apply_feature_spec(RefactorConfig& cfg, std::string_view spec);
std::string feature_spec(const RefactorConfig& cfg);

RunConfig parse_run_config(std::string_view text, const std::string& origin = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

// Canonical key=value pairs covering every field; parse_run_config of
// to_text() reproduces the configuration exactly.
std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& cfg);
std::string to_text(const RunConfig& cfg);

}  // namespace rkg

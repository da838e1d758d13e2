#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>

#include "rkg/eval.h"

namespace rkg::cli {

enum ExitCode : int {
  kOk = 0,
  kOracleFailure = 1,
  kConfigError = 2,
  kDataError = 3,
  kCompatibilityError = 4,
};

struct TrainArgs {
  std::filesystem::path config;
  std::filesystem::path data;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> features;
  bool f32 = false;
  // Continue from a checkpoint written by an earlier run; its config echo
  // replaces --config.
  std::optional<std::filesystem::path> resume;
};

struct EvalArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  std::optional<std::filesystem::path> out;
  Protocol protocol = Protocol::Full;
  std::string split = "test";
  std::uint64_t seed = 0;
};

struct InductiveArgs {
  std::filesystem::path checkpoint;
  std::optional<std::filesystem::path> data;  // original graph, checked against the checkpoint
  std::filesystem::path ind;
  std::optional<std::filesystem::path> out;
  std::string features = "random:0";
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> rounds;
  Protocol protocol = Protocol::Full;
};

struct VerifyArgs {
  bool perturb_gradient = false;
  std::uint64_t seed = 0;
};

// Output files of `train` inside the out directory.
inline constexpr const char* kBestCheckpoint = "best.ckpt";
inline constexpr const char* kLastCheckpoint = "last.ckpt";
inline constexpr const char* kLossLog = "loss.tsv";
inline constexpr const char* kEpochLog = "epochs.tsv";
inline constexpr const char* kMetrics = "metrics.json";
inline constexpr const char* kLockFile = ".lock";

int train(const TrainArgs& args, std::ostream& log);
int eval(const EvalArgs& args, std::ostream& out);
int inductive(const InductiveArgs& args, std::ostream& out);
int verify(const VerifyArgs& args, std::ostream& out);
int inspect(const std::filesystem::path& checkpoint, std::ostream& out);

// Runs a command and turns library exceptions into exit codes.
int guarded(const std::function<int()>& command, std::ostream& err);

}  // namespace rkg::cli

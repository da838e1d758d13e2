#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace rkg {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct VerifyOptions {
  // Adds a small offset to one entry of the FM gradient inside the
  // equivalence check; that check must then fail.
  bool perturb_gradient = false;
  std::uint64_t seed = 0;
};

// One full-batch SGD step on DistMult entity embeddings against one
// refactor_layer with alpha = lr / |T| and beta = lr, over random
// self-loop-free graphs.
CheckResult check_layer_equivalence(int graphs, const VerifyOptions& options);

// Analytic gradient of the full objective (both entity terms, relation term,
// N3) against central differences, for every model family.
CheckResult check_gradients(const VerifyOptions& options);

// Vectorized filtered ranking against the brute-force oracle.
CheckResult check_ranking(int queries, const VerifyOptions& options);

std::vector<CheckResult> run_oracle_suite(const VerifyOptions& options);

}  // namespace rkg

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "rkg/graph.h"
#include "rkg/model.h"
#include "rkg/scoring.h"
#include "rkg/training.h"

namespace rkg {

// External memory of node states h. Rows are read from a frozen snapshot
// during a layer and written back with push() once the layer is computed.
class NodeStateCache {
 public:
  NodeStateCache() = default;
  // layers == nullopt means L = infinity: clear() never fires on its own.
  NodeStateCache(Matrix initial, std::optional<std::int64_t> layers);

  const Matrix& states() const { return states_; }
  const Matrix& initial() const { return initial_; }
  const Matrix& accumulator() const { return accumulator_; }
  std::optional<std::int64_t> layers() const { return layers_; }
  std::int64_t layer_counter() const { return layer_counter_; }
  std::int64_t batches_since_clear() const { return batches_since_clear_; }

  void push(std::span<const EntityId> nodes, const Matrix& rows);
  void push(std::span<const EntityId> nodes, const Matrix& rows, const Matrix& accumulator_rows);
  Matrix pull(std::span<const EntityId> nodes) const;
  void clear();

  // Marks the end of one full pass over the graph; clears every L passes.
  // Returns true when the cache was cleared.
  bool end_pass();

  // Restores a serialized cache.
  void restore(Matrix states, Matrix accumulator, std::int64_t layer_counter, std::int64_t batches_since_clear);

 private:
  Matrix initial_;
  Matrix states_;
  Matrix accumulator_;
  std::optional<std::int64_t> layers_;
  std::int64_t layer_counter_ = 0;
  std::int64_t batches_since_clear_ = 0;
};

enum class FeatureSource { Random, File };

struct RefactorConfig {
  std::optional<std::int64_t> layers;  // nullopt = infinity
  std::optional<double> alpha;         // defaults to beta / |triples in scope|
  double beta = 0.1;
  bool include_n_term = true;
  OptimizerKind layer_optimizer = OptimizerKind::SGD;
  double layer_eps = 1e-10;
  // Adds the N3 gradient of each node's own occurrences to the update.
  bool n3_in_layer = false;
  double n3_weight = 0.0;
  FeatureSource feature_source = FeatureSource::Random;
  std::uint64_t feature_seed = 0;
  std::string feature_path;

  void validate() const;
};

enum class Direction { Outgoing, Incoming };

// Outgoing (v, r, w): dGamma(v, r, w)/dh[v], h_w * g(r) for DistMult.
// Incoming (w, r, v): (1 - P(v | w, r)) dGamma(w, r, v)/dh[v].
Vector message(const Scorer& scorer, ConstVec g_r, ConstVec h_w, Direction direction, double p_v_given_wr = 0.0);
Vector aggregate(std::span<const Vector> messages, std::size_t dim);

// Entities and triples a layer sees. Empty `entities` means every entity.
struct LayerScope {
  std::span<const EntityId> entities;
  std::span<const Triple> triples;
};

// n[v] computed directly from its definition, one node at a time.
Vector normalizer(const Scorer& scorer, const Matrix& h, const Matrix& psi, EntityId v, const LayerScope& scope);

struct LayerTerms {
  std::vector<EntityId> nodes;  // every node whose state the layer touches
  Matrix aggregate;             // row i: summed messages into nodes[i]
  Matrix normalizer;            // row i: n[nodes[i]]
  std::vector<int> occurrences; // endpoint count of nodes[i] in the scope triples
};

// All messages and normalizers of one layer, batched over the scope.
LayerTerms layer_terms(const Scorer& scorer, const Matrix& h, const Matrix& psi, const LayerScope& scope);

struct LayerUpdate {
  std::vector<EntityId> nodes;
  Matrix states;
  Matrix accumulator;  // AdaGrad layers only
};

// h[v] + alpha * aggregate - beta * n[v] for every node in scope, read from
// the cache snapshot. Does not modify the cache.
LayerUpdate compute_layer(const Scorer& scorer, const NodeStateCache& cache, const Matrix& psi,
                          const RefactorConfig& cfg, const LayerScope& scope);

// compute_layer followed by push.
LayerUpdate refactor_layer(const Scorer& scorer, NodeStateCache& cache, const Matrix& psi, const RefactorConfig& cfg,
                           const LayerScope& scope);

void reject_self_loops(const KnowledgeGraph& g);

// Layer-wise training of the relation table psi over cached node states.
// Only the object-side softmax is used; reciprocal triples cover subjects.
class RefactorTrainer {
 public:
  RefactorTrainer(TrainConfig tcfg, RefactorConfig rcfg, const KnowledgeGraph& train, Matrix features,
                  Matrix psi);

  // One mini-batch: psi gradient at (h, psi), layer with psi, push, psi update.
  double step(std::span<const Triple> batch);
  // Shuffled pass over the graph; advances the layer counter.
  std::vector<StepRecord> run_epoch();

  const NodeStateCache& cache() const { return cache_; }
  NodeStateCache& cache() { return cache_; }
  const Matrix& psi() const { return psi_; }
  Matrix& psi() { return psi_; }
  const TableState& psi_state() const { return psi_state_; }
  TableState& psi_state() { return psi_state_; }
  Rng& rng() { return rng_; }
  std::int64_t steps_taken() const { return step_; }
  void set_steps_taken(std::int64_t s) { step_ = s; }

  // Node states plus psi as a scoring model.
  ModelParams as_params() const;

 private:
  TrainConfig tcfg_;
  RefactorConfig rcfg_;
  const KnowledgeGraph& train_;
  Scorer scorer_;
  NodeStateCache cache_;
  Matrix psi_;
  TableState psi_state_;
  Rng rng_;
  std::int64_t step_ = 0;
};

// Runs `rounds` passes of layers over an unseen graph starting from X with a
// fixed psi. Batching follows `tcfg` (batch size, sampling, seed).
Matrix inductive_infer(const Matrix& psi, const KnowledgeGraph& graph, const Matrix& features,
                       const TrainConfig& tcfg, const RefactorConfig& rcfg, std::int64_t rounds);

}  // namespace rkg

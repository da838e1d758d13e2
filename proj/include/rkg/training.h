#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "rkg/graph.h"
#include "rkg/model.h"
#include "rkg/scoring.h"

namespace rkg {

enum class OptimizerKind { SGD, AdaGrad };
enum class SoftmaxMode { Full, Sampled };
// Which entity terms enter the loss. Object-only is the usual choice once
// reciprocal triples turn subject queries into object queries.
enum class EntitySides { Both, Object };
enum class LrSchedule { Constant, Polynomial };

struct NegativeSampling {
  int in_batch = 256;
  int global = 1;
};

struct TrainConfig {
  ModelSpec model;
  double learning_rate = 0.1;
  int batch_size = 100;
  int epochs = 1;
  double reg_weight = 0.0;
  double rp_weight = 0.0;
  OptimizerKind optimizer = OptimizerKind::AdaGrad;
  double adagrad_eps = 1e-10;
  std::optional<std::int64_t> forget_interval;
  std::uint64_t seed = 0;
  SoftmaxMode softmax_mode = SoftmaxMode::Full;
  NegativeSampling negatives;
  EntitySides entity_sides = EntitySides::Both;
  bool rp_over_base_relations = false;
  double init_scale = 0.02;
  double clip_norm = 0.0;  // 0 disables clipping
  LrSchedule lr_schedule = LrSchedule::Constant;
  std::int64_t lr_total_steps = 0;
  double lr_power = 1.0;
  double lr_end = 0.0;

  void validate() const;
};

std::string_view optimizer_name(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view name);

struct TableState {
  Matrix accumulator;
  std::int64_t step_count = 0;

  void reset(Eigen::Index rows, Eigen::Index cols);
};

struct OptimizerState {
  TableState entities;
  TableState relations;
  TableState object_entities;
  TableState core;

  static OptimizerState for_params(const ModelParams& params);
};

// Same layout as ModelParams; unused members stay empty.
struct ModelGradient {
  Matrix entities;
  Matrix relations;
  Matrix object_entities;
  Matrix core;

  static ModelGradient zeros_like(const ModelParams& params);
  Matrix& object_table() { return object_entities.size() > 0 ? object_entities : entities; }
  double squared_norm() const;
  void scale(double factor);
};

// score[target] - logsumexp(scores).
double log_softmax_over(std::span<const double> scores, std::size_t target);

struct ObjectiveOptions {
  double rp_weight = 0.0;
  EntitySides entity_sides = EntitySides::Both;
  // When > 0 the relation softmax only covers the block of this many
  // relations that contains the target.
  std::size_t rp_block = 0;
};

struct TripleLogProbs {
  double subject = 0.0;   // log P(s | p, o)
  double object = 0.0;    // log P(o | s, p)
  double relation = 0.0;  // log P(p | s, o)
};

TripleLogProbs triple_log_probs(const ModelParams& params, const Triple& t, std::size_t rp_block = 0);

// -[log P(s|p,o) + log P(o|s,p) + rp_weight * log P(p|s,o)] over all candidates.
double triple_loss(const ModelParams& params, const Triple& t, double rp_weight);
double triple_loss(const ModelParams& params, const Triple& t, const ObjectiveOptions& options);

struct N3Result {
  double value = 0.0;
  std::vector<Vector> grad;
};

// Sum of |x|^3 over all rows; gradient 3 sign(x) x^2.
N3Result n3_penalty(std::span<const Vector> rows);
double n3_value(ConstVec x);
void n3_accumulate_grad(ConstVec x, double weight, MutVec grad);

void sgd_step(Matrix& param, const Matrix& grad, double lr);
void adagrad_step(Matrix& param, const Matrix& grad, double lr, TableState& state, double eps);

// Entities scored in sampled-softmax mode. Every target of the batch is kept;
// other batch endpoints fill up to `in_batch`, then `global` uniform draws.
std::vector<EntityId> sample_candidates(std::span<const Triple> batch, std::size_t num_entities,
                                        const NegativeSampling& negatives, EntitySides sides, Rng& rng);

struct BatchObjective {
  ObjectiveOptions options;
  double reg_weight = 0.0;
  // Empty means the full entity softmax.
  std::span<const EntityId> candidates;
};

struct LossAndGradient {
  double loss = 0.0;
  ModelGradient grad;
};

// Mean over the batch of the triple loss plus reg_weight / |batch| times the
// N3 penalty of every embedding occurrence in the batch.
LossAndGradient batch_loss_and_gradient(const ModelParams& params, std::span<const Triple> batch,
                                        const BatchObjective& objective);

double learning_rate_at(const TrainConfig& cfg, std::int64_t step);

ObjectiveOptions objective_options(const TrainConfig& cfg, const KnowledgeGraph& g);

// One optimizer step on the batch; returns the batch loss before the update.
double fm_train_step(ModelParams& params, std::span<const Triple> batch, const TrainConfig& cfg,
                     const ObjectiveOptions& options, OptimizerState& state, Rng& rng);

// Resets the entity tables and their optimizer state when step % K == 0.
bool maybe_forget(ModelParams& params, OptimizerState& state, std::int64_t step, std::int64_t interval, Rng& rng);

struct StepRecord {
  std::int64_t step = 0;
  double loss = 0.0;
  bool did_forget = false;
};

// Edge-view mini-batch trainer over a fixed training graph.
class FmTrainer {
 public:
  FmTrainer(TrainConfig cfg, const KnowledgeGraph& train, ModelParams params);
  FmTrainer(TrainConfig cfg, const KnowledgeGraph& train, ModelParams params, OptimizerState state, Rng rng,
            std::int64_t step);

  // Shuffles the triples and runs one pass; returns one record per step.
  std::vector<StepRecord> run_epoch();
  StepRecord step(std::span<const Triple> batch);

  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }
  const OptimizerState& optimizer_state() const { return state_; }
  const Rng& rng() const { return rng_; }
  std::int64_t steps_taken() const { return step_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  TrainConfig cfg_;
  const KnowledgeGraph& train_;
  ModelParams params_;
  OptimizerState state_;
  Rng rng_;
  ObjectiveOptions options_;
  std::int64_t step_ = 0;
};

}  // namespace rkg

#include "rkg/training.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "rkg/errors.h"

namespace rkg {

namespace {

ConstVec vspan(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }
MutVec vspan(Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

void check_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": shape mismatch");
  }
}

// logsumexp(x) = max + tail; keeping the two apart avoids cancellation in
// x[i] - logsumexp(x) when one score dominates.
struct LogNormalizer {
  double max;
  double tail;

  double log_prob(double x) const { return (x - max) - tail; }
};

LogNormalizer log_normalizer(const double* x, std::size_t n) {
  std::size_t arg = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (x[i] > x[arg]) arg = i;
  }
  const double m = x[arg];
  double rest = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i != arg) rest += std::exp(x[i] - m);
  }
  return {m, std::log1p(rest)};
}

// Rows `ids` of `table`, or the whole table when `ids` is empty.
Matrix gather_rows(const Matrix& table, std::span<const EntityId> ids) {
  if (ids.empty()) return table;
  Matrix out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = table.row(ids[i]);
  return out;
}

void scatter_rows(Matrix& table, std::span<const EntityId> ids, const Matrix& rows) {
  if (ids.empty()) {
    table += rows;
    return;
  }
  for (std::size_t i = 0; i < ids.size(); ++i) table.row(ids[i]) += rows.row(static_cast<Eigen::Index>(i));
}

// table[cands] += scale * G^T Q; every row when cands is empty.
void add_scaled_gram(Matrix& table, std::span<const EntityId> cands, const Matrix& G, const Matrix& Q, double scale) {
  const Matrix Gs = G * scale;
  if (cands.empty()) {
    table.noalias() += Gs.transpose() * Q;
    return;
  }
  Matrix rows;
  rows.noalias() = Gs.transpose() * Q;
  scatter_rows(table, cands, rows);
}

// Softmax minus one-hot in place; returns the summed negative log-likelihood.
double softmax_residual(Matrix& scores, std::span<const Eigen::Index> targets) {
  double nll = 0.0;
  for (Eigen::Index t = 0; t < scores.rows(); ++t) {
    double* row = scores.data() + t * scores.cols();
    const auto n = static_cast<std::size_t>(scores.cols());
    const auto z = log_normalizer(row, n);
    const Eigen::Index target = targets[static_cast<std::size_t>(t)];
    nll -= z.log_prob(row[target]);
    for (std::size_t i = 0; i < n; ++i) row[i] = std::exp(z.log_prob(row[i]));
    row[target] -= 1.0;
  }
  return nll;
}

}  // namespace

std::string_view optimizer_name(OptimizerKind k) { return k == OptimizerKind::SGD ? "sgd" : "adagrad"; }

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::SGD;
  if (name == "adagrad") return OptimizerKind::AdaGrad;
  throw ConfigError("unknown optimizer '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  model.validate();
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (epochs < 0) throw ConfigError("epochs must be nonnegative");
  if (reg_weight < 0.0) throw ConfigError("reg_weight must be nonnegative");
  if (rp_weight < 0.0) throw ConfigError("rp_weight must be nonnegative");
  if (adagrad_eps < 0.0) throw ConfigError("adagrad_eps must be nonnegative");
  if (forget_interval && *forget_interval < 1) throw ConfigError("forget_interval must be at least 1");
  if (softmax_mode == SoftmaxMode::Sampled && (negatives.in_batch < 1 || negatives.global < 0)) {
    throw ConfigError("sampled softmax needs in_batch >= 1 and global >= 0 negatives");
  }
  if (!(init_scale > 0.0)) throw ConfigError("init_scale must be positive");
  if (clip_norm < 0.0) throw ConfigError("clip_norm must be nonnegative");
  if (lr_schedule == LrSchedule::Polynomial && lr_total_steps < 1) {
    throw ConfigError("polynomial schedule needs lr_total_steps >= 1");
  }
}

void TableState::reset(Eigen::Index rows, Eigen::Index cols) {
  accumulator = Matrix::Zero(rows, cols);
  step_count = 0;
}

OptimizerState OptimizerState::for_params(const ModelParams& params) {
  OptimizerState s;
  s.entities.reset(params.entities.values.rows(), params.entities.values.cols());
  s.relations.reset(params.relations.values.rows(), params.relations.values.cols());
  if (params.spec.has_object_table()) {
    s.object_entities.reset(params.object_entities.values.rows(), params.object_entities.values.cols());
  }
  if (params.spec.has_core()) s.core.reset(params.core.rows(), params.core.cols());
  return s;
}

ModelGradient ModelGradient::zeros_like(const ModelParams& params) {
  ModelGradient g;
  g.entities = Matrix::Zero(params.entities.values.rows(), params.entities.values.cols());
  g.relations = Matrix::Zero(params.relations.values.rows(), params.relations.values.cols());
  if (params.spec.has_object_table()) {
    g.object_entities = Matrix::Zero(params.object_entities.values.rows(), params.object_entities.values.cols());
  }
  if (params.spec.has_core()) g.core = Matrix::Zero(params.core.rows(), params.core.cols());
  return g;
}

double ModelGradient::squared_norm() const {
  return entities.squaredNorm() + relations.squaredNorm() + object_entities.squaredNorm() + core.squaredNorm();
}

void ModelGradient::scale(double factor) {
  entities *= factor;
  relations *= factor;
  object_entities *= factor;
  core *= factor;
}

double log_softmax_over(std::span<const double> scores, std::size_t target) {
  if (scores.empty()) throw ShapeError("log_softmax_over: empty score vector");
  if (target >= scores.size()) throw IndexError("log_softmax_over: target out of range");
  return log_normalizer(scores.data(), scores.size()).log_prob(scores[target]);
}

TripleLogProbs triple_log_probs(const ModelParams& params, const Triple& t, std::size_t rp_block) {
  TripleLogProbs lp;
  const Vector objs = score_all_objects(params, t.subject, t.relation);
  lp.object = log_softmax_over(vspan(objs), static_cast<std::size_t>(t.object));
  const Vector subs = score_all_subjects(params, t.relation, t.object);
  lp.subject = log_softmax_over(vspan(subs), static_cast<std::size_t>(t.subject));
  const Vector rels = score_all_relations(params, t.subject, t.object);
  if (rp_block == 0) {
    lp.relation = log_softmax_over(vspan(rels), static_cast<std::size_t>(t.relation));
  } else {
    const std::size_t p = static_cast<std::size_t>(t.relation);
    const std::size_t lo = p / rp_block * rp_block;
    const std::size_t hi = std::min(lo + rp_block, static_cast<std::size_t>(rels.size()));
    lp.relation = log_softmax_over(ConstVec(rels.data() + lo, hi - lo), p - lo);
  }
  return lp;
}

double triple_loss(const ModelParams& params, const Triple& t, double rp_weight) {
  ObjectiveOptions o;
  o.rp_weight = rp_weight;
  return triple_loss(params, t, o);
}

double triple_loss(const ModelParams& params, const Triple& t, const ObjectiveOptions& options) {
  const auto lp = triple_log_probs(params, t, options.rp_block);
  double ll = lp.object + options.rp_weight * lp.relation;
  if (options.entity_sides == EntitySides::Both) ll += lp.subject;
  return -ll;
}

double n3_value(ConstVec x) {
  double acc = 0.0;
  for (double v : x) acc += std::abs(v) * v * v;
  return acc;
}

void n3_accumulate_grad(ConstVec x, double weight, MutVec grad) {
  if (grad.size() != x.size()) throw ShapeError("n3 gradient: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) grad[i] += weight * 3.0 * std::abs(x[i]) * x[i];
}

N3Result n3_penalty(std::span<const Vector> rows) {
  N3Result r;
  r.grad.reserve(rows.size());
  for (const auto& row : rows) {
    r.value += n3_value(vspan(row));
    Vector g = Vector::Zero(row.size());
    n3_accumulate_grad(vspan(row), 1.0, vspan(g));
    r.grad.push_back(std::move(g));
  }
  return r;
}

void sgd_step(Matrix& param, const Matrix& grad, double lr) {
  check_same_shape(param, grad, "sgd_step");
  param.noalias() -= lr * grad;
}

void adagrad_step(Matrix& param, const Matrix& grad, double lr, TableState& state, double eps) {
  check_same_shape(param, grad, "adagrad_step");
  check_same_shape(param, state.accumulator, "adagrad_step accumulator");
  double* p = param.data();
  const double* g = grad.data();
  double* s = state.accumulator.data();
  const Eigen::Index n = param.size();
  if (eps > 0.0) {
    // A zero gradient gives a zero step here, so no branch is needed.
    for (Eigen::Index i = 0; i < n; ++i) {
      s[i] += g[i] * g[i];
      p[i] -= lr * g[i] / std::sqrt(s[i] + eps);
    }
    return;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (g[i] == 0.0) continue;
    s[i] += g[i] * g[i];
    p[i] -= lr * g[i] / std::sqrt(s[i]);
  }
}

std::vector<EntityId> sample_candidates(std::span<const Triple> batch, std::size_t num_entities,
                                        const NegativeSampling& negatives, EntitySides sides, Rng& rng) {
  std::vector<char> seen(num_entities, 0);
  std::vector<EntityId> out;
  auto add = [&](EntityId e) {
    if (!seen[static_cast<std::size_t>(e)]) {
      seen[static_cast<std::size_t>(e)] = 1;
      out.push_back(e);
    }
  };
  for (const auto& t : batch) {
    add(t.object);
    if (sides == EntitySides::Both) add(t.subject);
  }
  if (sides == EntitySides::Object) {
    for (const auto& t : batch) {
      if (out.size() >= static_cast<std::size_t>(negatives.in_batch)) break;
      add(t.subject);
    }
  }
  std::uniform_int_distribution<EntityId> pick(0, static_cast<EntityId>(num_entities) - 1);
  for (int i = 0; i < negatives.global; ++i) add(pick(rng));
  return out;
}

LossAndGradient batch_loss_and_gradient(const ModelParams& params, std::span<const Triple> batch,
                                        const BatchObjective& objective) {
  if (batch.empty()) throw ShapeError("empty batch");
  const auto& spec = params.spec;
  const Scorer scorer(spec, spec.has_core() ? &params.core : nullptr);
  const auto B = static_cast<Eigen::Index>(batch.size());
  const Eigen::Index K = spec.entity_dim;
  const Eigen::Index Kr = spec.relation_dim;
  const double inv_b = 1.0 / static_cast<double>(B);
  const auto& opts = objective.options;
  const Matrix& subj_table = params.subject_table().values;
  const Matrix& obj_table = params.object_table().values;
  const Matrix& rel_table = params.relations.values;

  for (const auto& t : batch) {
    if (t.subject < 0 || static_cast<std::size_t>(t.subject) >= params.num_entities() || t.object < 0 ||
        static_cast<std::size_t>(t.object) >= params.num_entities() || t.relation < 0 ||
        static_cast<std::size_t>(t.relation) >= params.num_relations()) {
      throw IndexError("batch triple outside the parameter tables");
    }
  }

  LossAndGradient out;
  out.grad = ModelGradient::zeros_like(params);
  Matrix& g_subj = out.grad.entities;
  Matrix& g_obj = out.grad.object_table();
  Matrix& g_rel = out.grad.relations;

  Matrix dS = Matrix::Zero(B, K);
  Matrix dP = Matrix::Zero(B, Kr);
  Matrix dO = Matrix::Zero(B, K);

  // Candidate positions of each entity in the (possibly sampled) softmax.
  const auto cands = objective.candidates;
  std::vector<Eigen::Index> position;
  if (!cands.empty()) {
    position.assign(params.num_entities(), -1);
    for (std::size_t i = 0; i < cands.size(); ++i) position[static_cast<std::size_t>(cands[i])] = static_cast<Eigen::Index>(i);
  }
  auto cand_index = [&](EntityId e) -> Eigen::Index {
    if (cands.empty()) return e;
    const auto pos = position[static_cast<std::size_t>(e)];
    if (pos < 0) throw ValueError("sampled candidates miss a batch target");
    return pos;
  };

  std::vector<Eigen::Index> targets(batch.size());
  double nll = 0.0;

  {  // log P(o | s, p)
    Matrix gathered;
    const Matrix& C = cands.empty() ? obj_table : (gathered = gather_rows(obj_table, cands));
    Matrix Q(B, K);
    for (Eigen::Index t = 0; t < B; ++t) {
      const auto& tr = batch[static_cast<std::size_t>(t)];
      scorer.partial(Slot::Object, row_of(subj_table, tr.subject), row_of(rel_table, tr.relation), row_of(Q, t));
      targets[static_cast<std::size_t>(t)] = cand_index(tr.object);
    }
    Matrix G;
    G.noalias() = Q * C.transpose();
    nll += softmax_residual(G, targets);
    add_scaled_gram(g_obj, cands, G, Q, inv_b);
    Matrix bar;
    bar.noalias() = G * C;
    for (Eigen::Index t = 0; t < B; ++t) {
      const auto& tr = batch[static_cast<std::size_t>(t)];
      const auto s = row_of(subj_table, tr.subject);
      const auto p = row_of(rel_table, tr.relation);
      const auto o = row_of(bar, t);
      dS.row(t) += scorer.partial(Slot::Subject, p, o).transpose();
      dP.row(t) += scorer.partial(Slot::Relation, s, o).transpose();
      if (spec.has_core()) scorer.accumulate_core_gradient(s, p, o, inv_b, out.grad.core);
    }
  }

  if (opts.entity_sides == EntitySides::Both) {  // log P(s | p, o)
    Matrix gathered;
    const Matrix& C = cands.empty() ? subj_table : (gathered = gather_rows(subj_table, cands));
    Matrix Q(B, K);
    for (Eigen::Index t = 0; t < B; ++t) {
      const auto& tr = batch[static_cast<std::size_t>(t)];
      scorer.partial(Slot::Subject, row_of(rel_table, tr.relation), row_of(obj_table, tr.object), row_of(Q, t));
      targets[static_cast<std::size_t>(t)] = cand_index(tr.subject);
    }
    Matrix G;
    G.noalias() = Q * C.transpose();
    nll += softmax_residual(G, targets);
    add_scaled_gram(g_subj, cands, G, Q, inv_b);
    Matrix bar;
    bar.noalias() = G * C;
    for (Eigen::Index t = 0; t < B; ++t) {
      const auto& tr = batch[static_cast<std::size_t>(t)];
      const auto s = row_of(bar, t);
      const auto p = row_of(rel_table, tr.relation);
      const auto o = row_of(obj_table, tr.object);
      dO.row(t) += scorer.partial(Slot::Object, s, p).transpose();
      dP.row(t) += scorer.partial(Slot::Relation, s, o).transpose();
      if (spec.has_core()) scorer.accumulate_core_gradient(s, p, o, inv_b, out.grad.core);
    }
  }

  if (opts.rp_weight > 0.0) {  // log P(p | s, o)
    const double lam = opts.rp_weight;
    const Eigen::Index nR = rel_table.rows();
    Matrix Q(B, Kr);
    for (Eigen::Index t = 0; t < B; ++t) {
      const auto& tr = batch[static_cast<std::size_t>(t)];
      scorer.partial(Slot::Relation, row_of(subj_table, tr.subject), row_of(obj_table, tr.object), row_of(Q, t));
    }
    Matrix G;
    G.noalias() = Q * rel_table.transpose();
    double rp_nll = 0.0;
    for (Eigen::Index t = 0; t < B; ++t) {
      const auto p = static_cast<Eigen::Index>(batch[static_cast<std::size_t>(t)].relation);
      Eigen::Index lo = 0, hi = nR;
      if (opts.rp_block > 0) {
        const auto blk = static_cast<Eigen::Index>(opts.rp_block);
        lo = p / blk * blk;
        hi = std::min(lo + blk, nR);
      }
      double* row = G.data() + t * nR;
      const auto z = log_normalizer(row + lo, static_cast<std::size_t>(hi - lo));
      rp_nll -= z.log_prob(row[p]);
      for (Eigen::Index i = 0; i < nR; ++i) row[i] = (i >= lo && i < hi) ? std::exp(z.log_prob(row[i])) : 0.0;
      row[p] -= 1.0;
    }
    nll += lam * rp_nll;
    G *= lam;
    add_scaled_gram(g_rel, {}, G, Q, inv_b);
    Matrix bar;
    bar.noalias() = G * rel_table;
    for (Eigen::Index t = 0; t < B; ++t) {
      const auto& tr = batch[static_cast<std::size_t>(t)];
      const auto s = row_of(subj_table, tr.subject);
      const auto p = row_of(bar, t);
      const auto o = row_of(obj_table, tr.object);
      dS.row(t) += scorer.partial(Slot::Subject, p, o).transpose();
      dO.row(t) += scorer.partial(Slot::Object, s, p).transpose();
      if (spec.has_core()) scorer.accumulate_core_gradient(s, p, o, inv_b, out.grad.core);
    }
  }

  double penalty = 0.0;
  if (objective.reg_weight > 0.0) {
    for (Eigen::Index t = 0; t < B; ++t) {
      const auto& tr = batch[static_cast<std::size_t>(t)];
      const auto s = row_of(subj_table, tr.subject);
      const auto p = row_of(rel_table, tr.relation);
      const auto o = row_of(obj_table, tr.object);
      penalty += n3_value(s) + n3_value(p) + n3_value(o);
      // dS etc. are scaled by 1/B below, so the N3 weight stays unscaled here.
      n3_accumulate_grad(s, objective.reg_weight, row_of(dS, t));
      n3_accumulate_grad(p, objective.reg_weight, row_of(dP, t));
      n3_accumulate_grad(o, objective.reg_weight, row_of(dO, t));
    }
  }

  for (Eigen::Index t = 0; t < B; ++t) {
    const auto& tr = batch[static_cast<std::size_t>(t)];
    g_subj.row(tr.subject) += inv_b * dS.row(t);
    g_rel.row(tr.relation) += inv_b * dP.row(t);
    g_obj.row(tr.object) += inv_b * dO.row(t);
  }

  out.loss = (nll + objective.reg_weight * penalty) * inv_b;
  return out;
}

double learning_rate_at(const TrainConfig& cfg, std::int64_t step) {
  if (cfg.lr_schedule == LrSchedule::Constant) return cfg.learning_rate;
  const double frac =
      static_cast<double>(std::min(step, cfg.lr_total_steps)) / static_cast<double>(cfg.lr_total_steps);
  return (cfg.learning_rate - cfg.lr_end) * std::pow(1.0 - frac, cfg.lr_power) + cfg.lr_end;
}

ObjectiveOptions objective_options(const TrainConfig& cfg, const KnowledgeGraph& g) {
  ObjectiveOptions o;
  o.rp_weight = cfg.rp_weight;
  o.entity_sides = cfg.entity_sides;
  if (cfg.rp_over_base_relations && g.has_reciprocals()) o.rp_block = g.num_base_relations();
  return o;
}

double fm_train_step(ModelParams& params, std::span<const Triple> batch, const TrainConfig& cfg,
                     const ObjectiveOptions& options, OptimizerState& state, Rng& rng) {
  BatchObjective objective;
  objective.options = options;
  objective.reg_weight = cfg.reg_weight;
  std::vector<EntityId> cands;
  if (cfg.softmax_mode == SoftmaxMode::Sampled) {
    cands = sample_candidates(batch, params.num_entities(), cfg.negatives, options.entity_sides, rng);
    objective.candidates = cands;
  }
  auto lg = batch_loss_and_gradient(params, batch, objective);
  if (cfg.clip_norm > 0.0) {
    const double norm = std::sqrt(lg.grad.squared_norm());
    if (norm > cfg.clip_norm) lg.grad.scale(cfg.clip_norm / norm);
  }

  auto apply = [&](Matrix& param, const Matrix& grad, TableState& ts) {
    const double lr = learning_rate_at(cfg, ts.step_count);
    if (cfg.optimizer == OptimizerKind::SGD) {
      sgd_step(param, grad, lr);
    } else {
      adagrad_step(param, grad, lr, ts, cfg.adagrad_eps);
    }
    ++ts.step_count;
  };
  apply(params.entities.values, lg.grad.entities, state.entities);
  apply(params.relations.values, lg.grad.relations, state.relations);
  if (params.spec.has_object_table()) {
    apply(params.object_entities.values, lg.grad.object_entities, state.object_entities);
  }
  if (params.spec.has_core()) apply(params.core, lg.grad.core, state.core);
  return lg.loss;
}

bool maybe_forget(ModelParams& params, OptimizerState& state, std::int64_t step, std::int64_t interval, Rng& rng) {
  if (interval < 1) throw ConfigError("forget interval must be at least 1");
  if (step % interval != 0) return false;
  params.entities.reinitialize(rng);
  state.entities.reset(params.entities.values.rows(), params.entities.values.cols());
  if (params.spec.has_object_table()) {
    params.object_entities.reinitialize(rng);
    state.object_entities.reset(params.object_entities.values.rows(), params.object_entities.values.cols());
  }
  return true;
}

FmTrainer::FmTrainer(TrainConfig cfg, const KnowledgeGraph& train, ModelParams params)
    : FmTrainer(cfg, train, params, OptimizerState::for_params(params), Rng(cfg.seed), 0) {}

FmTrainer::FmTrainer(TrainConfig cfg, const KnowledgeGraph& train, ModelParams params, OptimizerState state,
                     Rng rng, std::int64_t step)
    : cfg_(std::move(cfg)),
      train_(train),
      params_(std::move(params)),
      state_(std::move(state)),
      rng_(rng),
      step_(step) {
  cfg_.validate();
  if (params_.num_entities() != train_.num_entities() || params_.num_relations() != train_.num_relations()) {
    throw CompatibilityError("parameter tables do not match the training graph");
  }
  options_ = objective_options(cfg_, train_);
}

StepRecord FmTrainer::step(std::span<const Triple> batch) {
  StepRecord rec;
  rec.step = ++step_;
  if (cfg_.forget_interval) rec.did_forget = maybe_forget(params_, state_, step_, *cfg_.forget_interval, rng_);
  rec.loss = fm_train_step(params_, batch, cfg_, options_, state_, rng_);
  return rec;
}

std::vector<StepRecord> FmTrainer::run_epoch() {
  const auto triples = train_.triples();
  std::vector<Triple> order(triples.begin(), triples.end());
  std::shuffle(order.begin(), order.end(), rng_);
  std::vector<StepRecord> records;
  const std::size_t bsz = static_cast<std::size_t>(cfg_.batch_size);
  for (std::size_t i = 0; i < order.size(); i += bsz) {
    const std::size_t n = std::min(bsz, order.size() - i);
    records.push_back(step(std::span<const Triple>(order.data() + i, n)));
  }
  return records;
}

}  // namespace rkg

#include "rkg/refactor.h"

#include <algorithm>
#include <cmath>

#include "rkg/errors.h"

namespace rkg {

namespace {

void check_rows(const Matrix& m, std::span<const EntityId> nodes, Eigen::Index cols, const char* what) {
  if (m.rows() != static_cast<Eigen::Index>(nodes.size()) || m.cols() != cols) {
    throw ShapeError(std::string(what) + ": shape mismatch");
  }
}

std::vector<double> softmax(const double* x, std::size_t n) {
  double m = x[0];
  for (std::size_t i = 1; i < n; ++i) m = std::max(m, x[i]);
  std::vector<double> p(n);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) z += p[i] = std::exp(x[i] - m);
  for (auto& v : p) v /= z;
  return p;
}

void check_decoder(const ModelSpec& spec) {
  if (spec.family != Family::DistMult && spec.family != Family::ComplEx) {
    throw ConfigError("ReFactor layers support the distmult and complex decoders, not " +
                      std::string(family_name(spec.family)));
  }
}

}  // namespace

NodeStateCache::NodeStateCache(Matrix initial, std::optional<std::int64_t> layers)
    : initial_(std::move(initial)), layers_(layers) {
  if (layers_ && *layers_ < 1) throw ConfigError("cache depth L must be at least 1");
  if (!initial_.allFinite()) throw ValueError("initial node states must be finite");
  clear();
}

void NodeStateCache::push(std::span<const EntityId> nodes, const Matrix& rows) {
  check_rows(rows, nodes, states_.cols(), "cache push");
  for (std::size_t i = 0; i < nodes.size(); ++i) states_.row(nodes[i]) = rows.row(static_cast<Eigen::Index>(i));
  ++batches_since_clear_;
}

void NodeStateCache::push(std::span<const EntityId> nodes, const Matrix& rows, const Matrix& accumulator_rows) {
  check_rows(accumulator_rows, nodes, accumulator_.cols(), "cache push accumulator");
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    accumulator_.row(nodes[i]) = accumulator_rows.row(static_cast<Eigen::Index>(i));
  }
  push(nodes, rows);
}

Matrix NodeStateCache::pull(std::span<const EntityId> nodes) const {
  Matrix out(static_cast<Eigen::Index>(nodes.size()), states_.cols());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i] < 0 || nodes[i] >= states_.rows()) throw IndexError("cache pull: node out of range");
    out.row(static_cast<Eigen::Index>(i)) = states_.row(nodes[i]);
  }
  return out;
}

void NodeStateCache::clear() {
  states_ = initial_;
  accumulator_ = Matrix::Zero(initial_.rows(), initial_.cols());
  layer_counter_ = 0;
  batches_since_clear_ = 0;
}

bool NodeStateCache::end_pass() {
  ++layer_counter_;
  if (layers_ && layer_counter_ >= *layers_) {
    clear();
    return true;
  }
  return false;
}

void NodeStateCache::restore(Matrix states, Matrix accumulator, std::int64_t layer_counter,
                             std::int64_t batches_since_clear) {
  if (states.rows() != initial_.rows() || states.cols() != initial_.cols() || accumulator.rows() != states.rows() ||
      accumulator.cols() != states.cols()) {
    throw ShapeError("cache restore: shape mismatch");
  }
  states_ = std::move(states);
  accumulator_ = std::move(accumulator);
  layer_counter_ = layer_counter;
  batches_since_clear_ = batches_since_clear;
}

void RefactorConfig::validate() const {
  if (layers && *layers < 1) throw ConfigError("layers must be at least 1 (or inf)");
  if (alpha && !(*alpha > 0.0)) throw ConfigError("alpha must be positive");
  if (beta < 0.0) throw ConfigError("beta must be nonnegative");
  if (layer_eps < 0.0) throw ConfigError("layer_eps must be nonnegative");
  if (n3_weight < 0.0) throw ConfigError("n3 weight must be nonnegative");
  if (feature_source == FeatureSource::File && feature_path.empty()) {
    throw ConfigError("file features need a path");
  }
}

Vector message(const Scorer& scorer, ConstVec g_r, ConstVec h_w, Direction direction, double p_v_given_wr) {
  if (direction == Direction::Outgoing) return scorer.partial(Slot::Subject, g_r, h_w);
  if (p_v_given_wr < 0.0 || p_v_given_wr > 1.0) throw ValueError("message: probability outside [0, 1]");
  return (1.0 - p_v_given_wr) * scorer.partial(Slot::Object, h_w, g_r);
}

Vector aggregate(std::span<const Vector> messages, std::size_t dim) {
  Vector out = Vector::Zero(static_cast<Eigen::Index>(dim));
  for (const auto& m : messages) {
    if (m.size() != out.size()) throw ShapeError("aggregate: mixed message lengths");
    out += m;
  }
  return out;
}

Vector normalizer(const Scorer& scorer, const Matrix& h, const Matrix& psi, EntityId v, const LayerScope& scope) {
  if (v < 0 || v >= h.rows()) throw IndexError("normalizer: node out of range");
  std::vector<EntityId> all;
  auto cands = scope.entities;
  if (cands.empty()) {
    for (Eigen::Index i = 0; i < h.rows(); ++i) all.push_back(static_cast<EntityId>(i));
    cands = all;
  }
  const auto in_scope = std::find(cands.begin(), cands.end(), v);
  const bool v_candidate = in_scope != cands.end();
  const auto v_pos = static_cast<std::size_t>(in_scope - cands.begin());
  Vector n = Vector::Zero(h.cols());
  if (scope.triples.empty()) return n;
  for (const auto& t : scope.triples) {
    if (t.object == v && t.subject != v) continue;
    const auto hs = row_of(h, t.subject);
    const auto g = row_of(psi, t.relation);
    std::vector<double> scores;
    for (auto c : cands) scores.push_back(scorer.score(hs, g, row_of(h, c)));
    const auto p = softmax(scores.data(), scores.size());
    if (t.subject == v) {
      // E_{u ~ P(.|v,r)} dGamma(v, r, u)/dh[v], plus the object-slot term at u = v.
      for (std::size_t i = 0; i < cands.size(); ++i) {
        n += p[i] * scorer.partial(Slot::Subject, g, row_of(h, cands[i]));
      }
      if (v_candidate) n += p[v_pos] * scorer.partial(Slot::Object, hs, g);
    } else if (v_candidate) {
      n += p[v_pos] * scorer.partial(Slot::Object, hs, g);
    }
  }
  return n / static_cast<double>(scope.triples.size());
}

LayerTerms layer_terms(const Scorer& scorer, const Matrix& h, const Matrix& psi, const LayerScope& scope) {
  const Eigen::Index K = h.cols();
  const auto nE = static_cast<std::size_t>(h.rows());
  LayerTerms out;
  std::vector<Eigen::Index> node_of(nE, -1);
  auto add_node = [&](EntityId e) {
    if (e < 0 || static_cast<std::size_t>(e) >= nE) throw IndexError("layer: entity out of range");
    if (node_of[static_cast<std::size_t>(e)] < 0) {
      node_of[static_cast<std::size_t>(e)] = static_cast<Eigen::Index>(out.nodes.size());
      out.nodes.push_back(e);
    }
  };
  std::vector<EntityId> cands(scope.entities.begin(), scope.entities.end());
  if (cands.empty()) {
    cands.resize(nE);
    for (std::size_t i = 0; i < nE; ++i) cands[i] = static_cast<EntityId>(i);
  }
  for (auto c : cands) add_node(c);
  for (const auto& t : scope.triples) {
    add_node(t.subject);
    add_node(t.object);
  }
  const auto n_nodes = static_cast<Eigen::Index>(out.nodes.size());
  out.aggregate = Matrix::Zero(n_nodes, K);
  out.normalizer = Matrix::Zero(n_nodes, K);
  out.occurrences.assign(out.nodes.size(), 0);
  if (scope.triples.empty()) return out;

  std::vector<Eigen::Index> cand_pos(nE, -1);
  for (std::size_t i = 0; i < cands.size(); ++i) cand_pos[static_cast<std::size_t>(cands[i])] = static_cast<Eigen::Index>(i);

  Matrix C(static_cast<Eigen::Index>(cands.size()), K);
  for (std::size_t i = 0; i < cands.size(); ++i) C.row(static_cast<Eigen::Index>(i)) = h.row(cands[i]);

  const auto B = static_cast<Eigen::Index>(scope.triples.size());
  Matrix Q(B, K);
  for (Eigen::Index t = 0; t < B; ++t) {
    const auto& tr = scope.triples[static_cast<std::size_t>(t)];
    scorer.partial(Slot::Object, row_of(h, tr.subject), row_of(psi, tr.relation), row_of(Q, t));
  }
  Matrix P = Q * C.transpose();
  for (Eigen::Index t = 0; t < B; ++t) {
    const auto p = softmax(P.data() + t * P.cols(), static_cast<std::size_t>(P.cols()));
    std::copy(p.begin(), p.end(), P.data() + t * P.cols());
  }
  // Partition pushes onto every candidate, E_u[h[u]] for the subjects.
  const Matrix pushed = P.transpose() * Q;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    out.normalizer.row(node_of[static_cast<std::size_t>(cands[i])]) += pushed.row(static_cast<Eigen::Index>(i));
  }
  const Matrix expected = P * C;
  for (Eigen::Index t = 0; t < B; ++t) {
    const auto& tr = scope.triples[static_cast<std::size_t>(t)];
    const auto g = row_of(psi, tr.relation);
    const auto q = Q.row(t);
    const Eigen::Index ns = node_of[static_cast<std::size_t>(tr.subject)];
    const Eigen::Index no = node_of[static_cast<std::size_t>(tr.object)];
    const Eigen::Index co = cand_pos[static_cast<std::size_t>(tr.object)];
    const double p_o = co >= 0 ? P(t, co) : 0.0;
    // The target's own partition push is part of its incoming message.
    if (co >= 0) out.normalizer.row(no) -= p_o * q;
    out.normalizer.row(ns) += scorer.partial(Slot::Subject, g, row_of(expected, t)).transpose();
    out.aggregate.row(ns) += message(scorer, g, row_of(h, tr.object), Direction::Outgoing).transpose();
    out.aggregate.row(no) += (1.0 - p_o) * q;
    ++out.occurrences[static_cast<std::size_t>(ns)];
    ++out.occurrences[static_cast<std::size_t>(no)];
  }
  out.normalizer /= static_cast<double>(B);
  return out;
}

LayerUpdate compute_layer(const Scorer& scorer, const NodeStateCache& cache, const Matrix& psi,
                          const RefactorConfig& cfg, const LayerScope& scope) {
  const Matrix& h = cache.states();
  const auto terms = layer_terms(scorer, h, psi, scope);
  const double n_triples = static_cast<double>(std::max<std::size_t>(scope.triples.size(), 1));
  const double alpha = cfg.alpha.value_or(cfg.beta / n_triples);
  const double beta = cfg.beta;

  LayerUpdate up;
  up.nodes = terms.nodes;
  Matrix delta = alpha * terms.aggregate;
  if (cfg.include_n_term) delta -= beta * terms.normalizer;
  Matrix old(static_cast<Eigen::Index>(up.nodes.size()), h.cols());
  for (std::size_t i = 0; i < up.nodes.size(); ++i) old.row(static_cast<Eigen::Index>(i)) = h.row(up.nodes[i]);
  if (cfg.n3_in_layer && cfg.n3_weight > 0.0) {
    for (std::size_t i = 0; i < up.nodes.size(); ++i) {
      const double w = beta * cfg.n3_weight * terms.occurrences[i] / n_triples;
      const auto row = static_cast<Eigen::Index>(i);
      delta.row(row).array() -= w * 3.0 * old.row(row).array().abs() * old.row(row).array();
    }
  }

  if (cfg.layer_optimizer == OptimizerKind::SGD) {
    up.states = old + delta;
    return up;
  }
  // AdaGrad on the implied gradient -delta / beta.
  if (!(beta > 0.0)) throw ConfigError("an AdaGrad layer needs beta > 0");
  up.states = old;
  up.accumulator = Matrix(static_cast<Eigen::Index>(up.nodes.size()), h.cols());
  const Matrix& acc = cache.accumulator();
  for (std::size_t i = 0; i < up.nodes.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    up.accumulator.row(row) = acc.row(up.nodes[i]);
    for (Eigen::Index j = 0; j < h.cols(); ++j) {
      const double d = delta(row, j);
      if (d == 0.0) continue;
      const double g = -d / beta;
      up.accumulator(row, j) += g * g;
      up.states(row, j) -= beta * g / std::sqrt(up.accumulator(row, j) + cfg.layer_eps);
    }
  }
  return up;
}

LayerUpdate refactor_layer(const Scorer& scorer, NodeStateCache& cache, const Matrix& psi, const RefactorConfig& cfg,
                           const LayerScope& scope) {
  auto up = compute_layer(scorer, cache, psi, cfg, scope);
  if (cfg.layer_optimizer == OptimizerKind::AdaGrad) {
    cache.push(up.nodes, up.states, up.accumulator);
  } else {
    cache.push(up.nodes, up.states);
  }
  return up;
}

void reject_self_loops(const KnowledgeGraph& g) {
  for (const auto& t : g.triples()) {
    if (t.subject == t.object) {
      throw DataError("self-loop (" + g.entities().name(t.subject) + ", " + g.relations().name(t.relation) +
                      ", " + g.entities().name(t.object) + ") is not allowed on the ReFactor path");
    }
  }
}

RefactorTrainer::RefactorTrainer(TrainConfig tcfg, RefactorConfig rcfg, const KnowledgeGraph& train,
                                 Matrix features, Matrix psi)
    : tcfg_(std::move(tcfg)),
      rcfg_(std::move(rcfg)),
      train_(train),
      scorer_(tcfg_.model),
      psi_(std::move(psi)),
      rng_(tcfg_.seed) {
  tcfg_.validate();
  rcfg_.validate();
  check_decoder(tcfg_.model);
  if (tcfg_.rp_weight > 0.0) throw ConfigError("relation prediction is not available on the ReFactor path");
  reject_self_loops(train_);
  if (static_cast<std::size_t>(features.rows()) != train_.num_entities() || features.cols() != tcfg_.model.entity_dim) {
    throw ShapeError("node features must be |E| x K");
  }
  if (static_cast<std::size_t>(psi_.rows()) != train_.num_relations() || psi_.cols() != tcfg_.model.relation_dim) {
    throw ShapeError("relation table must be |R| x K_r");
  }
  cache_ = NodeStateCache(std::move(features), rcfg_.layers);
  psi_state_.reset(psi_.rows(), psi_.cols());
}

ModelParams RefactorTrainer::as_params() const {
  ModelParams p;
  p.spec = tcfg_.model;
  p.entities.values = cache_.states();
  p.entities.init_scale = tcfg_.init_scale;
  p.relations.values = psi_;
  p.relations.init_scale = tcfg_.init_scale;
  return p;
}

double RefactorTrainer::step(std::span<const Triple> batch) {
  ++step_;
  std::vector<EntityId> cands;
  if (tcfg_.softmax_mode == SoftmaxMode::Sampled) {
    cands = sample_candidates(batch, train_.num_entities(), tcfg_.negatives, EntitySides::Object, rng_);
  }
  // psi gradient with h as a fixed input.
  BatchObjective obj;
  obj.options.entity_sides = EntitySides::Object;
  obj.reg_weight = tcfg_.reg_weight;
  obj.candidates = cands;
  const auto lg = batch_loss_and_gradient(as_params(), batch, obj);

  LayerScope scope{cands, batch};
  refactor_layer(scorer_, cache_, psi_, rcfg_, scope);

  const double lr = learning_rate_at(tcfg_, psi_state_.step_count);
  if (tcfg_.optimizer == OptimizerKind::SGD) {
    sgd_step(psi_, lg.grad.relations, lr);
  } else {
    adagrad_step(psi_, lg.grad.relations, lr, psi_state_, tcfg_.adagrad_eps);
  }
  ++psi_state_.step_count;
  return lg.loss;
}

std::vector<StepRecord> RefactorTrainer::run_epoch() {
  const auto triples = train_.triples();
  std::vector<Triple> order(triples.begin(), triples.end());
  std::shuffle(order.begin(), order.end(), rng_);
  std::vector<StepRecord> records;
  const auto bsz = static_cast<std::size_t>(tcfg_.batch_size);
  for (std::size_t i = 0; i < order.size(); i += bsz) {
    const std::size_t n = std::min(bsz, order.size() - i);
    StepRecord rec;
    rec.did_forget = cache_.batches_since_clear() == 0 && cache_.layer_counter() == 0 && step_ > 0;
    rec.loss = step(std::span<const Triple>(order.data() + i, n));
    rec.step = step_;
    records.push_back(rec);
  }
  cache_.end_pass();
  return records;
}

Matrix inductive_infer(const Matrix& psi, const KnowledgeGraph& graph, const Matrix& features,
                       const TrainConfig& tcfg, const RefactorConfig& rcfg, std::int64_t rounds) {
  check_decoder(tcfg.model);
  if (rounds < 0) throw ConfigError("inference rounds must be nonnegative");
  if (static_cast<std::size_t>(psi.rows()) < graph.num_relations()) {
    throw CompatibilityError("graph uses relations the trained model does not know");
  }
  if (static_cast<std::size_t>(features.rows()) != graph.num_entities()) {
    throw ShapeError("node features must have one row per entity");
  }
  reject_self_loops(graph);
  const Scorer scorer(tcfg.model);
  NodeStateCache cache(features, std::nullopt);
  Rng rng(tcfg.seed);
  std::vector<Triple> order(graph.triples().begin(), graph.triples().end());
  const auto bsz = static_cast<std::size_t>(tcfg.batch_size);
  for (std::int64_t r = 0; r < rounds; ++r) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < order.size(); i += bsz) {
      const std::span<const Triple> batch(order.data() + i, std::min(bsz, order.size() - i));
      std::vector<EntityId> cands;
      if (tcfg.softmax_mode == SoftmaxMode::Sampled) {
        cands = sample_candidates(batch, graph.num_entities(), tcfg.negatives, EntitySides::Object, rng);
      }
      refactor_layer(scorer, cache, psi, rcfg, LayerScope{cands, batch});
    }
    cache.end_pass();
  }
  return cache.states();
}

}  // namespace rkg

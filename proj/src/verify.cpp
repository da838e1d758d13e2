#include "rkg/verify.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "rkg/eval.h"
#include "rkg/refactor.h"
#include "rkg/training.h"

namespace rkg {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<Triple> random_triples(Rng& rng, int ne, int nr, int nt, bool allow_loops) {
  std::uniform_int_distribution<int> pe(0, ne - 1), pr(0, nr - 1);
  std::set<Triple> seen;
  std::vector<Triple> ts;
  while (static_cast<int>(ts.size()) < nt) {
    Triple t{pe(rng), pr(rng), pe(rng)};
    if ((!allow_loops && t.subject == t.object) || !seen.insert(t).second) continue;
    ts.push_back(t);
  }
  return ts;
}

std::string sci(double x) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << x;
  return os.str();
}

std::vector<Matrix*> tables(ModelParams& p) {
  std::vector<Matrix*> out{&p.entities.values, &p.relations.values};
  if (p.spec.has_object_table()) out.push_back(&p.object_entities.values);
  if (p.spec.has_core()) out.push_back(&p.core);
  return out;
}

std::vector<const Matrix*> grad_tables(const ModelGradient& g, const ModelParams& p) {
  std::vector<const Matrix*> out{&g.entities, &g.relations};
  if (p.spec.has_object_table()) out.push_back(&g.object_entities);
  if (p.spec.has_core()) out.push_back(&g.core);
  return out;
}

}  // namespace

CheckResult check_layer_equivalence(int graphs, const VerifyOptions& options) {
  const auto t0 = Clock::now();
  Rng rng(options.seed + 101);
  std::uniform_int_distribution<int> pick_e(3, 8), pick_r(1, 3);
  double worst = 0.0;
  for (int gi = 0; gi < graphs; ++gi) {
    const int ne = pick_e(rng), nr = pick_r(rng);
    const int max_t = std::min(15, ne * (ne - 1) * nr);
    const int nt = std::uniform_int_distribution<int>(1, max_t)(rng);
    const auto triples = random_triples(rng, ne, nr, nt, false);
    const auto spec = ModelSpec::make(Family::DistMult, 4);
    auto params = ModelParams::initialize(spec, static_cast<std::size_t>(ne), static_cast<std::size_t>(nr), 0.6, rng);
    const Matrix h0 = params.entities.values;
    const double lr = 0.7;

    BatchObjective objective;
    objective.options.entity_sides = EntitySides::Object;
    auto lg = batch_loss_and_gradient(params, triples, objective);
    if (options.perturb_gradient) lg.grad.entities(0, 0) += 1e-6;
    sgd_step(params.entities.values, lg.grad.entities, lr);

    RefactorConfig rcfg;
    rcfg.alpha = lr / static_cast<double>(triples.size());
    rcfg.beta = lr;
    NodeStateCache cache(h0, std::nullopt);
    refactor_layer(Scorer(spec), cache, params.relations.values, rcfg, LayerScope{{}, triples});
    worst = std::max(worst, (cache.states() - params.entities.values).cwiseAbs().maxCoeff());
  }
  CheckResult r;
  r.name = "layer equivalence";
  r.passed = worst < 1e-8;
  r.detail = std::to_string(graphs) + " graphs, max |delta| = " + sci(worst);
  r.seconds = seconds_since(t0);
  return r;
}

CheckResult check_gradients(const VerifyOptions& options) {
  const auto t0 = Clock::now();
  Rng rng(options.seed + 202);
  double worst = 0.0;
  std::string worst_family;
  for (Family f : {Family::DistMult, Family::ComplEx, Family::CP, Family::RESCAL, Family::TuckER}) {
    const int ne = 8, nr = 3;
    const auto triples = random_triples(rng, ne, nr, 12, true);
    const auto spec = ModelSpec::make(f, 4, f == Family::TuckER ? 3 : -1);
    auto params = ModelParams::initialize(spec, ne, nr, 0.5, rng);
    BatchObjective objective;
    objective.options.rp_weight = 0.5;
    objective.reg_weight = 0.01;
    const auto analytic = batch_loss_and_gradient(params, triples, objective);
    const double h = 1e-5;
    auto ptables = tables(params);
    const auto gtables = grad_tables(analytic.grad, params);
    for (std::size_t ti = 0; ti < ptables.size(); ++ti) {
      Matrix& m = *ptables[ti];
      Matrix fd(m.rows(), m.cols());
      for (Eigen::Index i = 0; i < m.size(); ++i) {
        const double keep = m.data()[i];
        m.data()[i] = keep + h;
        const double up = batch_loss_and_gradient(params, triples, objective).loss;
        m.data()[i] = keep - h;
        const double down = batch_loss_and_gradient(params, triples, objective).loss;
        m.data()[i] = keep;
        fd.data()[i] = (up - down) / (2 * h);
      }
      const Matrix& g = *gtables[ti];
      const double scale = std::max({g.norm(), fd.norm(), 1e-12});
      const double rel = (g - fd).norm() / scale;
      if (rel > worst) {
        worst = rel;
        worst_family = std::string(family_name(f));
      }
    }
  }
  CheckResult r;
  r.name = "gradient finite differences";
  r.passed = worst < 1e-5;
  r.detail = "5 families, max relative error = " + sci(worst) + (worst_family.empty() ? "" : " (" + worst_family + ")");
  r.seconds = seconds_since(t0);
  return r;
}

CheckResult check_ranking(int queries, const VerifyOptions& options) {
  const auto t0 = Clock::now();
  Rng rng(options.seed + 303);
  const Family families[] = {Family::DistMult, Family::ComplEx, Family::CP, Family::RESCAL, Family::TuckER};
  int checked = 0, mismatches = 0, ties = 0;
  for (int gi = 0; checked < queries; ++gi) {
    const Family f = families[gi % 5];
    const int ne = 5 + static_cast<int>(rng() % 196), nr = 1 + static_cast<int>(rng() % 4);
    const auto train = random_triples(rng, ne, nr, ne, true);
    const auto test = random_triples(rng, ne, nr, 10, true);
    const std::vector<std::span<const Triple>> splits{train, test};
    const FilterIndex filter(splits);
    auto params = ModelParams::initialize(ModelSpec::make(f, 4), ne, 2 * nr, 1.0, rng);
    // Duplicate rows produce exact ties.
    for (int i = 0; i < ne / 4; ++i) {
      const auto a = static_cast<Eigen::Index>(rng() % static_cast<unsigned>(ne));
      const auto b = static_cast<Eigen::Index>(rng() % static_cast<unsigned>(ne));
      params.entities.values.row(a) = params.entities.values.row(b);
      if (f == Family::CP) params.object_entities.values.row(a) = params.object_entities.values.row(b);
    }
    const auto report = evaluate(params, test, filter, static_cast<std::size_t>(nr), {});
    for (const auto& q : report.per_query) {
      if (checked >= queries) break;
      const double oracle = brute_force_rank_oracle(params, filter, q.triple, q.direction, static_cast<std::size_t>(nr));
      if (oracle != q.rank) ++mismatches;
      if (oracle != std::floor(oracle)) ++ties;
      ++checked;
    }
  }
  CheckResult r;
  r.name = "ranking oracle";
  r.passed = mismatches == 0;
  r.detail = std::to_string(checked) + " queries (" + std::to_string(ties) + " with half-integer ranks), " +
             std::to_string(mismatches) + " mismatches";
  r.seconds = seconds_since(t0);
  return r;
}

std::vector<CheckResult> run_oracle_suite(const VerifyOptions& options) {
  return {check_layer_equivalence(40, options), check_gradients(options), check_ranking(1000, options)};
}

}  // namespace rkg

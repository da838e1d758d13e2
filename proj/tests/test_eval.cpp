#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <random>
#include <set>
#include <stdexcept>

#include "rkg/errors.h"
#include "rkg/eval.h"
#include "rkg/scoring.h"

using namespace rkg;

namespace {

std::vector<Triple> random_triples(Rng& rng, int ne, int nr, int nt) {
  std::uniform_int_distribution<int> pe(0, ne - 1), pr(0, nr - 1);
  std::set<Triple> seen;
  std::vector<Triple> ts;
  while (static_cast<int>(ts.size()) < nt) {
    Triple t{pe(rng), pr(rng), pe(rng)};
    if (seen.insert(t).second) ts.push_back(t);
  }
  return ts;
}

// Model over base relations plus their reciprocals. A few entity rows are
// copies of others so that exact ties occur.
ModelParams tied_model(Family f, int ne, int nr, Rng& rng) {
  auto params = ModelParams::initialize(ModelSpec::make(f, 6), static_cast<std::size_t>(ne),
                                        static_cast<std::size_t>(2 * nr), 1.0, rng);
  std::uniform_int_distribution<int> pe(0, ne - 1);
  for (int i = 0; i < ne / 4; ++i) {
    const int a = pe(rng), b = pe(rng);
    params.entities.values.row(a) = params.entities.values.row(b);
    if (f == Family::CP) params.object_entities.values.row(a) = params.object_entities.values.row(b);
  }
  return params;
}

QueryResult q(double rank) { return {Triple{0, 0, 0}, QueryDirection::Object, rank}; }

}  // namespace

TEST(FilteredRank, Examples) {
  const std::vector<double> a{0.9, 0.5, 0.7};
  EXPECT_EQ(filtered_rank(a, 2, {}), 2.0);
  const std::vector<double> b{0.7, 0.7, 0.5};
  EXPECT_EQ(filtered_rank(b, 0, {}), 1.5);
  const std::vector<double> c{0.1, 3.0, 0.2};
  EXPECT_EQ(filtered_rank(c, 1, {}), 1.0);
}

TEST(FilteredRank, FilterRemovesCandidates) {
  const std::vector<double> s{0.9, 0.8, 0.7, 0.7};
  const std::vector<EntityId> f{0};
  EXPECT_EQ(filtered_rank(s, 2, f), 2.5);
  const std::vector<EntityId> f2{0, 1, 3};
  EXPECT_EQ(filtered_rank(s, 2, f2), 1.0);
}

TEST(FilteredRank, TargetFilteredIsLogicError) {
  const std::vector<double> s{0.1, 0.2};
  const std::vector<EntityId> f{1};
  EXPECT_THROW(filtered_rank(s, 1, f), std::logic_error);
  EXPECT_THROW(filtered_rank(s, 2, {}), IndexError);
}

TEST(FilteredRank, BoundsAndFilterMonotonicity) {
  Rng rng(11);
  std::uniform_int_distribution<int> level(0, 4);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 2 + trial % 20;
    std::vector<double> s(static_cast<std::size_t>(n));
    for (auto& x : s) x = 0.25 * level(rng);
    const EntityId target = static_cast<EntityId>(rng() % static_cast<unsigned>(n));
    std::vector<EntityId> filtered;
    for (EntityId e = 0; e < n; ++e) {
      if (e != target && rng() % 3 == 0) filtered.push_back(e);
    }
    const double r = filtered_rank(s, target, filtered);
    EXPECT_GE(r, 1.0);
    EXPECT_LE(r, static_cast<double>(n) - static_cast<double>(filtered.size()));
    for (EntityId e = 0; e < n; ++e) {
      if (e == target || std::find(filtered.begin(), filtered.end(), e) != filtered.end()) continue;
      auto more = filtered;
      more.push_back(e);
      EXPECT_LE(filtered_rank(s, target, more), r);
    }
  }
}

TEST(Summarize, Examples) {
  const auto r = summarize({q(1), q(2), q(4)}, Protocol::Full);
  EXPECT_NEAR(r.mrr, 0.58333333333333333, 1e-15);
  EXPECT_DOUBLE_EQ(r.hits.at(1), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.hits.at(3), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.hits.at(10), 1.0);
  const auto perfect = summarize({q(1), q(1)}, Protocol::Full);
  EXPECT_EQ(perfect.mrr, 1.0);
  for (const auto& [k, h] : perfect.hits) EXPECT_EQ(h, 1.0);
}

TEST(Summarize, TieRankIsNotAHit) {
  const auto r = summarize({q(1.5)}, Protocol::Full);
  EXPECT_EQ(r.hits.at(1), 0.0);
  EXPECT_EQ(r.hits.at(3), 1.0);
}

TEST(Summarize, AggregatesReproduceFromPerQuery) {
  Rng rng(5);
  std::uniform_int_distribution<int> pr(2, 60);
  std::vector<QueryResult> qs;
  for (int i = 0; i < 500; ++i) qs.push_back(q(0.5 * pr(rng)));
  const auto r = summarize(qs, Protocol::Full);
  const auto again = summarize(r.per_query, Protocol::Full);
  EXPECT_EQ(r.mrr, again.mrr);
  EXPECT_EQ(r.hits, again.hits);
  EXPECT_LE(r.hits.at(1), r.hits.at(3));
  EXPECT_LE(r.hits.at(3), r.hits.at(10));
  EXPECT_GT(r.mrr, 0.0);
  EXPECT_LE(r.mrr, 1.0);
}

TEST(Report, JsonLayout) {
  const auto r = summarize({q(1), q(2), q(4)}, Protocol::Partial50);
  const auto j = nlohmann::json::parse(r.to_json());
  EXPECT_EQ(j.at("protocol"), "partial-50");
  EXPECT_EQ(j.at("num_queries"), 3);
  EXPECT_EQ(j.at("mrr").get<double>(), r.mrr);
  EXPECT_EQ(j.at("hits").at("10").get<double>(), 1.0);
  EXPECT_EQ(j.size(), 4u);
}

TEST(Report, TsvColumns) {
  const KnowledgeGraph g(Vocabulary({"a", "b"}), Vocabulary({"r"}), {{0, 0, 1}});
  RankingReport r = summarize({{Triple{0, 0, 1}, QueryDirection::Subject, 2.5}}, Protocol::Full);
  const auto path = std::filesystem::temp_directory_path() / "rkg_eval_report.tsv";
  r.write_tsv(path, g);
  std::ifstream in(path);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "head\trel\ttail\tdirection\trank");
  EXPECT_EQ(row, "a\tr\tb\tsubject-side\t2.5");
  std::filesystem::remove(path);
}

TEST(Evaluate, MatchesBruteForceOracle) {
  Rng rng(2024);
  int checked = 0;
  const Family families[] = {Family::DistMult, Family::ComplEx, Family::CP, Family::RESCAL, Family::TuckER};
  for (int g = 0; checked < 1000; ++g) {
    const Family f = families[g % 5];
    const int ne = 5 + g % 40, nr = 1 + g % 4;
    const auto train = random_triples(rng, ne, nr, ne);
    const auto test = random_triples(rng, ne, nr, 10);
    const std::vector<std::span<const Triple>> splits{train, test};
    const FilterIndex filter(splits);
    const auto params = tied_model(f, ne, nr, rng);
    EvalOptions opts;
    const auto report = evaluate(params, test, filter, static_cast<std::size_t>(nr), opts);
    ASSERT_EQ(report.num_queries(), 2 * test.size());
    for (const auto& r : report.per_query) {
      EXPECT_EQ(r.rank, brute_force_rank_oracle(params, filter, r.triple, r.direction, static_cast<std::size_t>(nr)))
          << family_name(f) << " graph " << g;
      ++checked;
    }
  }
}

TEST(Evaluate, OracleCoversTies) {
  Rng rng(3);
  auto params = ModelParams::initialize(ModelSpec::make(Family::DistMult, 4), 6, 2, 1.0, rng);
  for (int i = 1; i < 6; ++i) params.entities.values.row(i) = params.entities.values.row(0);
  const std::vector<Triple> test{{0, 0, 1}};
  const std::vector<std::span<const Triple>> splits{test};
  const FilterIndex filter(splits);
  const auto report = evaluate(params, test, filter, 1, {});
  EXPECT_EQ(report.per_query[0].rank, 3.5);
  EXPECT_EQ(report.per_query[1].rank, 3.5);
  EXPECT_EQ(brute_force_rank_oracle(params, filter, test[0], QueryDirection::Object, 1), 3.5);
}

TEST(Evaluate, SingleEntityGraph) {
  Rng rng(1);
  const auto params = ModelParams::initialize(ModelSpec::make(Family::ComplEx, 4), 1, 2, 1.0, rng);
  const std::vector<Triple> test{{0, 0, 0}};
  const std::vector<std::span<const Triple>> splits{test};
  const FilterIndex filter(splits);
  const auto report = evaluate(params, test, filter, 1, {});
  EXPECT_EQ(report.mrr, 1.0);
  EXPECT_EQ(brute_force_rank_oracle(params, filter, test[0], QueryDirection::Subject, 1), 1.0);
}

TEST(Evaluate, FilterUsesKnownAnswers) {
  // Entity 2 outranks the target but is a known answer for the same query.
  ModelParams params;
  params.spec = ModelSpec::make(Family::DistMult, 1);
  params.entities.values = Matrix{{1.0}, {2.0}, {3.0}};
  params.relations.values = Matrix{{1.0}, {1.0}};
  const std::vector<Triple> train{{0, 0, 2}};
  const std::vector<Triple> test{{0, 0, 1}};
  const std::vector<std::span<const Triple>> splits{train, test};
  const FilterIndex filter(splits);
  EvalOptions opts;
  opts.subject_side = false;
  EXPECT_EQ(evaluate(params, test, filter, 1, opts).per_query[0].rank, 1.0);
  const std::vector<std::span<const Triple>> unfiltered{test};
  EXPECT_EQ(evaluate(params, test, FilterIndex(unfiltered), 1, opts).per_query[0].rank, 2.0);
}

TEST(Evaluate, SubjectSideNeedsReciprocals) {
  Rng rng(1);
  const auto params = ModelParams::initialize(ModelSpec::make(Family::DistMult, 4), 4, 2, 1.0, rng);
  const std::vector<Triple> test{{0, 0, 1}};
  const std::vector<std::span<const Triple>> splits{test};
  EXPECT_THROW(evaluate(params, test, FilterIndex(splits), 2, {}), ConfigError);
  EvalOptions opts;
  opts.subject_side = false;
  EXPECT_NO_THROW(evaluate(params, test, FilterIndex(splits), 2, opts));
}

TEST(Evaluate, PartialProtocolIsSeededAndEasier) {
  Rng rng(9);
  const int ne = 150, nr = 3;
  const auto train = random_triples(rng, ne, nr, 400);
  const auto test = random_triples(rng, ne, nr, 100);
  const std::vector<std::span<const Triple>> splits{train, test};
  const FilterIndex filter(splits);
  const auto params = ModelParams::initialize(ModelSpec::make(Family::ComplEx, 8), ne, 2 * nr, 1.0, rng);
  EvalOptions full;
  EvalOptions partial;
  partial.protocol = Protocol::Partial50;
  partial.seed = 17;
  const auto rf = evaluate(params, test, filter, nr, full);
  const auto rp1 = evaluate(params, test, filter, nr, partial);
  const auto rp2 = evaluate(params, test, filter, nr, partial);
  EXPECT_EQ(rp1.to_json(), rp2.to_json());
  EXPECT_GE(rp1.hits.at(10), rf.hits.at(10));
  for (std::size_t i = 0; i < rf.per_query.size(); ++i) {
    EXPECT_LE(rp1.per_query[i].rank, rf.per_query[i].rank);
    EXPECT_LE(rp1.per_query[i].rank, 51.0);
  }
  partial.seed = 18;
  EXPECT_NE(evaluate(params, test, filter, nr, partial).to_json(), rp1.to_json());
}

TEST(Evaluate, PartialUsesAllWhenFewCandidates) {
  Rng rng(4);
  const auto params = ModelParams::initialize(ModelSpec::make(Family::DistMult, 4), 20, 2, 1.0, rng);
  const std::vector<Triple> test{{0, 0, 1}, {3, 0, 7}};
  const std::vector<std::span<const Triple>> splits{test};
  const FilterIndex filter(splits);
  EvalOptions partial;
  partial.protocol = Protocol::Partial50;
  const auto rp = evaluate(params, test, filter, 1, partial);
  const auto rf = evaluate(params, test, filter, 1, {});
  for (std::size_t i = 0; i < rf.per_query.size(); ++i) EXPECT_EQ(rp.per_query[i].rank, rf.per_query[i].rank);
}

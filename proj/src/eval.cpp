#include "rkg/eval.h"

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

#include "rkg/errors.h"
#include "rkg/scoring.h"

namespace rkg {

namespace {

constexpr int kHitsAt[] = {1, 3, 10};

struct Query {
  EntityId anchor;
  RelationId relation;
  EntityId target;
  std::span<const EntityId> known;
};

Query make_query(const Triple& t, QueryDirection d, const FilterIndex& filter, std::size_t base_relations) {
  if (d == QueryDirection::Object) {
    return {t.subject, t.relation, t.object, filter.objects(t.subject, t.relation)};
  }
  return {t.object, static_cast<RelationId>(t.relation + static_cast<RelationId>(base_relations)), t.subject,
          filter.subjects(t.relation, t.object)};
}

std::vector<EntityId> without(std::span<const EntityId> known, EntityId target) {
  std::vector<EntityId> out;
  out.reserve(known.size());
  for (EntityId e : known) {
    if (e != target) out.push_back(e);
  }
  return out;
}

double partial_rank(const Vector& scores, EntityId target, std::span<const EntityId> filtered, std::size_t negatives,
                    Rng& rng) {
  const auto n = static_cast<std::size_t>(scores.size());
  std::vector<char> excluded(n, 0);
  for (EntityId e : filtered) excluded[static_cast<std::size_t>(e)] = 1;
  excluded[static_cast<std::size_t>(target)] = 1;
  std::vector<EntityId> pool;
  pool.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!excluded[i]) pool.push_back(static_cast<EntityId>(i));
  }
  const std::size_t take = std::min(negatives, pool.size());
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  const double st = scores(target);
  double greater = 0.0, ties = 0.0;
  for (std::size_t i = 0; i < take; ++i) {
    const double s = scores(pool[i]);
    if (s > st) {
      greater += 1.0;
    } else if (s == st) {
      ties += 1.0;
    }
  }
  return 1.0 + greater + ties / 2.0;
}

}  // namespace

std::string_view protocol_name(Protocol p) { return p == Protocol::Full ? "full" : "partial-50"; }

Protocol parse_protocol(std::string_view name) {
  if (name == "full") return Protocol::Full;
  if (name == "partial-50" || name == "partial50") return Protocol::Partial50;
  throw ConfigError("unknown protocol: " + std::string(name));
}

std::string_view direction_name(QueryDirection d) {
  return d == QueryDirection::Object ? "object-side" : "subject-side";
}

double filtered_rank(std::span<const double> scores, EntityId target, std::span<const EntityId> filtered) {
  if (target < 0 || static_cast<std::size_t>(target) >= scores.size()) {
    throw IndexError("target out of range: " + std::to_string(target));
  }
  std::vector<char> excluded(scores.size(), 0);
  for (EntityId e : filtered) {
    if (e < 0 || static_cast<std::size_t>(e) >= scores.size()) {
      throw IndexError("filtered id out of range: " + std::to_string(e));
    }
    if (e == target) throw std::logic_error("target is in the filtered set");
    excluded[static_cast<std::size_t>(e)] = 1;
  }
  const double st = scores[static_cast<std::size_t>(target)];
  double greater = 0.0, ties = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (excluded[i] || static_cast<EntityId>(i) == target) continue;
    if (scores[i] > st) {
      greater += 1.0;
    } else if (scores[i] == st) {
      ties += 1.0;
    }
  }
  return 1.0 + greater + ties / 2.0;
}

RankingReport summarize(std::vector<QueryResult> per_query, Protocol protocol) {
  RankingReport r;
  r.protocol = protocol;
  r.per_query = std::move(per_query);
  for (int k : kHitsAt) r.hits[k] = 0.0;
  if (r.per_query.empty()) return r;
  double rr = 0.0;
  for (const auto& q : r.per_query) {
    rr += 1.0 / q.rank;
    for (int k : kHitsAt) {
      if (q.rank <= k) r.hits[k] += 1.0;
    }
  }
  const double n = static_cast<double>(r.per_query.size());
  r.mrr = rr / n;
  for (auto& [k, h] : r.hits) h /= n;
  return r;
}

std::string RankingReport::to_json() const {
  nlohmann::ordered_json j;
  j["protocol"] = protocol_name(protocol);
  j["mrr"] = mrr;
  nlohmann::ordered_json h;
  for (const auto& [k, v] : hits) h[std::to_string(k)] = v;
  j["hits"] = h;
  j["num_queries"] = num_queries();
  return j.dump(2);
}

void RankingReport::write_json(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json() << '\n';
}

void RankingReport::write_tsv(const std::filesystem::path& path, const KnowledgeGraph& names) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "head\trel\ttail\tdirection\trank\n";
  for (const auto& q : per_query) {
    out << names.entities().name(q.triple.subject) << '\t' << names.relations().name(q.triple.relation) << '\t'
        << names.entities().name(q.triple.object) << '\t' << direction_name(q.direction) << '\t' << q.rank << '\n';
  }
}

RankingReport evaluate(const ModelParams& params, std::span<const Triple> queries, const FilterIndex& filter,
                       std::size_t base_relations, const EvalOptions& options) {
  if (options.subject_side && params.num_relations() < 2 * base_relations) {
    throw ConfigError("subject-side ranking needs reciprocal relations in the model");
  }
  Rng rng(options.seed);
  std::vector<QueryResult> results;
  results.reserve(queries.size() * (options.subject_side ? 2 : 1));
  std::vector<QueryDirection> dirs{QueryDirection::Object};
  if (options.subject_side) dirs.push_back(QueryDirection::Subject);
  for (const Triple& t : queries) {
    if (t.relation < 0 || static_cast<std::size_t>(t.relation) >= base_relations) {
      throw IndexError("query relation is not a base relation: " + std::to_string(t.relation));
    }
    for (QueryDirection d : dirs) {
      const Query q = make_query(t, d, filter, base_relations);
      const Vector scores = score_all_objects(params, q.anchor, q.relation);
      const auto filtered = without(q.known, q.target);
      double rank = 0.0;
      if (options.protocol == Protocol::Full) {
        rank = filtered_rank({scores.data(), static_cast<std::size_t>(scores.size())}, q.target, filtered);
      } else {
        rank = partial_rank(scores, q.target, filtered, options.partial_negatives, rng);
      }
      results.push_back({t, d, rank});
    }
  }
  return summarize(std::move(results), options.protocol);
}

double brute_force_rank_oracle(const ModelParams& params, const FilterIndex& filter, const Triple& t,
                               QueryDirection direction, std::size_t base_relations) {
  const auto rel = static_cast<RelationId>(base_relations);
  auto candidate = [&](EntityId e) {
    return direction == QueryDirection::Object ? Triple{t.subject, t.relation, e}
                                               : Triple{t.object, t.relation + rel, e};
  };
  auto known = [&](EntityId e) {
    return direction == QueryDirection::Object ? filter.contains({t.subject, t.relation, e})
                                               : filter.contains({e, t.relation, t.object});
  };
  const EntityId target = direction == QueryDirection::Object ? t.object : t.subject;
  const double st = score_triple(params, candidate(target));
  double rank = 1.0;
  for (EntityId e = 0; e < static_cast<EntityId>(params.num_entities()); ++e) {
    if (e == target || known(e)) continue;
    const double s = score_triple(params, candidate(e));
    if (s > st) rank += 1.0;
    if (s == st) rank += 0.5;
  }
  return rank;
}

}  // namespace rkg

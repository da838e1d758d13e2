#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rkg/graph.h"
#include "rkg/model.h"

namespace rkg {

enum class Protocol { Full, Partial50 };
enum class QueryDirection { Subject, Object };

std::string_view protocol_name(Protocol p);
Protocol parse_protocol(std::string_view name);
std::string_view direction_name(QueryDirection d);

// Rank of `target` after dropping the `filtered` candidates:
// 1 + #(strictly greater) + #(ties) / 2.
double filtered_rank(std::span<const double> scores, EntityId target, std::span<const EntityId> filtered);

struct QueryResult {
  Triple triple;
  QueryDirection direction = QueryDirection::Object;
  double rank = 1.0;
};

struct RankingReport {
  Protocol protocol = Protocol::Full;
  std::vector<QueryResult> per_query;
  double mrr = 0.0;
  std::map<int, double> hits;  // K in {1, 3, 10}

  std::size_t num_queries() const { return per_query.size(); }
  std::string to_json() const;
  void write_json(const std::filesystem::path& path) const;
  // Columns: head rel tail direction rank.
  void write_tsv(const std::filesystem::path& path, const KnowledgeGraph& names) const;
};

RankingReport summarize(std::vector<QueryResult> per_query, Protocol protocol);

struct EvalOptions {
  Protocol protocol = Protocol::Full;
  bool subject_side = true;
  std::uint64_t seed = 0;
  std::size_t partial_negatives = 50;
};

// Ranks (s, p, ?) natively and (?, p, o) through the reciprocal query
// (o, p + base_relations, ?). `queries` use base relation ids.
RankingReport evaluate(const ModelParams& params, std::span<const Triple> queries, const FilterIndex& filter,
                       std::size_t base_relations, const EvalOptions& options);

// One scalar score per candidate, no vectorized path; full protocol only.
double brute_force_rank_oracle(const ModelParams& params, const FilterIndex& filter, const Triple& t,
                               QueryDirection direction, std::size_t base_relations);

}  // namespace rkg

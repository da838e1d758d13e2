#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <string_view>

namespace rkg {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

enum class Family { DistMult, ComplEx, CP, RESCAL, TuckER };

std::string_view family_name(Family f);
Family parse_family(std::string_view name);

struct ModelSpec {
  Family family = Family::DistMult;
  int entity_dim = 0;    // K; ComplEx stores [real | imag] halves
  int relation_dim = 0;  // K, K*K for RESCAL, k_p for TuckER

  // relation_dim < 0 picks the family default (TuckER defaults to K).
  static ModelSpec make(Family family, int entity_dim, int relation_dim = -1);

  void validate() const;
  bool has_object_table() const { return family == Family::CP; }
  bool has_core() const { return family == Family::TuckER; }
  // Core tensor stored as a (K * k_p) x K matrix: W[i, j, k] = core(i * k_p + j, k).
  int core_rows() const { return has_core() ? entity_dim * relation_dim : 0; }
  int core_cols() const { return has_core() ? entity_dim : 0; }
};

struct EmbeddingTable {
  Matrix values;
  double init_scale = 0.02;

  std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(values.cols()); }
  std::span<const double> row(std::size_t i) const {
    return {values.data() + i * dim(), dim()};
  }

  // Fills every entry i.i.d. from N(0, init_scale^2).
  void reinitialize(Rng& rng);
};

EmbeddingTable make_table(std::size_t rows, std::size_t dim, double init_scale, Rng& rng);

// theta = (entity table, relation table) plus the CP object-role table and the
// TuckER core where the family needs them.
struct ModelParams {
  ModelSpec spec;
  EmbeddingTable entities;
  EmbeddingTable relations;
  EmbeddingTable object_entities;
  Matrix core;

  const EmbeddingTable& subject_table() const { return entities; }
  const EmbeddingTable& object_table() const { return spec.has_object_table() ? object_entities : entities; }
  EmbeddingTable& object_table() { return spec.has_object_table() ? object_entities : entities; }

  std::size_t num_entities() const { return entities.rows(); }
  std::size_t num_relations() const { return relations.rows(); }

  static ModelParams initialize(const ModelSpec& spec, std::size_t num_entities, std::size_t num_relations,
                                double init_scale, Rng& rng);
};

}  // namespace rkg

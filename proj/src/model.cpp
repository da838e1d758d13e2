#include "rkg/model.h"

#include <cmath>

#include "rkg/errors.h"

namespace rkg {

std::string_view family_name(Family f) {
  switch (f) {
    case Family::DistMult: return "distmult";
    case Family::ComplEx: return "complex";
    case Family::CP: return "cp";
    case Family::RESCAL: return "rescal";
    case Family::TuckER: return "tucker";
  }
  return "unknown";
}

Family parse_family(std::string_view name) {
  for (auto f : {Family::DistMult, Family::ComplEx, Family::CP, Family::RESCAL, Family::TuckER}) {
    if (family_name(f) == name) return f;
  }
  throw ConfigError("unknown model family '" + std::string(name) + "'");
}

ModelSpec ModelSpec::make(Family family, int entity_dim, int relation_dim) {
  ModelSpec s;
  s.family = family;
  s.entity_dim = entity_dim;
  switch (family) {
    case Family::RESCAL: s.relation_dim = entity_dim * entity_dim; break;
    case Family::TuckER: s.relation_dim = relation_dim > 0 ? relation_dim : entity_dim; break;
    default: s.relation_dim = entity_dim; break;
  }
  s.validate();
  return s;
}

void ModelSpec::validate() const {
  if (entity_dim <= 0) throw ConfigError("entity dimension must be positive");
  if (family == Family::ComplEx && entity_dim % 2 != 0) {
    throw ShapeError("ComplEx needs an even dimension ([real | imag] layout), got " + std::to_string(entity_dim));
  }
  if (family == Family::RESCAL && relation_dim != entity_dim * entity_dim) {
    throw ShapeError("RESCAL relation dimension must be K*K");
  }
  if (family == Family::TuckER && relation_dim <= 0) throw ShapeError("TuckER relation dimension must be positive");
  if ((family == Family::DistMult || family == Family::ComplEx || family == Family::CP) &&
      relation_dim != entity_dim) {
    throw ShapeError(std::string(family_name(family)) + " relation dimension must equal the entity dimension");
  }
}

void EmbeddingTable::reinitialize(Rng& rng) {
  std::normal_distribution<double> normal(0.0, init_scale);
  double* data = values.data();
  for (Eigen::Index i = 0; i < values.size(); ++i) data[i] = normal(rng);
}

EmbeddingTable make_table(std::size_t rows, std::size_t dim, double init_scale, Rng& rng) {
  EmbeddingTable t;
  t.values.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dim));
  t.init_scale = init_scale;
  t.reinitialize(rng);
  return t;
}

ModelParams ModelParams::initialize(const ModelSpec& spec, std::size_t num_entities, std::size_t num_relations,
                                    double init_scale, Rng& rng) {
  spec.validate();
  if (init_scale <= 0.0) throw ConfigError("init_scale must be positive");
  ModelParams p;
  p.spec = spec;
  const auto k = static_cast<std::size_t>(spec.entity_dim);
  p.entities = make_table(num_entities, k, init_scale, rng);
  p.relations = make_table(num_relations, static_cast<std::size_t>(spec.relation_dim), init_scale, rng);
  if (spec.has_object_table()) p.object_entities = make_table(num_entities, k, init_scale, rng);
  if (spec.has_core()) {
    const double sd = 1.0 / std::sqrt(static_cast<double>(spec.entity_dim) * spec.relation_dim * spec.entity_dim);
    std::normal_distribution<double> normal(0.0, sd);
    p.core.resize(spec.core_rows(), spec.core_cols());
    for (Eigen::Index i = 0; i < p.core.size(); ++i) p.core.data()[i] = normal(rng);
  }
  return p;
}

}  // namespace rkg

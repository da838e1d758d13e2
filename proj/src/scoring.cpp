#include "rkg/scoring.h"

#include <string>

#include "rkg/errors.h"

namespace rkg {

namespace {

void require_equal(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": length mismatch (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
  }
}

void check_index(std::int64_t id, std::size_t n, const char* what) {
  if (id < 0 || static_cast<std::size_t>(id) >= n) {
    throw IndexError(std::string(what) + " id " + std::to_string(id) + " out of range");
  }
}

}  // namespace

double score_distmult(ConstVec s, ConstVec p, ConstVec o) {
  require_equal(s.size(), p.size(), "distmult");
  require_equal(s.size(), o.size(), "distmult");
  double acc = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) acc += p[i] * (s[i] * o[i]);
  return acc;
}

double score_complex(ConstVec s, ConstVec p, ConstVec o) {
  require_equal(s.size(), p.size(), "complex");
  require_equal(s.size(), o.size(), "complex");
  if (s.size() % 2 != 0) throw ShapeError("complex: odd length " + std::to_string(s.size()));
  const std::size_t d = s.size() / 2;
  double acc = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double sr = s[i], si = s[d + i], pr = p[i], pi = p[d + i], orr = o[i], oi = o[d + i];
    acc += pr * sr * orr + pr * si * oi + pi * sr * oi - pi * si * orr;
  }
  return acc;
}

double score_cp(ConstVec s_subj, ConstVec p, ConstVec o_obj) { return score_distmult(s_subj, p, o_obj); }

double score_rescal(ConstVec s, ConstVec p_matrix, ConstVec o) {
  require_equal(s.size(), o.size(), "rescal");
  require_equal(p_matrix.size(), s.size() * s.size(), "rescal relation matrix");
  const std::size_t k = s.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < k; ++j) row += p_matrix[i * k + j] * o[j];
    acc += s[i] * row;
  }
  return acc;
}

double score_tucker(ConstVec s, ConstVec p, ConstVec o, ConstVec core) {
  const std::size_t ks = s.size(), kp = p.size(), ko = o.size();
  require_equal(core.size(), ks * kp * ko, "tucker core");
  double acc = 0.0;
  for (std::size_t i = 0; i < ks; ++i) {
    for (std::size_t j = 0; j < kp; ++j) {
      const double* w = core.data() + (i * kp + j) * ko;
      double inner = 0.0;
      for (std::size_t k = 0; k < ko; ++k) inner += w[k] * o[k];
      acc += s[i] * p[j] * inner;
    }
  }
  return acc;
}

Scorer::Scorer(const ModelSpec& spec, const Matrix* core) : spec_(spec), core_(core) {
  spec_.validate();
  if (spec_.has_core()) {
    if (core_ == nullptr) throw ShapeError("TuckER scorer needs a core tensor");
    if (core_->rows() != spec_.core_rows() || core_->cols() != spec_.core_cols()) {
      throw ShapeError("TuckER core has the wrong shape");
    }
  }
}

std::size_t Scorer::slot_dim(Slot slot) const {
  return slot == Slot::Relation ? static_cast<std::size_t>(spec_.relation_dim)
                                : static_cast<std::size_t>(spec_.entity_dim);
}

void Scorer::check(ConstVec v, std::size_t expected, const char* what) const {
  if (v.size() != expected) {
    throw ShapeError(std::string(family_name(spec_.family)) + ": " + what + " has length " +
                     std::to_string(v.size()) + ", expected " + std::to_string(expected));
  }
}

double Scorer::score(ConstVec s, ConstVec p, ConstVec o) const {
  check(s, slot_dim(Slot::Subject), "subject");
  check(p, slot_dim(Slot::Relation), "relation");
  check(o, slot_dim(Slot::Object), "object");
  switch (spec_.family) {
    case Family::DistMult: return score_distmult(s, p, o);
    case Family::ComplEx: return score_complex(s, p, o);
    case Family::CP: return score_cp(s, p, o);
    case Family::RESCAL: return score_rescal(s, p, o);
    case Family::TuckER:
      return score_tucker(s, p, o, ConstVec(core_->data(), static_cast<std::size_t>(core_->size())));
  }
  return 0.0;
}

Vector Scorer::partial(Slot slot, ConstVec a, ConstVec b) const {
  Vector out(static_cast<Eigen::Index>(slot_dim(slot)));
  partial(slot, a, b, MutVec(out.data(), static_cast<std::size_t>(out.size())));
  return out;
}

void Scorer::partial(Slot slot, ConstVec a, ConstVec b, MutVec out) const {
  const std::size_t k = static_cast<std::size_t>(spec_.entity_dim);
  const std::size_t kr = static_cast<std::size_t>(spec_.relation_dim);
  switch (slot) {
    case Slot::Subject: check(a, kr, "relation"); check(b, k, "object"); break;
    case Slot::Relation: check(a, k, "subject"); check(b, k, "object"); break;
    case Slot::Object: check(a, k, "subject"); check(b, kr, "relation"); break;
  }
  check(ConstVec(out.data(), out.size()), slot_dim(slot), "output");

  switch (spec_.family) {
    case Family::DistMult:
    case Family::CP:
      for (std::size_t i = 0; i < k; ++i) out[i] = a[i] * b[i];
      return;
    case Family::ComplEx: {
      const std::size_t d = k / 2;
      for (std::size_t i = 0; i < d; ++i) {
        const double ar = a[i], ai = a[d + i], br = b[i], bi = b[d + i];
        switch (slot) {
          case Slot::Subject:  // a = p, b = o
            out[i] = ar * br + ai * bi;
            out[d + i] = ar * bi - ai * br;
            break;
          case Slot::Relation:  // a = s, b = o
            out[i] = ar * br + ai * bi;
            out[d + i] = ar * bi - ai * br;
            break;
          case Slot::Object:  // a = s, b = p
            out[i] = ar * br - ai * bi;
            out[d + i] = ar * bi + ai * br;
            break;
        }
      }
      return;
    }
    case Family::RESCAL: {
      switch (slot) {
        case Slot::Subject:  // P o
          for (std::size_t i = 0; i < k; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < k; ++j) acc += a[i * k + j] * b[j];
            out[i] = acc;
          }
          return;
        case Slot::Relation:  // s o^T
          for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = 0; j < k; ++j) out[i * k + j] = a[i] * b[j];
          }
          return;
        case Slot::Object:  // P^T s
          for (std::size_t j = 0; j < k; ++j) out[j] = 0.0;
          for (std::size_t i = 0; i < k; ++i) {
            const double si = a[i];
            for (std::size_t j = 0; j < k; ++j) out[j] += si * b[i * k + j];
          }
          return;
      }
      return;
    }
    case Family::TuckER: {
      const double* w = core_->data();
      switch (slot) {
        case Slot::Subject:  // sum_jk W[i,j,k] p_j o_k
          for (std::size_t i = 0; i < k; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < kr; ++j) {
              const double* wij = w + (i * kr + j) * k;
              double inner = 0.0;
              for (std::size_t m = 0; m < k; ++m) inner += wij[m] * b[m];
              acc += a[j] * inner;
            }
            out[i] = acc;
          }
          return;
        case Slot::Relation:  // sum_ik W[i,j,k] s_i o_k
          for (std::size_t j = 0; j < kr; ++j) out[j] = 0.0;
          for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = 0; j < kr; ++j) {
              const double* wij = w + (i * kr + j) * k;
              double inner = 0.0;
              for (std::size_t m = 0; m < k; ++m) inner += wij[m] * b[m];
              out[j] += a[i] * inner;
            }
          }
          return;
        case Slot::Object:  // sum_ij W[i,j,k] s_i p_j
          for (std::size_t m = 0; m < k; ++m) out[m] = 0.0;
          for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = 0; j < kr; ++j) {
              const double sp = a[i] * b[j];
              const double* wij = w + (i * kr + j) * k;
              for (std::size_t m = 0; m < k; ++m) out[m] += sp * wij[m];
            }
          }
          return;
      }
      return;
    }
  }
}

void Scorer::accumulate_core_gradient(ConstVec s, ConstVec p, ConstVec o, double weight, Matrix& grad) const {
  if (!spec_.has_core()) return;
  const std::size_t k = static_cast<std::size_t>(spec_.entity_dim);
  const std::size_t kr = static_cast<std::size_t>(spec_.relation_dim);
  check(s, k, "subject");
  check(p, kr, "relation");
  check(o, k, "object");
  if (grad.rows() != spec_.core_rows() || grad.cols() != spec_.core_cols()) {
    throw ShapeError("core gradient has the wrong shape");
  }
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < kr; ++j) {
      const double sp = weight * s[i] * p[j];
      double* g = grad.data() + (i * kr + j) * k;
      for (std::size_t m = 0; m < k; ++m) g[m] += sp * o[m];
    }
  }
}

ScoreGradient grad_score(const ModelSpec& spec, ConstVec s, ConstVec p, ConstVec o, const Matrix* core) {
  Scorer scorer(spec, core);
  ScoreGradient g;
  g.d_subject = scorer.partial(Slot::Subject, p, o);
  g.d_relation = scorer.partial(Slot::Relation, s, o);
  g.d_object = scorer.partial(Slot::Object, s, p);
  if (spec.has_core()) {
    g.d_core = Matrix::Zero(spec.core_rows(), spec.core_cols());
    scorer.accumulate_core_gradient(s, p, o, 1.0, g.d_core);
  }
  return g;
}

namespace {

// Same summation order for every row, so identical rows score identically.
Vector rowwise_dot(const Matrix& m, const Vector& q) {
  Vector out(m.rows());
  const auto k = static_cast<std::size_t>(m.cols());
  const double* qd = q.data();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double* row = m.data() + static_cast<std::size_t>(i) * k;
    double acc[4] = {0.0, 0.0, 0.0, 0.0};
    std::size_t j = 0;
    for (; j + 4 <= k; j += 4) {
      for (std::size_t l = 0; l < 4; ++l) acc[l] += row[j + l] * qd[j + l];
    }
    for (; j < k; ++j) acc[j % 4] += row[j] * qd[j];
    out[i] = (acc[0] + acc[1]) + (acc[2] + acc[3]);
  }
  return out;
}

}  // namespace

Vector score_all_objects(const ModelParams& params, EntityId s, RelationId p) {
  check_index(s, params.num_entities(), "subject");
  check_index(p, params.num_relations(), "relation");
  Scorer scorer(params.spec, params.spec.has_core() ? &params.core : nullptr);
  const Vector q = scorer.partial(Slot::Object, params.subject_table().row(static_cast<std::size_t>(s)),
                                  params.relations.row(static_cast<std::size_t>(p)));
  return rowwise_dot(params.object_table().values, q);
}

Vector score_all_subjects(const ModelParams& params, RelationId p, EntityId o) {
  check_index(o, params.num_entities(), "object");
  check_index(p, params.num_relations(), "relation");
  Scorer scorer(params.spec, params.spec.has_core() ? &params.core : nullptr);
  const Vector q = scorer.partial(Slot::Subject, params.relations.row(static_cast<std::size_t>(p)),
                                  params.object_table().row(static_cast<std::size_t>(o)));
  return rowwise_dot(params.subject_table().values, q);
}

Vector score_all_relations(const ModelParams& params, EntityId s, EntityId o) {
  check_index(s, params.num_entities(), "subject");
  check_index(o, params.num_entities(), "object");
  Scorer scorer(params.spec, params.spec.has_core() ? &params.core : nullptr);
  const Vector q = scorer.partial(Slot::Relation, params.subject_table().row(static_cast<std::size_t>(s)),
                                  params.object_table().row(static_cast<std::size_t>(o)));
  return rowwise_dot(params.relations.values, q);
}

double score_triple(const ModelParams& params, const Triple& t) {
  check_index(t.subject, params.num_entities(), "subject");
  check_index(t.object, params.num_entities(), "object");
  check_index(t.relation, params.num_relations(), "relation");
  Scorer scorer(params.spec, params.spec.has_core() ? &params.core : nullptr);
  return scorer.score(params.subject_table().row(static_cast<std::size_t>(t.subject)),
                      params.relations.row(static_cast<std::size_t>(t.relation)),
                      params.object_table().row(static_cast<std::size_t>(t.object)));
}

}  // namespace rkg

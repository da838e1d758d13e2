#pragma once

#include <span>

#include "rkg/graph.h"
#include "rkg/model.h"

namespace rkg {

using ConstVec = std::span<const double>;
using MutVec = std::span<double>;

// Scalar scoring functions Gamma(s, p, o). All throw ShapeError on mismatched lengths.
double score_distmult(ConstVec s, ConstVec p, ConstVec o);
// Re(<s, p, conj(o)>) with [real | imag] halves.
double score_complex(ConstVec s, ConstVec p, ConstVec o);
// s from the subject-role table, o from the object-role table.
double score_cp(ConstVec s_subj, ConstVec p, ConstVec o_obj);
// s^T P o with P stored row-major (K*K entries).
double score_rescal(ConstVec s, ConstVec p_matrix, ConstVec o);
// W x1 s x2 p x3 o; `core` has k_s * k_p * k_o entries, index (i * k_p + j) * k_o + k.
double score_tucker(ConstVec s, ConstVec p, ConstVec o, ConstVec core);

enum class Slot { Subject, Relation, Object };

// Every supported Gamma is linear in each of its three arguments, so the
// gradient with respect to one slot is a bilinear map of the other two and
// Gamma = <partial(slot, ...), argument in slot>.
class Scorer {
 public:
  explicit Scorer(const ModelSpec& spec, const Matrix* core = nullptr);

  const ModelSpec& spec() const { return spec_; }

  double score(ConstVec s, ConstVec p, ConstVec o) const;

  // Slot::Subject: (a, b) = (p, o); Slot::Relation: (s, o); Slot::Object: (s, p).
  void partial(Slot slot, ConstVec a, ConstVec b, MutVec out) const;
  Vector partial(Slot slot, ConstVec a, ConstVec b) const;

  // d Gamma / d W accumulated with the given weight (TuckER only).
  void accumulate_core_gradient(ConstVec s, ConstVec p, ConstVec o, double weight, Matrix& grad) const;

  std::size_t slot_dim(Slot slot) const;

 private:
  void check(ConstVec v, std::size_t expected, const char* what) const;

  ModelSpec spec_;
  const Matrix* core_;
};

struct ScoreGradient {
  Vector d_subject;
  Vector d_relation;
  Vector d_object;
  Matrix d_core;  // TuckER only; empty otherwise
};

ScoreGradient grad_score(const ModelSpec& spec, ConstVec s, ConstVec p, ConstVec o, const Matrix* core = nullptr);

// Gamma(s, p, i) for every entity i, as one matrix-vector product.
Vector score_all_objects(const ModelParams& params, EntityId s, RelationId p);
// Gamma(i, p, o) for every entity i.
Vector score_all_subjects(const ModelParams& params, RelationId p, EntityId o);
// Gamma(s, r, o) for every relation r.
Vector score_all_relations(const ModelParams& params, EntityId s, EntityId o);

double score_triple(const ModelParams& params, const Triple& t);

inline ConstVec row_of(const Matrix& m, Eigen::Index i) {
  return {m.data() + i * m.cols(), static_cast<std::size_t>(m.cols())};
}
inline MutVec row_of(Matrix& m, Eigen::Index i) {
  return {m.data() + i * m.cols(), static_cast<std::size_t>(m.cols())};
}

}  // namespace rkg

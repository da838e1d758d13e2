#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace rkg {

using EntityId = std::int32_t;
using RelationId = std::int32_t;

struct Triple {
  EntityId subject = 0;
  RelationId relation = 0;
  EntityId object = 0;

  friend bool operator==(const Triple&, const Triple&) = default;
  friend auto operator<=>(const Triple&, const Triple&) = default;
};

// Ordered name <-> id map; ids are assigned by first insertion.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> names);

  std::int32_t add(std::string_view name);
  std::optional<std::int32_t> find(std::string_view name) const;
  const std::string& name(std::int32_t id) const;

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.names_ == b.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::int32_t> index_;
};

struct Neighbor {
  RelationId relation;
  EntityId entity;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

struct Neighborhood {
  std::span<const Neighbor> outgoing;  // (relation, object) pairs of v's triples
  std::span<const Neighbor> incoming;  // (relation, subject) pairs
};

// Immutable multi-relational graph with per-entity adjacency.
class KnowledgeGraph {
 public:
  static constexpr std::string_view kReciprocalSuffix = "_reciprocal";

  KnowledgeGraph() = default;
  KnowledgeGraph(Vocabulary entities, Vocabulary relations, std::vector<Triple> triples);

  const Vocabulary& entities() const { return entities_; }
  const Vocabulary& relations() const { return relations_; }
  std::span<const Triple> triples() const { return triples_; }

  std::size_t num_entities() const { return entities_.size(); }
  std::size_t num_relations() const { return relations_.size(); }
  std::size_t num_triples() const { return triples_.size(); }

  // Relations before reciprocal augmentation; equals num_relations() otherwise.
  std::size_t num_base_relations() const;
  bool has_reciprocals() const { return reciprocal_base_.has_value(); }
  // Input triples that were dropped as exact duplicates.
  std::size_t duplicates_dropped() const { return duplicates_dropped_; }

  Neighborhood neighborhood(EntityId v) const;
  bool has_self_loops() const;
  bool contains(const Triple& t) const;

  KnowledgeGraph with_reciprocals() const;

 private:
  Vocabulary entities_;
  Vocabulary relations_;
  std::vector<Triple> triples_;
  std::vector<std::vector<Neighbor>> out_index_;
  std::vector<std::vector<Neighbor>> in_index_;
  std::optional<std::size_t> reciprocal_base_;
  std::size_t duplicates_dropped_ = 0;
};

struct ParseOptions {
  const Vocabulary* entities = nullptr;   // fixed prefix of the entity vocabulary
  const Vocabulary* relations = nullptr;  // closed relation vocabulary when set
  bool allow_new_entities = true;
};

KnowledgeGraph parse_triples(const std::filesystem::path& path, const ParseOptions& options = {});

// Returns (o, r + |R|, s) for every (s, r, o); the graph is marked as augmented.
KnowledgeGraph add_reciprocals(const KnowledgeGraph& g);

Neighborhood neighborhood(const KnowledgeGraph& g, EntityId v);

void write_triples(const KnowledgeGraph& g, const std::filesystem::path& path);

// Known-true answers over a union of splits, keyed by (s, r) and (r, o).
class FilterIndex {
 public:
  FilterIndex() = default;
  explicit FilterIndex(std::span<const std::span<const Triple>> splits);

  // Sorted, possibly empty.
  std::span<const EntityId> objects(EntityId s, RelationId r) const;
  std::span<const EntityId> subjects(RelationId r, EntityId o) const;

  bool contains(const Triple& t) const;

 private:
  static std::uint64_t key(std::int32_t a, std::int32_t b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
  }

  std::unordered_map<std::uint64_t, std::vector<EntityId>> objects_;
  std::unordered_map<std::uint64_t, std::vector<EntityId>> subjects_;
};

// train/valid/test splits sharing one entity and relation vocabulary.
struct Dataset {
  KnowledgeGraph train;
  KnowledgeGraph valid;
  KnowledgeGraph test;

  FilterIndex filter_all() const;
};

struct DatasetOptions {
  // Relation vocabulary that must be reused (inductive graphs).
  const Vocabulary* relations = nullptr;
  bool allow_new_entities = true;
};

// Reads <dir>/train.txt, valid.txt, test.txt. Vocabularies are built over the
// splits in that order so that every split indexes the same id space.
Dataset load_dataset(const std::filesystem::path& dir, const DatasetOptions& options = {});

}  // namespace rkg

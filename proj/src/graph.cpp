#include "rkg/graph.h"

#include <algorithm>
#include <array>
#include <fstream>
#include <iostream>
#include <set>

#include "rkg/errors.h"

namespace rkg {

Vocabulary::Vocabulary(std::vector<std::string> names) {
  for (auto& n : names) {
    if (index_.contains(n)) throw VocabularyError("duplicate vocabulary entry '" + n + "'");
    add(n);
  }
}

std::int32_t Vocabulary::add(std::string_view name) {
  auto [it, inserted] = index_.try_emplace(std::string(name), static_cast<std::int32_t>(names_.size()));
  if (inserted) names_.emplace_back(name);
  return it->second;
}

std::optional<std::int32_t> Vocabulary::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocabulary::name(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= names_.size()) {
    throw IndexError("vocabulary id " + std::to_string(id) + " out of range");
  }
  return names_[static_cast<std::size_t>(id)];
}

KnowledgeGraph::KnowledgeGraph(Vocabulary entities, Vocabulary relations, std::vector<Triple> triples)
    : entities_(std::move(entities)), relations_(std::move(relations)) {
  const auto ne = static_cast<std::int64_t>(entities_.size());
  const auto nr = static_cast<std::int64_t>(relations_.size());
  std::set<Triple> seen;
  triples_.reserve(triples.size());
  for (const auto& t : triples) {
    if (t.subject < 0 || t.subject >= ne || t.object < 0 || t.object >= ne || t.relation < 0 ||
        t.relation >= nr) {
      throw IndexError("triple (" + std::to_string(t.subject) + ", " + std::to_string(t.relation) + ", " +
                       std::to_string(t.object) + ") outside the vocabulary");
    }
    if (!seen.insert(t).second) {
      ++duplicates_dropped_;
      continue;
    }
    triples_.push_back(t);
  }
  out_index_.resize(entities_.size());
  in_index_.resize(entities_.size());
  for (const auto& t : triples_) {
    out_index_[static_cast<std::size_t>(t.subject)].push_back({t.relation, t.object});
    in_index_[static_cast<std::size_t>(t.object)].push_back({t.relation, t.subject});
  }
}

std::size_t KnowledgeGraph::num_base_relations() const {
  return reciprocal_base_.value_or(relations_.size());
}

Neighborhood KnowledgeGraph::neighborhood(EntityId v) const {
  if (v < 0 || static_cast<std::size_t>(v) >= entities_.size()) {
    throw IndexError("entity id " + std::to_string(v) + " out of range (|E|=" +
                     std::to_string(entities_.size()) + ")");
  }
  const auto i = static_cast<std::size_t>(v);
  return {out_index_[i], in_index_[i]};
}

bool KnowledgeGraph::has_self_loops() const {
  return std::any_of(triples_.begin(), triples_.end(), [](const Triple& t) { return t.subject == t.object; });
}

bool KnowledgeGraph::contains(const Triple& t) const {
  if (t.subject < 0 || static_cast<std::size_t>(t.subject) >= out_index_.size()) return false;
  const auto& out = out_index_[static_cast<std::size_t>(t.subject)];
  return std::find(out.begin(), out.end(), Neighbor{t.relation, t.object}) != out.end();
}

KnowledgeGraph KnowledgeGraph::with_reciprocals() const {
  if (has_reciprocals()) throw ValueError("graph already carries reciprocal relations");
  for (const auto& name : relations_.names()) {
    if (name.ends_with(kReciprocalSuffix)) {
      throw ValueError("relation '" + name + "' already carries the reciprocal marker");
    }
  }
  const auto base = static_cast<RelationId>(relations_.size());
  Vocabulary rels = relations_;
  for (const auto& name : relations_.names()) rels.add(name + std::string(kReciprocalSuffix));
  std::vector<Triple> all(triples_.begin(), triples_.end());
  all.reserve(2 * triples_.size());
  for (const auto& t : triples_) all.push_back({t.object, t.relation + base, t.subject});
  KnowledgeGraph out(entities_, std::move(rels), std::move(all));
  out.reciprocal_base_ = relations_.size();
  out.duplicates_dropped_ = duplicates_dropped_;
  return out;
}

KnowledgeGraph add_reciprocals(const KnowledgeGraph& g) { return g.with_reciprocals(); }

Neighborhood neighborhood(const KnowledgeGraph& g, EntityId v) { return g.neighborhood(v); }

namespace {

std::vector<std::array<std::string, 3>> read_rows(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::array<std::string, 3>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::array<std::string, 3> fields;
    std::size_t start = 0;
    std::size_t count = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      const auto field = line.substr(start, tab == std::string::npos ? std::string::npos : tab - start);
      if (count < 3) fields[count] = field;
      ++count;
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (count != 3) {
      throw ParseError(path.string(), line_no, "expected 3 tab-separated fields, found " + std::to_string(count));
    }
    if (fields[0].empty() || fields[1].empty() || fields[2].empty()) {
      throw ParseError(path.string(), line_no, "empty field");
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

std::vector<Triple> encode(const std::filesystem::path& path, const std::vector<std::array<std::string, 3>>& rows,
                           Vocabulary& entities, Vocabulary& relations, bool relations_closed,
                           bool allow_new_entities) {
  std::vector<Triple> triples;
  triples.reserve(rows.size());
  auto entity_id = [&](const std::string& name) {
    if (!allow_new_entities) {
      auto id = entities.find(name);
      if (!id) throw VocabularyError(path.string() + ": unknown entity '" + name + "'");
      return *id;
    }
    return entities.add(name);
  };
  for (const auto& row : rows) {
    Triple t;
    t.subject = entity_id(row[0]);
    if (relations_closed) {
      auto id = relations.find(row[1]);
      if (!id) throw VocabularyError(path.string() + ": unknown relation '" + row[1] + "'");
      t.relation = *id;
    } else {
      t.relation = relations.add(row[1]);
    }
    t.object = entity_id(row[2]);
    triples.push_back(t);
  }
  return triples;
}

void warn_duplicates(const std::filesystem::path& path, const KnowledgeGraph& g) {
  if (g.duplicates_dropped() > 0) {
    std::cerr << "warning: " << path.string() << ": dropped " << g.duplicates_dropped() << " duplicate triples\n";
  }
}

}  // namespace

KnowledgeGraph parse_triples(const std::filesystem::path& path, const ParseOptions& options) {
  const auto rows = read_rows(path);
  Vocabulary entities = options.entities ? *options.entities : Vocabulary{};
  Vocabulary relations = options.relations ? *options.relations : Vocabulary{};
  auto triples = encode(path, rows, entities, relations, options.relations != nullptr, options.allow_new_entities);
  KnowledgeGraph g(std::move(entities), std::move(relations), std::move(triples));
  warn_duplicates(path, g);
  return g;
}

void write_triples(const KnowledgeGraph& g, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& t : g.triples()) {
    out << g.entities().name(t.subject) << '\t' << g.relations().name(t.relation) << '\t'
        << g.entities().name(t.object) << '\n';
  }
}

FilterIndex::FilterIndex(std::span<const std::span<const Triple>> splits) {
  for (const auto& split : splits) {
    for (const auto& t : split) {
      objects_[key(t.subject, t.relation)].push_back(t.object);
      subjects_[key(t.relation, t.object)].push_back(t.subject);
    }
  }
  for (auto* m : {&objects_, &subjects_}) {
    for (auto& [k, v] : *m) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    }
  }
}

std::span<const EntityId> FilterIndex::objects(EntityId s, RelationId r) const {
  auto it = objects_.find(key(s, r));
  if (it == objects_.end()) return {};
  return it->second;
}

std::span<const EntityId> FilterIndex::subjects(RelationId r, EntityId o) const {
  auto it = subjects_.find(key(r, o));
  if (it == subjects_.end()) return {};
  return it->second;
}

bool FilterIndex::contains(const Triple& t) const {
  const auto objs = objects(t.subject, t.relation);
  return std::binary_search(objs.begin(), objs.end(), t.object);
}

FilterIndex Dataset::filter_all() const {
  const std::span<const Triple> parts[] = {train.triples(), valid.triples(), test.triples()};
  return FilterIndex(parts);
}

Dataset load_dataset(const std::filesystem::path& dir, const DatasetOptions& options) {
  const char* names[] = {"train.txt", "valid.txt", "test.txt"};
  Vocabulary entities;
  Vocabulary relations = options.relations ? *options.relations : Vocabulary{};
  std::vector<Triple> encoded[3];
  for (int i = 0; i < 3; ++i) {
    const auto path = dir / names[i];
    const auto rows = read_rows(path);
    // Only the training split may introduce relations.
    const bool closed = options.relations != nullptr || i > 0;
    const bool new_entities = i == 0 || options.allow_new_entities;
    encoded[i] = encode(path, rows, entities, relations, closed, new_entities);
  }
  Dataset d{KnowledgeGraph(entities, relations, std::move(encoded[0])),
            KnowledgeGraph(entities, relations, std::move(encoded[1])),
            KnowledgeGraph(entities, relations, std::move(encoded[2]))};
  warn_duplicates(dir / names[0], d.train);
  return d;
}

}  // namespace rkg

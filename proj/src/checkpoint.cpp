#include "rkg/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <json.hpp>
#include <sstream>

#include "rkg/errors.h"

namespace rkg {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads assume a little-endian host");

namespace {

constexpr std::string_view kMagic = "RKGCKPT";

using Json = nlohmann::ordered_json;

struct ArrayRef {
  std::string name;
  const Matrix* data;
};

std::vector<ArrayRef> arrays_of(const Checkpoint& c) {
  std::vector<ArrayRef> out{{"entities", &c.params.entities.values}, {"relations", &c.params.relations.values}};
  if (c.params.spec.has_object_table()) out.push_back({"object_entities", &c.params.object_entities.values});
  if (c.params.spec.has_core()) out.push_back({"core", &c.params.core});
  if (c.optimizer) {
    out.push_back({"opt.entities", &c.optimizer->entities.accumulator});
    out.push_back({"opt.relations", &c.optimizer->relations.accumulator});
    if (c.params.spec.has_object_table()) out.push_back({"opt.object_entities", &c.optimizer->object_entities.accumulator});
    if (c.params.spec.has_core()) out.push_back({"opt.core", &c.optimizer->core.accumulator});
  }
  if (c.features) out.push_back({"features", &*c.features});
  if (c.cache_accumulator) out.push_back({"cache.accumulator", &*c.cache_accumulator});
  return out;
}

Json make_header(const Checkpoint& c, bool f32) {
  Json h;
  h["version"] = kCheckpointVersion;
  h["mode"] = mode_name(c.config.mode);
  h["family"] = family_name(c.params.spec.family);
  h["entity_dim"] = c.params.spec.entity_dim;
  h["relation_dim"] = c.params.spec.relation_dim;
  h["num_entities"] = c.num_entities;
  h["num_relations"] = c.num_relations;
  h["num_base_relations"] = c.num_base_relations;
  h["relation_names"] = c.relation_names;
  h["seed"] = c.config.train.seed;
  h["step"] = c.step;
  h["epoch"] = c.epoch;
  h["best_valid_mrr"] = c.best_valid_mrr ? Json(*c.best_valid_mrr) : Json(nullptr);
  h["best_epoch"] = c.best_epoch;
  h["rng"] = c.rng_state;
  if (c.optimizer) {
    h["optimizer_steps"] = {{"entities", c.optimizer->entities.step_count},
                            {"relations", c.optimizer->relations.step_count},
                            {"object_entities", c.optimizer->object_entities.step_count},
                            {"core", c.optimizer->core.step_count}};
  }
  if (c.config.mode == RunMode::Refactor) {
    h["cache"] = {{"layer_counter", c.layer_counter}, {"batches_since_clear", c.batches_since_clear}};
  }
  Json cfg;
  for (const auto& [k, v] : config_entries(c.config)) cfg[k] = v;
  h["config"] = cfg;
  h["dtype"] = f32 ? "f32" : "f64";
  Json arrays = Json::array();
  for (const auto& a : arrays_of(c)) {
    arrays.push_back({{"name", a.name}, {"rows", a.data->rows()}, {"cols", a.data->cols()}});
  }
  h["arrays"] = arrays;
  return h;
}

template <typename T>
T field(const Json& h, const char* key) {
  try {
    return h.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw DataError(std::string("checkpoint header: missing or invalid '") + key + "'");
  }
}

struct RawFile {
  Json header;
  std::string header_text;
  std::string payload;
};

RawFile read_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  std::string magic, len_line;
  std::getline(in, magic);
  if (magic != kMagic) throw DataError(path.string() + " is not a checkpoint");
  std::getline(in, len_line);
  std::size_t len = 0;
  try {
    len = std::stoul(len_line);
  } catch (const std::exception&) {
    throw DataError("checkpoint header length is malformed");
  }
  RawFile raw;
  raw.header_text.resize(len);
  in.read(raw.header_text.data(), static_cast<std::streamsize>(len));
  if (static_cast<std::size_t>(in.gcount()) != len) throw DataError("checkpoint header is truncated");
  try {
    raw.header = Json::parse(raw.header_text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  std::stringstream rest;
  rest << in.rdbuf();
  raw.payload = rest.str();
  return raw;
}

}  // namespace

std::string rng_to_string(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Rng rng_from_string(const std::string& state) {
  Rng rng;
  std::istringstream is(state);
  is >> rng;
  if (!is) throw DataError("checkpoint rng state is malformed");
  return rng;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path, bool f32) {
  const std::string header = make_header(ckpt, f32).dump(2);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << kMagic << '\n' << header.size() << '\n' << header;
  for (const auto& a : arrays_of(ckpt)) {
    const auto n = static_cast<std::size_t>(a.data->size());
    if (f32) {
      std::vector<float> buf(n);
      for (std::size_t i = 0; i < n; ++i) buf[i] = static_cast<float>(a.data->data()[i]);
      out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)));
    } else {
      out.write(reinterpret_cast<const char*>(a.data->data()), static_cast<std::streamsize>(n * sizeof(double)));
    }
  }
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

std::string read_checkpoint_header(const std::filesystem::path& path) { return read_raw(path).header.dump(2); }

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const RawFile raw = read_raw(path);
  const Json& h = raw.header;
  if (field<int>(h, "version") != kCheckpointVersion) throw CompatibilityError("unsupported checkpoint version");

  Checkpoint c;
  std::string cfg_text;
  try {
    for (const auto& [k, v] : h.at("config").items()) cfg_text += k + " = " + v.get<std::string>() + "\n";
  } catch (const nlohmann::json::exception&) {
    throw DataError("checkpoint header: invalid config echo");
  }
  c.config = parse_run_config(cfg_text, path.string() + " (config echo)");
  c.num_entities = field<std::size_t>(h, "num_entities");
  c.num_relations = field<std::size_t>(h, "num_relations");
  c.num_base_relations = field<std::size_t>(h, "num_base_relations");
  c.relation_names = field<std::vector<std::string>>(h, "relation_names");
  c.step = field<std::int64_t>(h, "step");
  c.epoch = field<std::int64_t>(h, "epoch");
  if (!h.at("best_valid_mrr").is_null()) c.best_valid_mrr = field<double>(h, "best_valid_mrr");
  c.best_epoch = field<std::int64_t>(h, "best_epoch");
  c.rng_state = field<std::string>(h, "rng");
  if (h.contains("cache")) {
    c.layer_counter = field<std::int64_t>(h.at("cache"), "layer_counter");
    c.batches_since_clear = field<std::int64_t>(h.at("cache"), "batches_since_clear");
  }

  const std::string dtype = field<std::string>(h, "dtype");
  if (dtype != "f64" && dtype != "f32") throw DataError("checkpoint dtype must be f64 or f32");
  const std::size_t width = dtype == "f64" ? 8 : 4;

  std::map<std::string, Matrix> arrays;
  std::size_t offset = 0;
  for (const auto& a : h.at("arrays")) {
    const auto name = field<std::string>(a, "name");
    const auto rows = field<Eigen::Index>(a, "rows");
    const auto cols = field<Eigen::Index>(a, "cols");
    if (rows < 0 || cols < 0) throw DataError("checkpoint array '" + name + "' has a negative shape");
    const auto n = static_cast<std::size_t>(rows * cols);
    if (offset + n * width > raw.payload.size()) throw DataError("checkpoint payload is truncated at '" + name + "'");
    Matrix m(rows, cols);
    const char* src = raw.payload.data() + offset;
    if (width == 8) {
      std::memcpy(m.data(), src, n * 8);
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        float f;
        std::memcpy(&f, src + i * 4, 4);
        m.data()[i] = f;
      }
    }
    offset += n * width;
    arrays.emplace(name, std::move(m));
  }
  if (offset != raw.payload.size()) throw DataError("checkpoint payload length does not match the declared arrays");

  const auto take = [&](const std::string& name) -> Matrix {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw DataError("checkpoint is missing array '" + name + "'");
    return std::move(it->second);
  };

  const ModelSpec& spec = c.config.train.model;
  c.params.spec = spec;
  if (field<std::string>(h, "family") != family_name(spec.family) || field<int>(h, "entity_dim") != spec.entity_dim ||
      field<int>(h, "relation_dim") != spec.relation_dim) {
    throw DataError("checkpoint header disagrees with its config echo");
  }
  const double scale = c.config.train.init_scale;
  c.params.entities = {take("entities"), scale};
  c.params.relations = {take("relations"), scale};
  if (spec.has_object_table()) c.params.object_entities = {take("object_entities"), scale};
  if (spec.has_core()) c.params.core = take("core");
  if (c.params.entities.dim() != static_cast<std::size_t>(spec.entity_dim) ||
      c.params.relations.dim() != static_cast<std::size_t>(spec.relation_dim) ||
      c.params.num_entities() != c.num_entities || c.params.num_relations() != c.num_relations) {
    throw DataError("checkpoint tables do not match the declared sizes");
  }
  if (arrays.contains("opt.entities")) {
    OptimizerState s;
    const auto& steps = h.at("optimizer_steps");
    s.entities = {take("opt.entities"), field<std::int64_t>(steps, "entities")};
    s.relations = {take("opt.relations"), field<std::int64_t>(steps, "relations")};
    if (spec.has_object_table()) {
      s.object_entities = {take("opt.object_entities"), field<std::int64_t>(steps, "object_entities")};
    }
    if (spec.has_core()) s.core = {take("opt.core"), field<std::int64_t>(steps, "core")};
    c.optimizer = std::move(s);
  }
  if (arrays.contains("features")) c.features = take("features");
  if (arrays.contains("cache.accumulator")) c.cache_accumulator = take("cache.accumulator");
  return c;
}

}  // namespace rkg

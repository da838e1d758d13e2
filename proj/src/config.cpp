#include "rkg/config.h"

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "rkg/errors.h"

namespace rkg {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

class Reader {
 public:
  Reader(std::string key, std::string value) : key_(std::move(key)), value_(std::move(value)) {}

  [[noreturn]] void fail(const std::string& why) const {
    throw ConfigError("config key '" + key_ + "': " + why + " (got '" + value_ + "')");
  }

  template <typename T>
  T integer() const {
    T out{};
    const auto* end = value_.data() + value_.size();
    const auto res = std::from_chars(value_.data(), end, out);
    if (res.ec != std::errc() || res.ptr != end) fail("expected an integer");
    return out;
  }

  double real() const {
    double out = 0.0;
    const auto* end = value_.data() + value_.size();
    const auto res = std::from_chars(value_.data(), end, out);
    if (res.ec != std::errc() || res.ptr != end) fail("expected a number");
    return out;
  }

  bool boolean() const {
    if (value_ == "true" || value_ == "1") return true;
    if (value_ == "false" || value_ == "0") return false;
    fail("expected true or false");
  }

  template <typename E>
  E choice(std::initializer_list<std::pair<std::string_view, E>> options) const {
    for (const auto& [name, v] : options) {
      if (value_ == name) return v;
    }
    fail("unrecognized value");
  }

  const std::string& text() const { return value_; }

 private:
  std::string key_;
  std::string value_;
};

struct Draft {
  Family family = Family::DistMult;
  int dim = 0;
  int relation_dim = -1;
};

using Setter = void (*)(RunConfig&, Draft&, const Reader&);

const std::map<std::string_view, Setter>& setters() {
  static const std::map<std::string_view, Setter> table{
      {"mode", [](RunConfig& c, Draft&, const Reader& r) {
         c.mode = r.choice<RunMode>({{"fm", RunMode::FM}, {"refactor", RunMode::Refactor}});
       }},
      {"model", [](RunConfig&, Draft& d, const Reader& r) {
         try {
           d.family = parse_family(r.text());
         } catch (const ConfigError&) {
           r.fail("unknown model family");
         }
       }},
      {"dim", [](RunConfig&, Draft& d, const Reader& r) { d.dim = r.integer<int>(); }},
      {"relation_dim", [](RunConfig&, Draft& d, const Reader& r) { d.relation_dim = r.integer<int>(); }},
      {"learning_rate", [](RunConfig& c, Draft&, const Reader& r) { c.train.learning_rate = r.real(); }},
      {"batch_size", [](RunConfig& c, Draft&, const Reader& r) { c.train.batch_size = r.integer<int>(); }},
      {"epochs", [](RunConfig& c, Draft&, const Reader& r) { c.train.epochs = r.integer<int>(); }},
      {"reg_weight", [](RunConfig& c, Draft&, const Reader& r) { c.train.reg_weight = r.real(); }},
      {"rp_weight", [](RunConfig& c, Draft&, const Reader& r) { c.train.rp_weight = r.real(); }},
      {"optimizer", [](RunConfig& c, Draft&, const Reader& r) {
         c.train.optimizer = r.choice<OptimizerKind>({{"sgd", OptimizerKind::SGD}, {"adagrad", OptimizerKind::AdaGrad}});
       }},
      {"adagrad_eps", [](RunConfig& c, Draft&, const Reader& r) { c.train.adagrad_eps = r.real(); }},
      {"forget_interval", [](RunConfig& c, Draft&, const Reader& r) {
         if (r.text() == "none") {
           c.train.forget_interval.reset();
         } else {
           c.train.forget_interval = r.integer<std::int64_t>();
         }
       }},
      {"seed", [](RunConfig& c, Draft&, const Reader& r) { c.train.seed = r.integer<std::uint64_t>(); }},
      {"softmax", [](RunConfig& c, Draft&, const Reader& r) {
         c.train.softmax_mode = r.choice<SoftmaxMode>({{"full", SoftmaxMode::Full}, {"sampled", SoftmaxMode::Sampled}});
       }},
      {"in_batch", [](RunConfig& c, Draft&, const Reader& r) { c.train.negatives.in_batch = r.integer<int>(); }},
      {"global_negatives", [](RunConfig& c, Draft&, const Reader& r) { c.train.negatives.global = r.integer<int>(); }},
      {"entity_sides", [](RunConfig& c, Draft&, const Reader& r) {
         c.train.entity_sides = r.choice<EntitySides>({{"both", EntitySides::Both}, {"object", EntitySides::Object}});
       }},
      {"rp_over_base_relations",
       [](RunConfig& c, Draft&, const Reader& r) { c.train.rp_over_base_relations = r.boolean(); }},
      {"init_scale", [](RunConfig& c, Draft&, const Reader& r) { c.train.init_scale = r.real(); }},
      {"clip_norm", [](RunConfig& c, Draft&, const Reader& r) { c.train.clip_norm = r.real(); }},
      {"lr_schedule", [](RunConfig& c, Draft&, const Reader& r) {
         c.train.lr_schedule =
             r.choice<LrSchedule>({{"constant", LrSchedule::Constant}, {"polynomial", LrSchedule::Polynomial}});
       }},
      {"lr_total_steps", [](RunConfig& c, Draft&, const Reader& r) { c.train.lr_total_steps = r.integer<std::int64_t>(); }},
      {"lr_power", [](RunConfig& c, Draft&, const Reader& r) { c.train.lr_power = r.real(); }},
      {"lr_end", [](RunConfig& c, Draft&, const Reader& r) { c.train.lr_end = r.real(); }},
      {"reciprocals", [](RunConfig& c, Draft&, const Reader& r) { c.reciprocals = r.boolean(); }},
      {"drop_self_loops", [](RunConfig& c, Draft&, const Reader& r) { c.drop_self_loops = r.boolean(); }},
      {"eval_every", [](RunConfig& c, Draft&, const Reader& r) { c.eval_every = r.integer<int>(); }},
      {"eval_protocol", [](RunConfig& c, Draft&, const Reader& r) {
         c.eval_protocol = r.choice<Protocol>({{"full", Protocol::Full}, {"partial-50", Protocol::Partial50}});
       }},
      {"inductive_rounds",
       [](RunConfig& c, Draft&, const Reader& r) { c.inductive_rounds = r.integer<std::int64_t>(); }},
      {"layers", [](RunConfig& c, Draft&, const Reader& r) {
         if (r.text() == "inf") {
           c.refactor.layers.reset();
         } else {
           c.refactor.layers = r.integer<std::int64_t>();
         }
       }},
      {"alpha", [](RunConfig& c, Draft&, const Reader& r) {
         if (r.text() == "auto") {
           c.refactor.alpha.reset();
         } else {
           c.refactor.alpha = r.real();
         }
       }},
      {"beta", [](RunConfig& c, Draft&, const Reader& r) { c.refactor.beta = r.real(); }},
      {"include_n_term", [](RunConfig& c, Draft&, const Reader& r) { c.refactor.include_n_term = r.boolean(); }},
      {"layer_optimizer", [](RunConfig& c, Draft&, const Reader& r) {
         c.refactor.layer_optimizer =
             r.choice<OptimizerKind>({{"sgd", OptimizerKind::SGD}, {"adagrad", OptimizerKind::AdaGrad}});
       }},
      {"layer_eps", [](RunConfig& c, Draft&, const Reader& r) { c.refactor.layer_eps = r.real(); }},
      {"n3_in_layer", [](RunConfig& c, Draft&, const Reader& r) { c.refactor.n3_in_layer = r.boolean(); }},
      {"n3_weight", [](RunConfig& c, Draft&, const Reader& r) { c.refactor.n3_weight = r.real(); }},
      {"features", [](RunConfig& c, Draft&, const Reader& r) {
         try {
           apply_feature_spec(c.refactor, r.text());
         } catch (const ConfigError&) {
           r.fail("expected random:<seed> or file:<path>");
         }
       }},
  };
  return table;
}

}  // namespace

std::string_view mode_name(RunMode m) { return m == RunMode::FM ? "fm" : "refactor"; }

void apply_feature_spec(RefactorConfig& cfg, std::string_view spec) {
  if (spec.starts_with("random:")) {
    const auto digits = spec.substr(7);
    std::uint64_t seed = 0;
    const auto res = std::from_chars(digits.data(), digits.data() + digits.size(), seed);
    if (digits.empty() || res.ec != std::errc() || res.ptr != digits.data() + digits.size()) {
      throw ConfigError("bad feature seed in '" + std::string(spec) + "'");
    }
    cfg.feature_source = FeatureSource::Random;
    cfg.feature_seed = seed;
    cfg.feature_path.clear();
  } else if (spec.starts_with("file:") && spec.size() > 5) {
    cfg.feature_source = FeatureSource::File;
    cfg.feature_path = std::string(spec.substr(5));
  } else {
    throw ConfigError("features must be random:<seed> or file:<path>, got '" + std::string(spec) + "'");
  }
}

std::string feature_spec(const RefactorConfig& cfg) {
  return cfg.feature_source == FeatureSource::Random ? "random:" + std::to_string(cfg.feature_seed)
                                                     : "file:" + cfg.feature_path;
}

void RunConfig::validate() const {
  try {
    train.validate();
    refactor.validate();
  } catch (const ShapeError& e) {
    throw ConfigError(e.what());
  }
  if (eval_every < 0) throw ConfigError("eval_every must be nonnegative");
  if (inductive_rounds < 0) throw ConfigError("inductive_rounds must be nonnegative");
  if (mode == RunMode::Refactor) {
    if (train.model.family != Family::DistMult && train.model.family != Family::ComplEx) {
      throw ConfigError("mode=refactor supports the distmult and complex decoders");
    }
    if (train.rp_weight > 0.0) throw ConfigError("mode=refactor does not support rp_weight");
  }
}

RunConfig parse_run_config(std::string_view text, const std::string& origin) {
  RunConfig cfg;
  Draft draft;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("unknown config key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError("duplicate config key '" + key + "'");
    it->second(cfg, draft, Reader(key, value));
  }
  if (!seen.contains("model")) throw ConfigError("config key 'model' is required");
  if (!seen.contains("dim")) throw ConfigError("config key 'dim' is required");
  try {
    cfg.train.model = ModelSpec::make(draft.family, draft.dim, draft.relation_dim);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& c) {
  const auto& t = c.train;
  const auto& r = c.refactor;
  const auto b = [](bool x) { return std::string(x ? "true" : "false"); };
  return {
      {"mode", std::string(mode_name(c.mode))},
      {"model", std::string(family_name(t.model.family))},
      {"dim", std::to_string(t.model.entity_dim)},
      {"relation_dim", std::to_string(t.model.family == Family::TuckER ? t.model.relation_dim : -1)},
      {"learning_rate", fmt_double(t.learning_rate)},
      {"batch_size", std::to_string(t.batch_size)},
      {"epochs", std::to_string(t.epochs)},
      {"reg_weight", fmt_double(t.reg_weight)},
      {"rp_weight", fmt_double(t.rp_weight)},
      {"optimizer", std::string(optimizer_name(t.optimizer))},
      {"adagrad_eps", fmt_double(t.adagrad_eps)},
      {"forget_interval", t.forget_interval ? std::to_string(*t.forget_interval) : "none"},
      {"seed", std::to_string(t.seed)},
      {"softmax", t.softmax_mode == SoftmaxMode::Full ? "full" : "sampled"},
      {"in_batch", std::to_string(t.negatives.in_batch)},
      {"global_negatives", std::to_string(t.negatives.global)},
      {"entity_sides", t.entity_sides == EntitySides::Both ? "both" : "object"},
      {"rp_over_base_relations", b(t.rp_over_base_relations)},
      {"init_scale", fmt_double(t.init_scale)},
      {"clip_norm", fmt_double(t.clip_norm)},
      {"lr_schedule", t.lr_schedule == LrSchedule::Constant ? "constant" : "polynomial"},
      {"lr_total_steps", std::to_string(t.lr_total_steps)},
      {"lr_power", fmt_double(t.lr_power)},
      {"lr_end", fmt_double(t.lr_end)},
      {"reciprocals", b(c.reciprocals)},
      {"drop_self_loops", b(c.drop_self_loops)},
      {"eval_every", std::to_string(c.eval_every)},
      {"eval_protocol", std::string(protocol_name(c.eval_protocol))},
      {"inductive_rounds", std::to_string(c.inductive_rounds)},
      {"layers", r.layers ? std::to_string(*r.layers) : "inf"},
      {"alpha", r.alpha ? fmt_double(*r.alpha) : "auto"},
      {"beta", fmt_double(r.beta)},
      {"include_n_term", b(r.include_n_term)},
      {"layer_optimizer", std::string(optimizer_name(r.layer_optimizer))},
      {"layer_eps", fmt_double(r.layer_eps)},
      {"n3_in_layer", b(r.n3_in_layer)},
      {"n3_weight", fmt_double(r.n3_weight)},
      {"features", feature_spec(r)},
  };
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : config_entries(cfg)) out += k + " = " + v + "\n";
  return out;
}

}  // namespace rkg

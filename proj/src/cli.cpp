#include "rkg/cli.h"

#include <fcntl.h>
#include <unistd.h>

#include <charconv>
#include <fstream>
#include <json.hpp>
#include <memory>
#include <ostream>

#include "rkg/checkpoint.h"
#include "rkg/config.h"
#include "rkg/errors.h"
#include "rkg/features.h"
#include "rkg/refactor.h"
#include "rkg/verify.h"

namespace rkg::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

std::string shortest(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

class OutLock {
 public:
  explicit OutLock(const fs::path& dir) : path_(dir / kLockFile) {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) throw ConfigError("output directory is locked by another run: " + path_.string());
    ::close(fd);
  }
  ~OutLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  OutLock(const OutLock&) = delete;
  OutLock& operator=(const OutLock&) = delete;

 private:
  fs::path path_;
};

KnowledgeGraph without_self_loops(const KnowledgeGraph& g) {
  std::vector<Triple> kept;
  for (const auto& t : g.triples()) {
    if (t.subject != t.object) kept.push_back(t);
  }
  return KnowledgeGraph(g.entities(), g.relations(), std::move(kept));
}

std::vector<std::string> base_relation_names(const KnowledgeGraph& g) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < g.num_base_relations(); ++i) out.push_back(g.relations().name(static_cast<int>(i)));
  return out;
}

Json report_json(const RankingReport& r) { return Json::parse(r.to_json()); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

// Common surface of the two trainers for the epoch loop.
class Session {
 public:
  virtual ~Session() = default;
  virtual std::vector<StepRecord> epoch() = 0;
  virtual ModelParams model() const = 0;
  virtual Checkpoint snapshot() const = 0;
};

class FmSession : public Session {
 public:
  FmSession(const RunConfig& cfg, const KnowledgeGraph& g, const Checkpoint* resume) : cfg_(cfg) {
    if (resume) {
      trainer_ = std::make_unique<FmTrainer>(cfg.train, g, resume->params, *resume->optimizer,
                                             rng_from_string(resume->rng_state), resume->step);
    } else {
      Rng init(cfg.train.seed);
      auto params = ModelParams::initialize(cfg.train.model, g.num_entities(), g.num_relations(), cfg.train.init_scale, init);
      trainer_ = std::make_unique<FmTrainer>(cfg.train, g, std::move(params));
    }
  }
  std::vector<StepRecord> epoch() override { return trainer_->run_epoch(); }
  ModelParams model() const override { return trainer_->params(); }
  Checkpoint snapshot() const override {
    Checkpoint c;
    c.config = cfg_;
    c.step = trainer_->steps_taken();
    c.rng_state = rng_to_string(trainer_->rng());
    c.params = trainer_->params();
    c.optimizer = trainer_->optimizer_state();
    return c;
  }

 private:
  RunConfig cfg_;
  std::unique_ptr<FmTrainer> trainer_;
};

class RefactorSession : public Session {
 public:
  RefactorSession(const RunConfig& cfg, const KnowledgeGraph& g, const Checkpoint* resume) : cfg_(cfg) {
    if (resume) {
      if (!resume->features || !resume->cache_accumulator || !resume->optimizer) {
        throw CompatibilityError("checkpoint lacks the node-state cache");
      }
      trainer_ = std::make_unique<RefactorTrainer>(cfg.train, cfg.refactor, g, *resume->features,
                                                   resume->params.relations.values);
      trainer_->cache().restore(resume->params.entities.values, *resume->cache_accumulator, resume->layer_counter,
                                resume->batches_since_clear);
      trainer_->psi_state() = resume->optimizer->relations;
      trainer_->rng() = rng_from_string(resume->rng_state);
      trainer_->set_steps_taken(resume->step);
      return;
    }
    const int k = cfg.train.model.entity_dim;
    Matrix features = cfg.refactor.feature_source == FeatureSource::Random
                          ? random_features(g.num_entities(), static_cast<std::size_t>(k), cfg.refactor.feature_seed,
                                            cfg.train.init_scale)
                          : load_features(cfg.refactor.feature_path, g);
    if (features.cols() != k) throw DataError("feature dimension does not match dim");
    Rng init(cfg.train.seed);
    Matrix psi = make_table(g.num_relations(), static_cast<std::size_t>(cfg.train.model.relation_dim),
                            cfg.train.init_scale, init)
                     .values;
    trainer_ = std::make_unique<RefactorTrainer>(cfg.train, cfg.refactor, g, std::move(features), std::move(psi));
  }
  std::vector<StepRecord> epoch() override { return trainer_->run_epoch(); }
  ModelParams model() const override { return trainer_->as_params(); }
  Checkpoint snapshot() const override {
    Checkpoint c;
    c.config = cfg_;
    c.step = trainer_->steps_taken();
    c.rng_state = rng_to_string(trainer_->rng());
    c.params = trainer_->as_params();
    c.optimizer = OptimizerState{};
    c.optimizer->relations = trainer_->psi_state();
    c.features = trainer_->cache().initial();
    c.cache_accumulator = trainer_->cache().accumulator();
    c.layer_counter = trainer_->cache().layer_counter();
    c.batches_since_clear = trainer_->cache().batches_since_clear();
    return c;
  }

 private:
  RunConfig cfg_;
  std::unique_ptr<RefactorTrainer> trainer_;
};

void check_compatible(const Checkpoint& c, const KnowledgeGraph& base) {
  if (c.num_entities != base.num_entities()) {
    throw CompatibilityError("checkpoint has " + std::to_string(c.num_entities) + " entities, data has " +
                             std::to_string(base.num_entities()));
  }
  if (c.relation_names != base_relation_names(base)) {
    throw CompatibilityError("checkpoint relation vocabulary differs from the data");
  }
}

EvalOptions eval_options(const RunConfig& cfg, Protocol protocol, std::uint64_t seed) {
  EvalOptions o;
  o.protocol = protocol;
  o.subject_side = cfg.reciprocals;
  o.seed = seed;
  return o;
}

void write_report(const RankingReport& r, const KnowledgeGraph& names, const fs::path& dir, const std::string& stem) {
  fs::create_directories(dir);
  r.write_json(dir / (stem + ".json"));
  r.write_tsv(dir / (stem + "_ranks.tsv"), names);
}

}  // namespace

int train(const TrainArgs& args, std::ostream& log) {
  std::optional<Checkpoint> resume;
  RunConfig cfg;
  if (args.resume) {
    if (args.seed || args.features) throw ConfigError("--seed and --features cannot change a resumed run");
    resume = load_checkpoint(*args.resume);
    cfg = resume->config;
  } else {
    cfg = load_run_config(args.config);
    if (args.seed) cfg.train.seed = *args.seed;
    if (args.features) apply_feature_spec(cfg.refactor, *args.features);
    cfg.validate();
  }

  fs::create_directories(args.out);
  OutLock lock(args.out);

  const Dataset ds = load_dataset(args.data);
  KnowledgeGraph base = ds.train;
  if (cfg.mode == RunMode::Refactor && cfg.drop_self_loops) base = without_self_loops(base);
  const KnowledgeGraph g = cfg.reciprocals ? base.with_reciprocals() : base;
  const FilterIndex filter = ds.filter_all();
  const std::size_t nb = base.num_relations();
  if (resume) {
    check_compatible(*resume, base);
    if (resume->num_relations != g.num_relations()) throw CompatibilityError("checkpoint relation count differs");
  }

  std::unique_ptr<Session> session;
  if (cfg.mode == RunMode::FM) {
    session = std::make_unique<FmSession>(cfg, g, resume ? &*resume : nullptr);
  } else {
    session = std::make_unique<RefactorSession>(cfg, g, resume ? &*resume : nullptr);
  }

  const auto fill = [&](Checkpoint c, std::int64_t epoch, std::optional<double> best, std::int64_t best_epoch) {
    c.num_entities = g.num_entities();
    c.num_relations = g.num_relations();
    c.num_base_relations = nb;
    c.relation_names = base_relation_names(base);
    c.epoch = epoch;
    c.best_valid_mrr = best;
    c.best_epoch = best_epoch;
    return c;
  };
  const auto validate = [&](const ModelParams& m) {
    return evaluate(m, ds.valid.triples(), filter, nb, eval_options(cfg, cfg.eval_protocol, cfg.train.seed));
  };

  std::int64_t epoch = resume ? resume->epoch : 0;
  std::optional<double> best = resume ? resume->best_valid_mrr : std::nullopt;
  std::int64_t best_epoch = resume ? resume->best_epoch : -1;
  ModelParams best_model = session->model();
  if (resume && fs::exists(args.out / kBestCheckpoint)) best_model = load_checkpoint(args.out / kBestCheckpoint).params;

  const auto open_mode = resume ? std::ios::app : std::ios::trunc;
  std::ofstream loss_log(args.out / kLossLog, std::ios::binary | open_mode);
  std::ofstream epoch_log(args.out / kEpochLog, std::ios::binary | open_mode);
  if (!loss_log || !epoch_log) throw DataError("cannot write logs in " + args.out.string());
  if (!resume) {
    loss_log << "step\tloss\tdid_forget\n";
    epoch_log << "epoch\tmean_loss\tvalid_mrr\n";
  }

  if (!resume) {
    const auto r = validate(best_model);
    best = r.mrr;
    best_epoch = 0;
    epoch_log << "0\t-\t" << shortest(r.mrr) << '\n';
    save_checkpoint(fill(session->snapshot(), 0, best, best_epoch), args.out / kBestCheckpoint, args.f32);
    log << "epoch 0 valid_mrr=" << r.mrr << '\n';
  }

  const std::int64_t epochs = cfg.train.epochs;
  while (epoch < epochs) {
    ++epoch;
    const auto records = session->epoch();
    double total = 0.0;
    for (const auto& rec : records) {
      loss_log << rec.step << '\t' << shortest(rec.loss) << '\t' << (rec.did_forget ? 1 : 0) << '\n';
      total += rec.loss;
    }
    const double mean = records.empty() ? 0.0 : total / static_cast<double>(records.size());
    std::string mrr_text = "-";
    const bool due = (cfg.eval_every > 0 && epoch % cfg.eval_every == 0) || epoch == epochs;
    if (due) {
      const ModelParams current = session->model();
      const auto r = validate(current);
      mrr_text = shortest(r.mrr);
      if (!best || r.mrr > *best) {
        best = r.mrr;
        best_epoch = epoch;
        best_model = current;
        save_checkpoint(fill(session->snapshot(), epoch, best, best_epoch), args.out / kBestCheckpoint, args.f32);
      }
    }
    epoch_log << epoch << '\t' << shortest(mean) << '\t' << mrr_text << '\n';
    epoch_log.flush();
    loss_log.flush();
    save_checkpoint(fill(session->snapshot(), epoch, best, best_epoch), args.out / kLastCheckpoint, args.f32);
    log << "epoch " << epoch << "/" << epochs << " loss=" << mean << " valid_mrr=" << mrr_text << '\n';
  }
  if (epochs == 0 || !fs::exists(args.out / kLastCheckpoint)) {
    save_checkpoint(fill(session->snapshot(), epoch, best, best_epoch), args.out / kLastCheckpoint, args.f32);
  }

  const auto valid_report = validate(best_model);
  const auto test_report =
      evaluate(best_model, ds.test.triples(), filter, nb, eval_options(cfg, cfg.eval_protocol, cfg.train.seed));
  test_report.write_tsv(args.out / "test_ranks.tsv", ds.test);
  Json metrics;
  metrics["mode"] = mode_name(cfg.mode);
  metrics["model"] = family_name(cfg.train.model.family);
  metrics["epochs"] = epoch;
  metrics["steps"] = session->snapshot().step;
  metrics["best_epoch"] = best_epoch;
  metrics["valid"] = report_json(valid_report);
  metrics["test"] = report_json(test_report);
  write_text(args.out / kMetrics, metrics.dump(2) + "\n");
  log << "best epoch " << best_epoch << " test_mrr=" << test_report.mrr << '\n';
  return kOk;
}

int eval(const EvalArgs& args, std::ostream& out) {
  const Checkpoint c = load_checkpoint(args.checkpoint);
  const Dataset ds = load_dataset(args.data);
  check_compatible(c, ds.train);
  const KnowledgeGraph* split = nullptr;
  if (args.split == "test") split = &ds.test;
  if (args.split == "valid") split = &ds.valid;
  if (!split) throw ConfigError("--split must be valid or test");
  const auto report = evaluate(c.params, split->triples(), ds.filter_all(), c.num_base_relations,
                               eval_options(c.config, args.protocol, args.seed));
  if (args.out) write_report(report, ds.test, *args.out, args.split + "_" + std::string(protocol_name(args.protocol)));
  out << report.to_json() << '\n';
  return kOk;
}

int inductive(const InductiveArgs& args, std::ostream& out) {
  const Checkpoint c = load_checkpoint(args.checkpoint);
  RunConfig cfg = c.config;
  if (cfg.mode != RunMode::Refactor) throw ConfigError("inductive inference needs a mode=refactor checkpoint");
  if (args.seed) cfg.train.seed = *args.seed;
  apply_feature_spec(cfg.refactor, args.features);
  if (args.data) {
    const Dataset original = load_dataset(*args.data);
    if (c.relation_names != base_relation_names(original.train)) {
      throw CompatibilityError("checkpoint relation vocabulary differs from " + args.data->string());
    }
  }

  const Vocabulary relations(c.relation_names);
  DatasetOptions opts;
  opts.relations = &relations;
  Dataset ind;
  try {
    ind = load_dataset(args.ind, opts);
  } catch (const VocabularyError& e) {
    throw CompatibilityError(std::string("inductive graph does not share the relation vocabulary: ") + e.what());
  }
  KnowledgeGraph base = ind.train;
  if (cfg.drop_self_loops) base = without_self_loops(base);
  const KnowledgeGraph g = cfg.reciprocals ? base.with_reciprocals() : base;
  if (g.num_relations() != c.num_relations) throw CompatibilityError("relation count differs from the checkpoint");

  const int k = cfg.train.model.entity_dim;
  const Matrix features = cfg.refactor.feature_source == FeatureSource::Random
                              ? random_features(g.num_entities(), static_cast<std::size_t>(k),
                                                cfg.refactor.feature_seed, cfg.train.init_scale)
                              : load_features(cfg.refactor.feature_path, g);
  if (features.cols() != k) throw DataError("feature dimension does not match the checkpoint");

  ModelParams params;
  params.spec = cfg.train.model;
  params.relations = c.params.relations;
  params.entities.values =
      inductive_infer(c.params.relations.values, g, features, cfg.train, cfg.refactor,
                      args.rounds.value_or(cfg.inductive_rounds));
  params.entities.init_scale = cfg.train.init_scale;

  const auto report = evaluate(params, ind.test.triples(), ind.filter_all(), c.num_base_relations,
                               eval_options(cfg, args.protocol, cfg.train.seed));
  if (args.out) write_report(report, ind.test, *args.out, "inductive_" + std::string(protocol_name(args.protocol)));
  out << report.to_json() << '\n';
  return kOk;
}

int verify(const VerifyArgs& args, std::ostream& out) {
  VerifyOptions opts;
  opts.perturb_gradient = args.perturb_gradient;
  opts.seed = args.seed;
  bool ok = true;
  double total = 0.0;
  for (const auto& r : run_oracle_suite(opts)) {
    out << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
    ok = ok && r.passed;
    total += r.seconds;
  }
  out << (total < 60.0 ? "PASS " : "WARN ") << "runtime: " << total << " s (budget 60 s)\n";
  return ok ? kOk : kOracleFailure;
}

int inspect(const fs::path& checkpoint, std::ostream& out) {
  out << read_checkpoint_header(checkpoint) << '\n';
  return kOk;
}

int guarded(const std::function<int()>& command, std::ostream& err) {
  try {
    return command();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const CompatibilityError& e) {
    err << "compatibility error: " << e.what() << '\n';
    return kCompatibilityError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const ShapeError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const IndexError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  }
}

}  // namespace rkg::cli

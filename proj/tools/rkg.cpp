#include <malloc.h>

#include <CLI11.hpp>
#include <iostream>

#include "rkg/cli.h"
#include "rkg/errors.h"

using namespace rkg;

int main(int argc, char** argv) {
  // Keep large training buffers on the heap instead of remapping them every step.
  mallopt(M_MMAP_THRESHOLD, 1 << 28);
  mallopt(M_TRIM_THRESHOLD, 1 << 29);

  CLI::App app{"Knowledge graph completion: factorisation models and ReFactor GNNs"};
  app.require_subcommand(1);

  cli::TrainArgs train;
  std::string features;
  std::uint64_t seed = 0;
  auto* t = app.add_subcommand("train", "Train a model and write checkpoints, logs and metrics");
  t->add_option("--config", train.config, "key=value run configuration");
  t->add_option("--data", train.data, "Directory with train.txt, valid.txt, test.txt")->required();
  t->add_option("--out", train.out, "Output directory")->required();
  auto* t_seed = t->add_option("--seed", seed, "Override the configured seed");
  auto* t_feat = t->add_option("--features", features, "random:<seed> or file:<path>");
  t->add_flag("--f32", train.f32, "Write f32 payloads (breaks bitwise resume)");
  std::string resume;
  auto* t_resume = t->add_option("--checkpoint", resume, "Resume from this checkpoint instead of --config");

  cli::EvalArgs ev;
  std::string protocol = "full";
  std::string ev_out;
  auto* e = app.add_subcommand("eval", "Filtered ranking of a checkpoint on a split");
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--data", ev.data)->required();
  e->add_option("--protocol", protocol, "full or partial-50");
  e->add_option("--split", ev.split, "valid or test");
  e->add_option("--seed", ev.seed, "Seed for partial-ranking negatives");
  auto* e_out = e->add_option("--out", ev_out, "Directory for the report and per-query ranks");

  cli::InductiveArgs ind;
  std::string ind_data, ind_out;
  std::int64_t rounds = 0;
  auto* i = app.add_subcommand("inductive", "Run a trained ReFactor model on an unseen graph");
  i->add_option("--checkpoint", ind.checkpoint)->required();
  auto* i_data = i->add_option("--data", ind_data, "Original training graph, checked against the checkpoint");
  i->add_option("--ind", ind.ind, "Directory of the unseen graph")->required();
  i->add_option("--features", ind.features, "random:<seed> or file:<path>");
  auto* i_seed = i->add_option("--seed", seed);
  auto* i_rounds = i->add_option("--rounds", rounds, "Passes over the unseen graph");
  i->add_option("--protocol", protocol, "full or partial-50");
  auto* i_out = i->add_option("--out", ind_out);

  cli::VerifyArgs ver;
  auto* v = app.add_subcommand("verify", "Run the built-in oracle checks");
  v->add_flag("--perturb-gradient", ver.perturb_gradient, "Negative control: corrupt one gradient entry");
  v->add_option("--seed", ver.seed);

  std::string ckpt;
  auto* s = app.add_subcommand("inspect", "Print a checkpoint header");
  s->add_option("checkpoint", ckpt)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : cli::kConfigError;
  }

  return cli::guarded(
      [&]() -> int {
        if (*t) {
          if (t_resume->count() > 0) {
            train.resume = resume;
          } else if (train.config.empty()) {
            throw ConfigError("train needs --config or --checkpoint");
          }
          if (t_seed->count() > 0) train.seed = seed;
          if (t_feat->count() > 0) train.features = features;
          return cli::train(train, std::cerr);
        }
        if (*e) {
          ev.protocol = parse_protocol(protocol);
          if (e_out->count() > 0) ev.out = ev_out;
          return cli::eval(ev, std::cout);
        }
        if (*i) {
          ind.protocol = parse_protocol(protocol);
          if (i_data->count() > 0) ind.data = ind_data;
          if (i_out->count() > 0) ind.out = ind_out;
          if (i_seed->count() > 0) ind.seed = seed;
          if (i_rounds->count() > 0) ind.rounds = rounds;
          return cli::inductive(ind, std::cout);
        }
        if (*v) return cli::verify(ver, std::cout);
        return cli::inspect(ckpt, std::cout);
      },
      std::cerr);
}

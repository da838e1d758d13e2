#include <malloc.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rkg/cli.h"
#include "rkg/verify.h"

namespace fs = std::filesystem;
using Json = nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

constexpr int kSkipped = 77;

struct Paths {
  fs::path work;
  fs::path umls = fs::path(RKG_DATA_DIR) / "umls";
  fs::path fb = fs::path(RKG_DATA_DIR) / "FB15K237_v1";
  fs::path fb_ind = fs::path(RKG_DATA_DIR) / "FB15K237_v1_ind";
  fs::path configs = RKG_CONFIG_DIR;
};

enum class Outcome { Pass, Fail, Skip };

struct Line {
  int criterion;
  Outcome outcome;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fixed(double x, int digits = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << x;
  return os.str();
}

void print(const Line& l) {
  const char* tag = l.outcome == Outcome::Pass ? "PASS" : l.outcome == Outcome::Fail ? "FAIL" : "SKIP";
  std::cout << tag << " criterion " << l.criterion << ": " << l.detail << std::endl;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

struct RunResult {
  int code = -1;
  double seconds = 0.0;
  Json metrics;
};

// Runs `train` through the same entry point as the command line tool.
RunResult train(const fs::path& config, const fs::path& data, const fs::path& out, std::ostream& log,
                std::optional<std::string> features = std::nullopt) {
  fs::remove_all(out);
  rkg::cli::TrainArgs args;
  args.config = config;
  args.data = data;
  args.out = out;
  args.features = std::move(features);
  RunResult r;
  const auto t0 = Clock::now();
  r.code = rkg::cli::guarded([&] { return rkg::cli::train(args, log); }, log);
  r.seconds = seconds_since(t0);
  if (r.code == 0) r.metrics = Json::parse(read_file(out / rkg::cli::kMetrics));
  return r;
}

double test_mrr(const RunResult& r) { return r.metrics["test"]["mrr"].get<double>(); }

void write_split(const fs::path& path, const std::vector<std::array<std::string, 3>>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  for (const auto& r : rows) out << r[0] << '\t' << r[1] << '\t' << r[2] << '\n';
}

void write_config(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
}

// Random graph over `ne` entities split 80/10/10; entity names carry `prefix`.
void write_random_dataset(const fs::path& dir, int ne, int nr, int nt, std::uint64_t seed, const std::string& prefix) {
  fs::create_directories(dir);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pe(0, ne - 1), pr(0, nr - 1);
  std::set<std::array<int, 3>> seen;
  std::vector<std::array<std::string, 3>> rows;
  while (static_cast<int>(rows.size()) < nt) {
    std::array<int, 3> t{pe(rng), pr(rng), pe(rng)};
    if (t[0] == t[2] || !seen.insert(t).second) continue;
    rows.push_back({prefix + std::to_string(t[0]), "r" + std::to_string(t[1]), prefix + std::to_string(t[2])});
  }
  const std::size_t n_train = rows.size() * 8 / 10, n_valid = rows.size() / 10;
  write_split(dir / "train.txt", {rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_train)});
  write_split(dir / "valid.txt", {rows.begin() + static_cast<std::ptrdiff_t>(n_train),
                                  rows.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid)});
  write_split(dir / "test.txt", {rows.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), rows.end()});
}

// Paired entities joined by the symmetric r_sym, plus random r_link edges with
// their exact inverse r_link_inv. Both patterns carry over to a new entity set.
void write_rule_dataset(const fs::path& dir, int ne, std::uint64_t seed, const std::string& prefix) {
  fs::create_directories(dir);
  std::mt19937_64 rng(seed);
  std::vector<std::array<std::string, 3>> rows;
  const auto name = [&](int i) { return prefix + std::to_string(i); };
  for (int i = 0; i < ne; i += 2) {
    rows.push_back({name(i), "r_sym", name(i + 1)});
    rows.push_back({name(i + 1), "r_sym", name(i)});
  }
  std::uniform_int_distribution<int> pe(0, ne - 1);
  std::set<std::pair<int, int>> links;
  for (int n = 0; n < ne; ++n) {
    const int a = pe(rng), b = pe(rng);
    if (a == b || !links.insert({a, b}).second) continue;
    rows.push_back({name(a), "r_link", name(b)});
    rows.push_back({name(b), "r_link_inv", name(a)});
  }
  std::shuffle(rows.begin(), rows.end(), rng);
  const std::size_t n_eval = rows.size() / 10;
  write_split(dir / "valid.txt", {rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_eval)});
  write_split(dir / "test.txt",
              {rows.begin() + static_cast<std::ptrdiff_t>(n_eval), rows.begin() + static_cast<std::ptrdiff_t>(2 * n_eval)});
  write_split(dir / "train.txt", {rows.begin() + static_cast<std::ptrdiff_t>(2 * n_eval), rows.end()});
}

Line oracle_line(int criterion, const rkg::CheckResult& r, double budget) {
  const bool ok = r.passed && r.seconds < budget;
  return {criterion, ok ? Outcome::Pass : Outcome::Fail,
          r.name + ": " + r.detail + ", " + fixed(r.seconds, 2) + " s (budget " + fixed(budget, 0) + " s)"};
}

struct UmlsPair {
  RunResult ep_rp;
  RunResult ep;
};

UmlsPair run_umls_complex(const Paths& p, std::ostream& log) {
  UmlsPair out;
  out.ep_rp = train(p.configs / "umls_complex_ep_rp.cfg", p.umls, p.work / "umls_complex_ep_rp", log);
  out.ep = train(p.configs / "umls_complex_ep.cfg", p.umls, p.work / "umls_complex_ep", log);
  return out;
}

Line criterion4(const UmlsPair& runs) {
  const auto& r = runs.ep_rp;
  if (r.code != 0) return {4, Outcome::Fail, "training exited with code " + std::to_string(r.code)};
  const double mrr = test_mrr(r);
  const bool ok = mrr >= 0.94 && r.seconds <= 1200.0;
  return {4, ok ? Outcome::Pass : Outcome::Fail,
          "UMLS ComplEx EP+RP test MRR " + fixed(mrr) + " (need >= 0.94), " + fixed(r.seconds, 0) +
              " s (budget 1200 s)"};
}

Line criterion5(const UmlsPair& runs) {
  if (runs.ep_rp.code != 0 || runs.ep.code != 0) return {5, Outcome::Fail, "a training run failed"};
  const double with_rp = test_mrr(runs.ep_rp), without = test_mrr(runs.ep);
  const bool ok = with_rp > without && runs.ep.seconds <= 1200.0 && runs.ep_rp.seconds <= 1200.0;
  return {5, ok ? Outcome::Pass : Outcome::Fail,
          "test MRR EP+RP " + fixed(with_rp) + " vs EP-only " + fixed(without) + " (same epochs), EP-only " +
              fixed(runs.ep.seconds, 0) + " s"};
}

Line criterion6(const Paths& p, std::ostream& log) {
  const auto fm = train(p.configs / "umls_distmult_fm.cfg", p.umls, p.work / "umls_distmult_fm", log);
  const auto gnn = train(p.configs / "umls_distmult_refactor.cfg", p.umls, p.work / "umls_distmult_refactor", log);
  if (fm.code != 0 || gnn.code != 0) return {6, Outcome::Fail, "a training run failed"};
  const double a = test_mrr(fm), b = test_mrr(gnn), total = fm.seconds + gnn.seconds;
  const bool ok = a >= 0.85 && b >= 0.85 && std::abs(a - b) <= 0.05 && total <= 1800.0;
  return {6, ok ? Outcome::Pass : Outcome::Fail,
          "UMLS DistMult test MRR FM " + fixed(a) + ", ReFactor(L=inf) " + fixed(b) + " (need both >= 0.85, gap <= 0.05), " +
              fixed(total, 0) + " s (budget 1800 s)"};
}

struct InductiveResult {
  int code = -1;
  Json report;
};

InductiveResult run_inductive(const fs::path& ckpt, const fs::path& ind, std::ostream& log) {
  rkg::cli::InductiveArgs args;
  args.checkpoint = ckpt;
  args.ind = ind;
  std::ostringstream out;
  InductiveResult r;
  r.code = rkg::cli::guarded([&] { return rkg::cli::inductive(args, out); }, log);
  if (r.code == 0) r.report = Json::parse(out.str());
  return r;
}

// Trained ReFactor(3) against the same pipeline trained for zero epochs.
struct InductivePair {
  bool ok = false;
  std::string error;
  double trained_hits10 = 0.0;
  double baseline_hits10 = 0.0;
  double trained_mrr = 0.0;
  double baseline_mrr = 0.0;
  double seconds = 0.0;
};

InductivePair inductive_pair(const fs::path& config, const fs::path& data, const fs::path& ind, const fs::path& work,
                             std::ostream& log) {
  InductivePair out;
  const auto t0 = Clock::now();
  const auto trained = train(config, data, work / "trained", log);
  if (trained.code != 0) {
    out.error = "training exited with code " + std::to_string(trained.code);
    return out;
  }
  const fs::path baseline_cfg = work / "baseline.cfg";
  // Duplicate keys are rejected, so drop the original epochs line.
  {
    std::istringstream in(read_file(config));
    std::ostringstream kept;
    for (std::string line; std::getline(in, line);) {
      if (line.rfind("epochs", 0) == 0) continue;
      kept << line << '\n';
    }
    kept << "epochs = 0\n";
    write_config(baseline_cfg, kept.str());
  }
  const auto baseline = train(baseline_cfg, data, work / "baseline", log);
  if (baseline.code != 0) {
    out.error = "baseline exited with code " + std::to_string(baseline.code);
    return out;
  }
  const auto a = run_inductive(work / "trained" / rkg::cli::kBestCheckpoint, ind, log);
  const auto b = run_inductive(work / "baseline" / rkg::cli::kBestCheckpoint, ind, log);
  if (a.code != 0 || b.code != 0) {
    out.error = "inductive inference failed";
    return out;
  }
  out.ok = true;
  out.trained_hits10 = a.report["hits"]["10"].get<double>();
  out.baseline_hits10 = b.report["hits"]["10"].get<double>();
  out.trained_mrr = a.report["mrr"].get<double>();
  out.baseline_mrr = b.report["mrr"].get<double>();
  out.seconds = seconds_since(t0);
  return out;
}

std::string synthetic_inductive(const Paths& p, std::ostream& log, bool& passed) {
  const fs::path dir = p.work / "synthetic_inductive";
  write_rule_dataset(dir / "train_graph", 400, 11, "a");
  write_rule_dataset(dir / "ind_graph", 400, 12, "b");
  write_config(dir / "refactor.cfg",
               "mode = refactor\nmodel = distmult\ndim = 64\nlayers = 3\nlearning_rate = 0.1\nbatch_size = 64\n"
               "epochs = 15\noptimizer = adagrad\nlayer_optimizer = adagrad\nbeta = 0.1\ninit_scale = 0.1\n"
               "softmax = sampled\nin_batch = 128\nglobal_negatives = 1\nreciprocals = true\nseed = 0\n");
  const auto r = inductive_pair(dir / "refactor.cfg", dir / "train_graph", dir / "ind_graph", dir, log);
  if (!r.ok) {
    passed = false;
    return "synthetic inductive check failed: " + r.error;
  }
  passed = std::isfinite(r.trained_mrr) && r.trained_mrr >= 2.0 * r.baseline_mrr;
  return "synthetic disjoint-entity check " + std::string(passed ? "passed" : "failed") + " (MRR " +
         fixed(r.trained_mrr) + " vs untrained " + fixed(r.baseline_mrr) + ", need 2x; Hits@10 " +
         fixed(r.trained_hits10) + " vs " + fixed(r.baseline_hits10) + ")";
}

Line criterion7(const Paths& p, std::ostream& log) {
  bool synthetic_ok = false;
  const std::string synthetic = synthetic_inductive(p, log, synthetic_ok);
  const bool have_data = fs::exists(p.fb / "train.txt") && fs::exists(p.fb_ind / "test.txt");
  if (!have_data) {
    return {7, synthetic_ok ? Outcome::Skip : Outcome::Fail,
            "FB15K237_v1 / FB15K237_v1_ind not found under " + p.fb.parent_path().string() + "; " + synthetic};
  }
  const auto r = inductive_pair(p.configs / "fb15k237_v1_refactor3.cfg", p.fb, p.fb_ind, p.work / "fb_inductive", log);
  if (!r.ok) return {7, Outcome::Fail, r.error + "; " + synthetic};
  const bool in_budget = r.seconds <= 7200.0;
  const bool ok = in_budget ? r.trained_hits10 >= 0.38 : r.trained_hits10 >= 10.0 * r.baseline_hits10;
  return {7, ok && synthetic_ok ? Outcome::Pass : Outcome::Fail,
          "FB15K237_v1_ind full-ranking Hits@10 " + fixed(r.trained_hits10) + " (need >= 0.38" +
              (in_budget ? "" : ", over budget so need >= 10x untrained " + fixed(r.baseline_hits10)) + "), " +
              fixed(r.seconds, 0) + " s; " + synthetic};
}

struct LossRow {
  std::int64_t step;
  double loss;
  bool forget;
};

std::vector<LossRow> read_loss_log(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  std::vector<LossRow> rows;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    LossRow r{};
    int f = 0;
    ls >> r.step >> r.loss >> f;
    r.forget = f != 0;
    rows.push_back(r);
  }
  return rows;
}

Line criterion8(const Paths& p, std::ostream& log) {
  const fs::path dir = p.work / "forgetting";
  write_random_dataset(dir / "data", 150, 4, 1250, 7, "e");
  const int k = 40;
  write_config(dir / "forget.cfg", "mode = fm\nmodel = distmult\ndim = 32\nlearning_rate = 0.1\nbatch_size = 2000\n"
                                   "epochs = 400\noptimizer = adagrad\ninit_scale = 0.1\nreciprocals = true\n"
                                   "entity_sides = object\neval_every = 100\nseed = 0\nforget_interval = " +
                                       std::to_string(k) + "\n");
  const auto t0 = Clock::now();
  const auto r = train(dir / "forget.cfg", dir / "data", dir / "out", log);
  const double secs = seconds_since(t0);
  if (r.code != 0) return {8, Outcome::Fail, "training exited with code " + std::to_string(r.code)};
  const auto rows = read_loss_log(dir / "out" / rkg::cli::kLossLog);
  int spikes = 0, missing = 0, unrecovered = 0, flagged = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].step % k != 0) continue;
    ++spikes;
    if (rows[i].forget) ++flagged;
    if (!(rows[i].loss > rows[i - 1].loss)) ++missing;
    const std::size_t later = i + static_cast<std::size_t>(k / 2);
    if (later < rows.size() && !(rows[later].loss < rows[i].loss)) ++unrecovered;
  }
  const std::size_t triples = 1000;
  const bool ok = spikes > 0 && missing == 0 && unrecovered == 0 && flagged == spikes && secs < 120.0;
  return {8, ok ? Outcome::Pass : Outcome::Fail,
          std::to_string(triples) + "-triple synthetic graph, K = " + std::to_string(k) + ": " + std::to_string(spikes) +
              " forgetting steps, " + std::to_string(missing) + " without a loss increase, " +
              std::to_string(unrecovered) + " without recovery by +K/2, " + fixed(secs, 1) + " s (budget 120 s)"};
}

Line criterion9(const Paths& p, std::ostream& log) {
  const fs::path dir = p.work / "determinism";
  fs::create_directories(dir);
  write_config(dir / "fm.cfg", "mode = fm\nmodel = complex\ndim = 64\nlearning_rate = 0.1\nbatch_size = 100\n"
                               "epochs = 3\nrp_weight = 0.5\nreg_weight = 0.01\nforget_interval = 50\n"
                               "reciprocals = true\nentity_sides = object\nseed = 3\n");
  write_config(dir / "refactor.cfg",
               "mode = refactor\nmodel = distmult\ndim = 32\nlayers = 2\nlearning_rate = 0.1\nbatch_size = 128\n"
               "epochs = 3\nsoftmax = sampled\nin_batch = 128\nglobal_negatives = 1\nreciprocals = true\nseed = 3\n");
  const char* files[] = {rkg::cli::kBestCheckpoint, rkg::cli::kLastCheckpoint, rkg::cli::kMetrics,
                         rkg::cli::kLossLog,        rkg::cli::kEpochLog,       "test_ranks.tsv"};
  int compared = 0, differing = 0;
  std::string first_diff;
  for (const std::string name : {"fm", "refactor"}) {
    const auto a = train(dir / (name + ".cfg"), p.umls, dir / (name + "_a"), log);
    const auto b = train(dir / (name + ".cfg"), p.umls, dir / (name + "_b"), log);
    if (a.code != 0 || b.code != 0) return {9, Outcome::Fail, name + " training failed"};
    for (const char* f : files) {
      ++compared;
      if (read_file(dir / (name + "_a") / f) != read_file(dir / (name + "_b") / f)) {
        ++differing;
        if (first_diff.empty()) first_diff = name + "/" + f;
      }
    }
  }
  return {9, differing == 0 ? Outcome::Pass : Outcome::Fail,
          "two runs per mode (fm, refactor), " + std::to_string(compared) + " files compared, " +
              std::to_string(differing) + " differ" + (first_diff.empty() ? "" : " (first: " + first_diff + ")")};
}

}  // namespace

int main(int argc, char** argv) {
  mallopt(M_MMAP_THRESHOLD, 1 << 28);
  mallopt(M_TRIM_THRESHOLD, 1 << 29);

  Paths paths;
  std::set<int> only;
  std::optional<fs::path> work;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::istringstream ls(argv[++i]);
      for (std::string tok; std::getline(ls, tok, ',');) only.insert(std::stoi(tok));
    } else if (a == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else if (a == "--data" && i + 1 < argc) {
      paths.umls = fs::path(argv[++i]) / "umls";
      paths.fb = fs::path(argv[i]) / "FB15K237_v1";
      paths.fb_ind = fs::path(argv[i]) / "FB15K237_v1_ind";
    } else {
      std::cerr << "usage: acceptance [--only 1,2,...] [--work DIR] [--data DIR]\n";
      return 2;
    }
  }
  paths.work = work ? *work : fs::temp_directory_path() / ("rkg_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(paths.work);
  std::ofstream log(paths.work / "training.log");
  const auto wanted = [&](int c) { return only.empty() || only.count(c) > 0; };

  std::vector<Line> lines;
  const auto emit = [&](Line l) {
    print(l);
    lines.push_back(std::move(l));
  };

  rkg::VerifyOptions vopt;
  if (wanted(1)) emit(oracle_line(1, rkg::check_layer_equivalence(40, vopt), 5.0));
  if (wanted(2)) emit(oracle_line(2, rkg::check_gradients(vopt), 30.0));
  if (wanted(3)) emit(oracle_line(3, rkg::check_ranking(1000, vopt), 10.0));
  if (wanted(4) || wanted(5)) {
    const auto runs = run_umls_complex(paths, log);
    if (wanted(4)) emit(criterion4(runs));
    if (wanted(5)) emit(criterion5(runs));
  }
  if (wanted(6)) emit(criterion6(paths, log));
  if (wanted(7)) emit(criterion7(paths, log));
  if (wanted(8)) emit(criterion8(paths, log));
  if (wanted(9)) emit(criterion9(paths, log));

  int failed = 0, skipped = 0;
  for (const auto& l : lines) {
    failed += l.outcome == Outcome::Fail;
    skipped += l.outcome == Outcome::Skip;
  }
  std::cout << lines.size() - static_cast<std::size_t>(failed + skipped) << " passed, " << failed << " failed, "
            << skipped << " skipped (work directory " << paths.work.string() << ")" << std::endl;
  if (!work) fs::remove_all(paths.work);
  if (failed > 0) return 1;
  if (skipped > 0 && skipped == static_cast<int>(lines.size())) return kSkipped;
  return 0;
}

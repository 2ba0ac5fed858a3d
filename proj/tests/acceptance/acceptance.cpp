// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and a
// final tally. Exits 0 once every criterion has been evaluated, whatever the
// verdicts; a nonzero exit means the harness itself broke.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dynroute/cost_model.hpp"
#include "dynroute/data_synth.hpp"
#include "dynroute/grad_check.hpp"
#include "dynroute/madds_counter.hpp"
#include "dynroute/scale_budget.hpp"
#include "dynroute/similarity.hpp"
#include "dynroute/supernet.hpp"
#include "dynroute/trainer.hpp"
#include "gradient_cases.hpp"

using namespace dynroute;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

int g_failed = 0;
// Verdict lines, also written to <workdir>/report.txt.
std::string g_report;

void report(int id, const std::string& name, const Verdict& v) {
  char head[96];
  std::snprintf(head, sizeof head, "criterion %d %-28s %s  ", id, name.c_str(), v.pass ? "PASS" : "FAIL");
  const std::string line = head + v.detail + "\n";
  std::fputs(line.c_str(), stdout);
  std::fflush(stdout);
  g_report += line;
  g_failed += !v.pass;
}

SupernetSpec spec_4x3() {
  SupernetSpec s;
  s.num_layers = 4;
  s.num_scales = 3;
  s.channels_per_scale = {4, 8, 16};
  s.image_channels = 1;
  s.head_channels = 8;
  return s;
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Verdict gradient_suite() {
  const auto t0 = Clock::now();
  auto cases = testing::op_cases();
  for (auto& c : testing::loss_cases()) cases.push_back(std::move(c));
  int checks = 0, bad = 0;
  double worst = 0;
  std::string first_bad;
  for (const auto& c : cases) {
    for (int seed = 0; seed < 10; ++seed) {
      const auto r = grad_check(c.fn, c.shapes, 1e-5, 1e-4, 1000 + static_cast<std::uint64_t>(seed));
      ++checks;
      worst = std::max(worst, r.max_rel_error);
      if (!r.passed || !(r.max_rel_error < 1e-4)) {
        if (bad++ == 0) first_bad = c.name;
      }
    }
  }
  const double secs = seconds_since(t0);
  std::ostringstream os;
  os << cases.size() << " cases x 10 seeds, worst rel err " << fmt("%.2e", worst) << ", "
     << fmt("%.1f", secs) << " s";
  if (bad) os << ", " << bad << " failed (first: " << first_bad << ")";
  return {bad == 0 && checks == static_cast<int>(cases.size()) * 10 && secs < 60, os.str()};
}

Verdict cost_oracle() {
  const auto t0 = Clock::now();
  const SupernetSpec spec = spec_4x3();
  ParameterSet params;
  Supernet net(spec, params, 3);
  const CostTable table = compile_cost_table(spec, 32, 32);
  Tensor img({1, 1, 32, 32});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>((i * 37) % 11) / 11.0;
  std::mt19937_64 rng(2024);
  int mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::vector<GateVector>> g(1, std::vector<GateVector>(table.nodes.size()));
    for (auto& node : g[0]) {
      for (auto& v : node) v = (rng() % 3 == 0) ? 0.0 : 1.0;
    }
    madds::local_tally().reset();
    Tape tape(false);
    const auto out = net.forward(tape, img, Mode::kInfer, GateOverride::explicit_gates(g));
    const std::int64_t executed = madds::local_tally()[madds::Category::kRoutable];
    const double predicted = network_cost(out.routes[0], table, GateSource::kBinarized);
    mismatches += predicted != static_cast<double>(executed);
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 30,
          "100 routes, " + std::to_string(mismatches) + " mismatches, " + fmt("%.1f", secs) + " s"};
}

Verdict closed_forms() {
  std::vector<std::string> wrong;
  int checked = 0;
  auto expect = [&](bool ok, const char* what) {
    ++checked;
    if (!ok) wrong.push_back(what);
  };
  expect(scale_similarity({1, 0, 1, 0}, {1, 1, 0, 0}) == 0.5, "scale_similarity");
  expect(gt_similarity(0.0, SimilarityConfig{}) == 0.6, "gt_similarity(0)");
  expect(gt_similarity(1.0, SimilarityConfig{}) == 0.95, "gt_similarity(1)");
  const double c0 = 1234.0;
  expect(expected_budget({1, 0, 1, 0}, c0) == 0.5 * c0, "expected_budget");
  expect(binarize_gates({0.5, 5e-5, 0.2}, 1e-4) == GateMask{true, false, true}, "binarize mixed");
  expect(binarize_gates({1e-4, 1e-4, 1e-4}, 1e-4) == GateMask{true, true, true}, "binarize at tau");
  expect(node_dropped(binarize_gates({9.9999e-5, 0, 0}, 1e-4)), "drop below tau");
  expect(!node_dropped(binarize_gates({0, 0, 1e-4}, 1e-4)), "keep at tau");
  std::string detail = std::to_string(checked) + " exact values";
  for (const auto& w : wrong) detail += ", wrong: " + w;
  return {wrong.empty(), detail};
}

Verdict train_infer() {
  ParameterSet params;
  Supernet net(spec_4x3(), params, 23);
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Tensor images({2, 1, 32, 32});
    for (auto& v : images.data()) v = u(rng);
    std::vector<std::vector<GateVector>> g(2, std::vector<GateVector>(net.nodes().size()));
    for (auto& sample : g) {
      for (auto& node : sample) {
        for (auto& v : node) v = (rng() & 1) ? 1.0 : 0.0;
      }
    }
    const auto gates = GateOverride::explicit_gates(g);
    Tape tt, ti(false);
    const auto tr = net.forward(tt, images, Mode::kTrain, gates);
    const auto in = net.forward(ti, images, Mode::kInfer, gates);
    for (std::size_t k = 0; k < tr.pyramid.size(); ++k) {
      const Tensor& a = tr.pyramid[k].value();
      const Tensor& b = in.pyramid[k].value();
      if (a.shape() != b.shape()) return {false, "pyramid shapes differ"};
      for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    }
  }
  return {worst <= 1e-9, "20 assignments, max |diff| " + fmt("%.2e", worst)};
}

struct RunOutcome {
  EvalSummary eval;
  std::vector<StepLog> logs;
  TrainSetup setup;
  double seconds = 0;
};

RunOutcome train_and_eval(const Corpus& corpus, BudgetStrategy strategy, double lambda_local) {
  RunOutcome r;
  r.setup.budget.strategy = strategy;
  r.setup.train.weights.lambda_local = lambda_local;
  const auto t0 = Clock::now();
  DetectorModel model(r.setup.supernet, r.setup.head, r.setup.train.seed);
  train(model, r.setup, corpus, [&](const StepLog& l) { r.logs.push_back(l); });
  r.eval = evaluate_routing(model, r.setup, corpus);
  r.seconds = seconds_since(t0);
  std::printf("  run %-13s lambda_local=%g: %.0f s, mean C_net %.4g of %.4g, std %.4g, "
              "occ1 %.4g, occ4 %.4g, within %.4f, cross %.4f\n",
              to_string(strategy), lambda_local, r.seconds, r.eval.mean, r.eval.total,
              r.eval.stddev, r.eval.mean_cnet_by_occupancy[1], r.eval.mean_cnet_by_occupancy[4],
              r.eval.within_group_cosine, r.eval.cross_group_cosine);
  std::fflush(stdout);
  return r;
}

Verdict protocol(const std::vector<const RunOutcome*>& runs) {
  int epoch1_steps = 0, nonzero = 0, drops_seen = 0, drops_wrong = 0;
  for (const RunOutcome* r : runs) {
    const TrainConfig& tc = r->setup.train;
    for (const StepLog& l : r->logs) {
      if (l.epoch != 1) continue;
      ++epoch1_steps;
      nonzero += l.global != 0.0 || l.local != 0.0;
    }
    for (std::size_t i = 1; i < r->logs.size(); ++i) {
      const StepLog& a = r->logs[i - 1];
      const StepLog& b = r->logs[i];
      if (a.epoch == b.epoch || a.epoch < 1) continue;
      const bool listed = std::find(tc.lr_drop_epochs.begin(), tc.lr_drop_epochs.end(), a.epoch) !=
                          tc.lr_drop_epochs.end();
      if (listed) {
        ++drops_seen;
        drops_wrong += std::abs(a.lr / b.lr - 10.0) > 1e-12 * 10.0;
      } else {
        drops_wrong += a.lr != b.lr;
      }
    }
  }
  const int expected_drops = static_cast<int>(runs.size() * runs.front()->setup.train.lr_drop_epochs.size());
  std::ostringstream os;
  os << epoch1_steps << " epoch-1 steps, " << nonzero << " with nonzero regularizers; "
     << drops_seen << " lr drops, " << drops_wrong << " wrong";
  return {epoch1_steps > 0 && nonzero == 0 && drops_seen == expected_drops && drops_wrong == 0,
          os.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

Verdict determinism(const std::string& cli, const fs::path& work) {
  const fs::path cfg = work / "determinism.json";
  std::ofstream(cfg) << R"({"data": {"num_images": 48}, "train": {"epochs": 1, "lr_drop_epochs": []}})"
                     << "\n";
  std::vector<std::string> reports;
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path dir = work / ("pipeline_" + std::to_string(rep));
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string q = "\"";
    const std::string base = q + cli + q + " ";
    const std::vector<std::string> steps{
        base + "gen-data --config " + q + cfg.string() + q + " --seed 77 --out " + q +
            (dir / "data").string() + q + " -q",
        base + "train --config " + q + cfg.string() + q + " --seed 77 --data " + q +
            (dir / "data").string() + q + " --out " + q + (dir / "run").string() + q + " -q",
        base + "eval --checkpoint " + q + (dir / "run" / "model.ckpt").string() + q + " --data " +
            q + (dir / "data").string() + q + " --report " + q + (dir / "eval.csv").string() + q +
            " -q",
    };
    for (const auto& cmd : steps) {
      if (std::system(cmd.c_str()) != 0) return {false, "command failed: " + cmd};
    }
    reports.push_back(slurp(dir / "eval.csv"));
  }
  const bool same = !reports[0].empty() && reports[0] == reports[1];
  return {same, std::to_string(reports[0].size()) + " CSV bytes, " + (same ? "identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dynroute acceptance run"};
  std::string cli;
  std::string workdir;
  app.add_option("--cli", cli, "Path to the dynroute executable")->required();
  app.add_option("--workdir", workdir, "Scratch directory")->required();
  CLI11_PARSE(app, argc, argv);

  try {
    const fs::path work(workdir);
    fs::create_directories(work);

    report(1, "gradient suite", gradient_suite());
    report(2, "cost oracle equivalence", cost_oracle());
    report(3, "closed-form values", closed_forms());
    report(4, "train/infer consistency", train_infer());

    const auto t0 = Clock::now();
    const Corpus corpus = generate_corpus(SynthConfig{});
    const RunOutcome fixed = train_and_eval(corpus, BudgetStrategy::kFixed, 1.0);
    const RunOutcome aware = train_and_eval(corpus, BudgetStrategy::kLossAware, 1.0);
    const RunOutcome dyn = train_and_eval(corpus, BudgetStrategy::kScaleDynamic, 1.0);
    const RunOutcome dyn_nolocal = train_and_eval(corpus, BudgetStrategy::kScaleDynamic, 0.0);
    const double train_secs = seconds_since(t0);

    {
      const bool a = dyn.eval.stddev > fixed.eval.stddev;
      const double occ1 = dyn.eval.mean_cnet_by_occupancy[1];
      const double occ4 = dyn.eval.mean_cnet_by_occupancy[4];
      const bool b = occ4 > 0 && occ1 <= 0.9 * occ4;
      std::ostringstream os;
      os << "std dyn " << fmt("%.4g", dyn.eval.stddev) << " vs fixed " << fmt("%.4g", fixed.eval.stddev)
         << " (loss_aware " << fmt("%.4g", aware.eval.stddev) << "); occ1/occ4 "
         << fmt("%.4f", occ4 > 0 ? occ1 / occ4 : 0.0) << " (need <= 0.9); " << fmt("%.0f", train_secs)
         << " s";
      report(5, "budget responsiveness", {a && b && train_secs < 45 * 60, os.str()});
    }
    {
      const double gap = dyn.eval.within_group_cosine - dyn.eval.cross_group_cosine;
      const double gap0 = dyn_nolocal.eval.within_group_cosine - dyn_nolocal.eval.cross_group_cosine;
      report(6, "similarity responsiveness",
             {gap >= 0.02, "within - cross " + fmt("%.4f", gap) + " (lambda_local=0: " +
                               fmt("%.4f", gap0) + ", need >= 0.02)"});
    }
    report(7, "protocol fidelity", protocol({&fixed, &aware, &dyn, &dyn_nolocal}));
    report(8, "determinism", determinism(cli, work));
    std::ofstream(work / "report.txt") << g_report << g_failed << " of 8 criteria failed\n";
  } catch (const std::exception& e) {
    std::fprintf(stderr, "acceptance harness error: %s\n", e.what());
    return 2;
  }

  std::printf("%d of 8 criteria failed\n", g_failed);
  return 0;
}

// dynroute: corpus generation, training, evaluation, cost reports and route
// diagrams for the scale-aware dynamic routing detector.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "dynroute/checkpoint.hpp"
#include "dynroute/config.hpp"
#include "dynroute/cost_model.hpp"
#include "dynroute/errors.hpp"
#include "dynroute/route_export.hpp"
#include "dynroute/trainer.hpp"

namespace fs = std::filesystem;
using namespace dynroute;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

struct Options {
  std::string config;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::string report;
  std::string image;
  std::string format = "dot";
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

RunConfig resolve_config(const Options& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  c.apply_seed_env();
  if (o.seed) c.set_seed(*o.seed);
  c.validate();
  return c;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw UsageError("cannot write " + path.string());
  return os;
}

struct LoadedModel {
  RunConfig config;
  std::unique_ptr<DetectorModel> model;
};

LoadedModel load_model(const std::string& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  LoadedModel m;
  m.config = parse_run_config(ckpt.meta);
  m.model = std::make_unique<DetectorModel>(m.config.setup.supernet, m.config.setup.head,
                                            m.config.setup.train.seed);
  load_into(ckpt, m.model->params());
  return m;
}

void check_corpus(const Corpus& corpus, const SupernetSpec& spec) {
  if (corpus.images.empty()) throw UsageError("evaluation set is empty");
  const int multiple = spec.input_multiple();
  for (const GrayImage& img : corpus.images) {
    if (img.width != corpus.images.front().width || img.height != corpus.images.front().height) {
      throw UsageError("images differ in size");
    }
    if (img.width % multiple != 0 || img.height % multiple != 0) {
      throw UsageError("image size " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                       " does not match the checkpoint spec (multiple of " + std::to_string(multiple) + ")");
    }
  }
}

int cmd_gen_data(const Options& o) {
  const RunConfig c = resolve_config(o);
  const Corpus corpus = generate_corpus(c.data);
  write_corpus(corpus, o.out);
  if (!o.quiet) std::printf("wrote %zu images to %s\n", corpus.images.size(), o.out.c_str());
  return kExitOk;
}

int cmd_train(const Options& o) {
  const RunConfig c = resolve_config(o);
  const Corpus corpus = read_corpus(o.data, c.setup.intervals);
  check_corpus(corpus, c.setup.supernet);
  fs::create_directories(o.out);
  const fs::path ckpt_path = fs::path(o.out) / "model.ckpt";
  std::ofstream log = open_out(fs::path(o.out) / "train_log.jsonl");
  DetectorModel model(c.setup.supernet, c.setup.head, c.setup.train.seed);
  const std::string meta = to_json(c);
  try {
    const TrainResult r = train(model, c.setup, corpus, [&](const StepLog& s) {
      log << to_json_line(s) << "\n";
      if (!o.quiet && (s.step % 64 == 0)) {
        std::printf("epoch %d step %d lr %.5g det %.4f global %.4f local %.4f cnet %.3f\n", s.epoch,
                    s.step, s.lr, s.det, s.global, s.local, s.mean_cnet_ratio);
        std::fflush(stdout);
      }
    });
    write_checkpoint(ckpt_path, model.params(), meta);
    if (!o.quiet) std::printf("trained %d steps, final L_det %.5f -> %s\n", r.steps, r.final_det, ckpt_path.c_str());
  } catch (const NumericError&) {
    log.flush();
    write_checkpoint(ckpt_path, model.params(), meta);
    throw;
  }
  return kExitOk;
}

int cmd_eval(const Options& o) {
  LoadedModel m = load_model(o.checkpoint);
  const Corpus corpus = read_corpus(o.data, m.config.setup.intervals);
  check_corpus(corpus, m.config.setup.supernet);
  const EvalSummary s = evaluate_routing(*m.model, m.config.setup, corpus);

  std::ofstream os = open_out(o.report);
  write_eval_summary_csv(os, s);
  fs::path per_sample = o.report;
  per_sample.replace_filename(per_sample.stem().string() + "_per_sample.csv");
  std::ofstream ps = open_out(per_sample);
  ps << "image_id,C_net,ratio,occupied_intervals\n";
  for (std::size_t i = 0; i < s.per_sample_cnet.size(); ++i) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%d\n",
                  static_cast<long long>(corpus.annotations[i].image_id), s.per_sample_cnet[i],
                  s.per_sample_cnet[i] / s.total, occupied_intervals(corpus.patterns[i]));
    ps << buf;
  }

  if (!o.quiet) {
    std::printf("samples            %zu\n", s.per_sample_cnet.size());
    std::printf("C_tot MAdds        %.0f (routers %.0f)\n", s.total, s.router_total);
    std::printf("mean MAdds         %.0f (%.2f%% of C_tot)\n", s.mean, 100.0 * s.mean / s.total);
    std::printf("max / min MAdds    %.0f / %.0f\n", s.max, s.min);
    std::printf("MAdds std          %.1f\n", s.stddev);
    std::printf("route cosine       within %.4f  cross %.4f\n", s.within_group_cosine, s.cross_group_cosine);
    std::printf("occupancy spearman %.4f\n", s.occupancy_spearman);
    std::printf("detection loss     %.5f\n", s.det_loss);
  }
  return kExitOk;
}

int cmd_export_route(const Options& o) {
  if (o.format != "dot" && o.format != "svg") throw UsageError("unknown format '" + o.format + "'");
  LoadedModel m = load_model(o.checkpoint);
  const SupernetSpec& spec = m.config.setup.supernet;
  const GrayImage image = read_pgm(o.image);
  Corpus one;
  one.images.push_back(image);
  check_corpus(one, spec);
  const std::size_t idx = 0;
  const Tensor x = images_to_tensor(one.images, std::span<const std::size_t>(&idx, 1), spec.image_channels);
  Tape tape(false);
  const SupernetOutput out = m.model->supernet().forward(tape, x, Mode::kInfer);
  const RouteGraph graph = build_route_graph(spec, out.routes.front());
  std::ofstream os = open_out(o.out);
  if (o.format == "dot") {
    write_dot(os, graph);
  } else {
    write_svg(os, graph, spec);
  }
  return kExitOk;
}

int cmd_cost_report(const Options& o) {
  if (!o.checkpoint.empty()) {
    LoadedModel m = load_model(o.checkpoint);
    if (o.data.empty()) throw UsageError("cost-report with --checkpoint needs --data");
    const Corpus corpus = read_corpus(o.data, m.config.setup.intervals);
    check_corpus(corpus, m.config.setup.supernet);
    const EvalSummary s = evaluate_routing(*m.model, m.config.setup, corpus);
    const CostTable table = compile_cost_table(m.config.setup.supernet, corpus.images.front().height,
                                               corpus.images.front().width);
    const CostReport report = summarize_costs(s.per_sample_cnet, table);
    if (o.out.empty()) {
      write_cost_report_csv(std::cout, report);
    } else {
      std::ofstream os = open_out(o.out);
      write_cost_report_csv(os, report);
    }
    return kExitOk;
  }
  const RunConfig c = resolve_config(o);
  const SupernetSpec& spec = c.setup.supernet;
  const CostTable table = compile_cost_table(spec, c.data.image_size, c.data.image_size);
  std::ofstream file;
  if (!o.out.empty()) file = open_out(o.out);
  std::ostream& os = o.out.empty() ? std::cout : file;
  os << "layer,scale,conv,up,keep,down,router\n";
  for (std::size_t i = 0; i < table.nodes.size(); ++i) {
    const NodeCost& k = table.per_node[i];
    char buf[160];
    std::snprintf(buf, sizeof buf, "%d,%d,%.0f,%.0f,%.0f,%.0f,%.0f\n", table.nodes[i].layer,
                  table.nodes[i].scale, k.conv, k.up, k.keep, k.down, table.router[i]);
    os << buf;
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "total,,%.0f,,,,%.0f\n", table.total, table.router_total);
  os << buf;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scale-aware dynamic routing detector toolkit"};
  app.require_subcommand(1);
  Options o;

  auto add_seed = [&](CLI::App* sub) {
    sub->add_option("--seed", o.seed, "Override data and training seeds");
    sub->add_flag("-q,--quiet", o.quiet, "Suppress progress output");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic corpus");
  gen->add_option("--config", o.config, "Run config JSON")->check(CLI::ExistingFile);
  gen->add_option("--out", o.out, "Output directory")->required();
  add_seed(gen);

  CLI::App* tr = app.add_subcommand("train", "Train supernet and head");
  tr->add_option("--config", o.config, "Run config JSON")->check(CLI::ExistingFile);
  tr->add_option("--data", o.data, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--out", o.out, "Output directory for model.ckpt and train_log.jsonl")->required();
  add_seed(tr);

  CLI::App* ev = app.add_subcommand("eval", "Routing statistics on a corpus");
  ev->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", o.data, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--report", o.report, "Summary CSV path")->required();
  ev->add_flag("-q,--quiet", o.quiet, "Suppress the printed summary");

  CLI::App* ex = app.add_subcommand("export-route", "Draw the route taken by one image");
  ex->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ex->add_option("--image", o.image, "PGM image")->required()->check(CLI::ExistingFile);
  ex->add_option("--format", o.format, "dot or svg");
  ex->add_option("--out", o.out, "Output file")->required();

  CLI::App* cr = app.add_subcommand("cost-report", "Per-node cost table or per-sample C_net");
  cr->add_option("--config", o.config, "Run config JSON")->check(CLI::ExistingFile);
  cr->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->check(CLI::ExistingFile);
  cr->add_option("--data", o.data, "Corpus directory")->check(CLI::ExistingDirectory);
  cr->add_option("--out", o.out, "Output CSV (stdout if omitted)");
  add_seed(cr);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_data(o);
    if (*tr) return cmd_train(o);
    if (*ev) return cmd_eval(o);
    if (*ex) return cmd_export_route(o);
    if (*cr) return cmd_cost_report(o);
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kExitNumeric;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitUsage;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitUsage;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInternal;
  }
  return kExitUsage;
}

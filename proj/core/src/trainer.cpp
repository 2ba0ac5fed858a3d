#include "dynroute/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <ostream>
#include <random>

#include "json.hpp"

#include "dynroute/errors.hpp"
#include "dynroute/ops.hpp"

namespace dynroute {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (!(base_lr > 0)) throw ConfigError("train: base_lr must be > 0");
  for (int e : lr_drop_epochs) {
    if (e < 1 || e > epochs) throw ConfigError("train: lr_drop_epochs must lie in [1, epochs]");
  }
  if (!(lr_drop_factor > 0)) throw ConfigError("train: lr_drop_factor must be > 0");
  if (momentum < 0 || momentum >= 1) throw ConfigError("train: momentum must be in [0, 1)");
  if (weight_decay < 0) throw ConfigError("train: weight_decay must be >= 0");
  if (weights.lambda_global < 0 || weights.lambda_local < 0) {
    throw ConfigError("train: loss weights must be >= 0");
  }
  if (weights.lambda_local > 0 && batch_size < 2) {
    throw ConfigError("train: batch_size must be >= 2 when lambda_local > 0");
  }
  if (regularizer_warmup_epochs < 0) throw ConfigError("train: warmup epochs must be >= 0");
  if (regularizer_ramp_steps < 0) throw ConfigError("train: ramp steps must be >= 0");
  if (pretrain_epochs < 0) throw ConfigError("train: pretrain_epochs must be >= 0");
}

double TrainConfig::learning_rate(int epoch) const {
  double lr = base_lr;
  for (int e : lr_drop_epochs) {
    if (epoch > e) lr *= lr_drop_factor;
  }
  return lr;
}

DetectorModel::DetectorModel(const SupernetSpec& spec, const HeadConfig& head, std::uint64_t seed)
    : params_(std::make_unique<ParameterSet>()),
      supernet_(spec, *params_, seed),
      head_(spec.head_channels, head, *params_, seed ^ 0x5eedf00dULL) {}

std::string to_json_line(const StepLog& log) {
  nlohmann::ordered_json j;
  j["step"] = log.step;
  j["epoch"] = log.epoch;
  j["lr"] = log.lr;
  j["L_det"] = log.det;
  j["L_global"] = log.global;
  j["L_local"] = log.local;
  j["L_tot"] = log.total;
  j["mean_Cnet_ratio"] = log.mean_cnet_ratio;
  return j.dump();
}

StepLog parse_step_log(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    StepLog s;
    s.step = j.at("step").get<int>();
    s.epoch = j.at("epoch").get<int>();
    s.lr = j.at("lr").get<double>();
    s.det = j.at("L_det").get<double>();
    s.global = j.at("L_global").get<double>();
    s.local = j.at("L_local").get<double>();
    s.total = j.at("L_tot").get<double>();
    s.mean_cnet_ratio = j.at("mean_Cnet_ratio").get<double>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("training log: ") + e.what());
  }
}

namespace {

std::vector<std::vector<Box>> batch_boxes(const Corpus& corpus, std::span<const std::size_t> idx) {
  std::vector<std::vector<Box>> out;
  for (std::size_t i : idx) out.push_back(corpus.annotations[i].boxes);
  return out;
}

std::vector<ScaleEncoding> batch_encodings(const Corpus& corpus, std::span<const std::size_t> idx,
                                           const ScaleIntervals& intervals) {
  std::vector<ScaleEncoding> out;
  for (std::size_t i : idx) out.push_back(encode_scales(corpus.annotations[i].boxes, intervals));
  return out;
}

class SgdMomentum {
 public:
  SgdMomentum(ParameterSet& params, double momentum, double weight_decay)
      : params_(params), momentum_(momentum), weight_decay_(weight_decay) {
    for (const auto& p : params_) velocity_.emplace_back(p->value.shape());
  }

  void step(double lr) {
    std::size_t k = 0;
    for (auto& p : params_) {
      Tensor& v = velocity_[k++];
      auto w = p->value.data();
      auto g = p->grad.data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        v[i] = momentum_ * v[i] + g[i] + weight_decay_ * w[i];
        w[i] -= lr * v[i];
      }
    }
  }

 private:
  ParameterSet& params_;
  double momentum_;
  double weight_decay_;
  std::vector<Tensor> velocity_;
};

}  // namespace

TrainResult train(DetectorModel& model, const TrainSetup& setup, const Corpus& corpus,
                  const StepObserver& observer) {
  const TrainConfig& cfg = setup.train;
  cfg.validate();
  setup.similarity.validate();
  if (corpus.images.empty()) throw UsageError("train: empty corpus");
  const SupernetSpec& spec = model.supernet().spec();
  const int height = corpus.images.front().height;
  const int width = corpus.images.front().width;
  const CostTable table = compile_cost_table(spec, height, width);
  const PyramidGeometry geometry = make_pyramid_geometry(spec, height, width, setup.intervals);
  BudgetPolicy policy(setup.budget, setup.budget.c0_ratio * table.total);

  const int n = static_cast<int>(corpus.images.size());
  const int batch = std::min(cfg.batch_size, n);
  const int steps_per_epoch = n / batch;

  SgdMomentum optimizer(model.params(), cfg.momentum, cfg.weight_decay);
  std::mt19937_64 shuffle_rng(cfg.seed);
  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  std::vector<Tensor> last_good;

  TrainResult result;
  int regularized_steps = 0;
  const int first_epoch = cfg.pretrain_epochs > 0 ? 1 - cfg.pretrain_epochs : 1;
  for (int epoch = first_epoch; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const bool dense = epoch < 1;
    const double lr = dense ? cfg.base_lr : cfg.learning_rate(epoch);
    const bool regularize = !dense && epoch > cfg.regularizer_warmup_epochs;
    const GateOverride gates_override = dense ? GateOverride::all_open() : GateOverride{};

    for (int s = 0; s < steps_per_epoch; ++s) {
      const std::span<const std::size_t> idx(order.data() + static_cast<std::size_t>(s * batch),
                                             static_cast<std::size_t>(batch));
      const Tensor images = images_to_tensor(corpus.images, idx, spec.image_channels);
      const auto boxes = batch_boxes(corpus, idx);
      const auto encodings = batch_encodings(corpus, idx, setup.intervals);

      Tape tape;
      const SupernetOutput out = model.supernet().forward(tape, images, Mode::kTrain, gates_override);
      const DensePrediction pred = model.head().forward(tape, out.pyramid);
      const DetectionTargets targets = assign_targets(boxes, geometry, model.head().config().num_classes);
      const DetectionLoss det = detection_loss(pred, targets, model.head().config());

      StepLog log;
      log.step = result.steps + 1;
      log.epoch = dense ? 0 : epoch;
      log.lr = lr;
      for (const RouteRecord& r : out.routes) {
        log.mean_cnet_ratio += network_cost(r, table, GateSource::kContinuous) / table.total;
      }
      log.mean_cnet_ratio /= batch;

      Var zero = tape.constant(Tensor::scalar(0.0));
      Var global = zero, local = zero;
      LossWeights weights = cfg.weights;
      if (regularize) {
        const double ramp = cfg.regularizer_ramp_steps == 0
                                ? 1.0
                                : std::min(1.0, (regularized_steps + 1.0) / cfg.regularizer_ramp_steps);
        weights.lambda_global *= ramp;
        weights.lambda_local *= ramp;
        Var cnet_ratio = ops::scale(network_cost(out.gates, table), 1.0 / table.total);
        std::vector<double> budgets = policy.assign(encodings, det.per_sample);
        for (double& b : budgets) b /= table.total;
        global = global_budget_loss(cnet_ratio, budgets);
        if (batch >= 2) local = local_similarity_loss(flatten_routes(out.gates), encodings, setup.similarity);
        ++regularized_steps;
      }
      Var total;
      try {
        total = total_loss(det.total, global, local, weights, regularize);
      } catch (const NumericError&) {
        if (!last_good.empty()) {
          std::size_t k = 0;
          for (auto& p : model.params()) p->value = last_good[k++];
        }
        throw;
      }
      log.det = det.total.item();
      log.global = global.item();
      log.local = local.item();
      log.total = total.item();

      last_good.clear();
      for (const auto& p : model.params()) last_good.push_back(p->value);

      model.params().zero_grad();
      tape.backward(total);
      optimizer.step(lr);

      ++result.steps;
      result.final_det = log.det;
      if (observer) observer(log);
    }
  }
  return result;
}

double spearman_correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) return 0.0;
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&v](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0 || vb == 0) return 0.0;
  return cov / std::sqrt(va * vb);
}

EvalSummary evaluate_routing(const DetectorModel& model, const TrainSetup& setup,
                             const Corpus& corpus, int batch_size) {
  if (corpus.images.empty()) throw UsageError("evaluate_routing: empty evaluation set");
  const SupernetSpec& spec = model.supernet().spec();
  const int height = corpus.images.front().height;
  const int width = corpus.images.front().width;
  const CostTable table = compile_cost_table(spec, height, width);
  const PyramidGeometry geometry = make_pyramid_geometry(spec, height, width, setup.intervals);
  const int m = setup.intervals.count();

  EvalSummary summary;
  std::vector<std::vector<double>> routes;
  std::vector<ScaleEncoding> encodings;
  double det_sum = 0;
  const std::size_t n = corpus.images.size();
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(n, start + static_cast<std::size_t>(batch_size)); ++i) {
      idx.push_back(i);
    }
    const Tensor images = images_to_tensor(corpus.images, idx, spec.image_channels);
    Tape tape(false);
    const SupernetOutput out = model.supernet().forward(tape, images, Mode::kInfer);
    const DensePrediction pred = model.head().forward(tape, out.pyramid);
    const auto boxes = batch_boxes(corpus, idx);
    const DetectionTargets targets = assign_targets(boxes, geometry, model.head().config().num_classes);
    const DetectionLoss det = detection_loss(pred, targets, model.head().config());
    for (double v : det.per_sample) det_sum += v;
    for (const RouteRecord& r : out.routes) {
      summary.per_sample_cnet.push_back(network_cost(r, table, GateSource::kBinarized));
      routes.push_back(route_vector(r, true));
    }
    for (auto& e : batch_encodings(corpus, idx, setup.intervals)) encodings.push_back(std::move(e));
  }

  const CostReport report = summarize_costs(summary.per_sample_cnet, table);
  summary.total = report.total;
  summary.router_total = report.router_total;
  summary.mean = report.mean;
  summary.max = report.max;
  summary.min = report.min;
  summary.stddev = report.stddev;
  summary.det_loss = det_sum / static_cast<double>(n);

  std::map<ScaleEncoding, int> group_size;
  for (const auto& e : encodings) ++group_size[e];
  double within = 0, cross = 0;
  std::size_t within_pairs = 0, cross_pairs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double c = path_similarity(routes[i], routes[j]);
      if (encodings[i] == encodings[j]) {
        within += c;
        ++within_pairs;
      } else {
        cross += c;
        ++cross_pairs;
      }
    }
  }
  summary.within_group_cosine = within_pairs ? within / static_cast<double>(within_pairs) : 0.0;
  summary.cross_group_cosine = cross_pairs ? cross / static_cast<double>(cross_pairs) : 0.0;

  std::vector<double> occupancy;
  std::vector<double> sums(static_cast<std::size_t>(m + 1), 0.0);
  std::vector<int> counts(static_cast<std::size_t>(m + 1), 0);
  for (std::size_t i = 0; i < n; ++i) {
    const int k = occupied_intervals(encodings[i]);
    occupancy.push_back(k);
    sums[static_cast<std::size_t>(k)] += summary.per_sample_cnet[i];
    ++counts[static_cast<std::size_t>(k)];
  }
  for (int k = 0; k <= m; ++k) {
    summary.mean_cnet_by_occupancy.push_back(
        counts[static_cast<std::size_t>(k)] ? sums[static_cast<std::size_t>(k)] / counts[static_cast<std::size_t>(k)] : 0.0);
  }
  summary.occupancy_spearman = spearman_correlation(occupancy, summary.per_sample_cnet);
  return summary;
}

void write_eval_summary_csv(std::ostream& os, const EvalSummary& s) {
  os << "num_samples,C_tot,router_madds,mean_madds,max_madds,min_madds,std_madds,"
        "within_group_cosine,cross_group_cosine,occupancy_spearman";
  for (std::size_t k = 0; k < s.mean_cnet_by_occupancy.size(); ++k) os << ",mean_madds_occ" << k;
  os << ",det_loss\n";
  char buf[64];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, ",%.17g", v);
    os << buf;
  };
  os << s.per_sample_cnet.size();
  for (double v : {s.total, s.router_total, s.mean, s.max, s.min, s.stddev, s.within_group_cosine,
                   s.cross_group_cosine, s.occupancy_spearman}) {
    put(v);
  }
  for (double v : s.mean_cnet_by_occupancy) put(v);
  put(s.det_loss);
  os << "\n";
}

}  // namespace dynroute

#ifndef DYNROUTE_TRAINER_HPP_
#define DYNROUTE_TRAINER_HPP_

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dynroute/cost_model.hpp"
#include "dynroute/data_synth.hpp"
#include "dynroute/detection_head.hpp"
#include "dynroute/scale_budget.hpp"
#include "dynroute/similarity.hpp"
#include "dynroute/supernet.hpp"

namespace dynroute {

struct TrainConfig {
  int batch_size = 8;
  int epochs = 12;
  double base_lr = 0.01;
  std::vector<int> lr_drop_epochs = {8, 11};
  double lr_drop_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  LossWeights weights;
  // Epochs trained on L_det alone before the regularizers switch on.
  int regularizer_warmup_epochs = 1;
  // Steps over which the regularizer weights ramp linearly to their values.
  int regularizer_ramp_steps = 100;
  // Dense supernet pretraining before the routed schedule: routers bypassed,
  // every gate 1, L_det only, base_lr. Logged as epoch 0.
  int pretrain_epochs = 0;
  std::uint64_t seed = 1;

  void validate() const;
  // Learning rate for a 1-based epoch: dropped by lr_drop_factor after each
  // listed epoch.
  double learning_rate(int epoch) const;
};

// Supernet plus detection head sharing one parameter set.
class DetectorModel {
 public:
  DetectorModel(const SupernetSpec& spec, const HeadConfig& head, std::uint64_t seed);

  ParameterSet& params() { return *params_; }
  const ParameterSet& params() const { return *params_; }
  const Supernet& supernet() const { return supernet_; }
  const DetectionHead& head() const { return head_; }
  DetectionHead& head() { return head_; }

 private:
  std::unique_ptr<ParameterSet> params_;
  Supernet supernet_;
  DetectionHead head_;
};

// One JSON-lines training log record.
struct StepLog {
  int step = 0;   // 1-based
  int epoch = 0;  // 1-based
  double lr = 0;
  double det = 0;
  double global = 0;
  double local = 0;
  double total = 0;
  double mean_cnet_ratio = 0;
};

std::string to_json_line(const StepLog& log);
StepLog parse_step_log(const std::string& line);

struct TrainSetup {
  SupernetSpec supernet = SupernetSpec::desk_default();
  HeadConfig head;
  BudgetConfig budget;
  SimilarityConfig similarity;
  ScaleIntervals intervals = ScaleIntervals::desk_default();
  TrainConfig train;
};

struct TrainResult {
  int steps = 0;
  double final_det = 0;
};

using StepObserver = std::function<void(const StepLog&)>;

// Optional dense pretraining, then SGD with momentum on L_det + lambda1
// L_global + lambda2 L_local. Regularizers are off for the warmup epochs and
// then ramp in. Throws NumericError on a
// non-finite loss after restoring the parameters of the last good step.
TrainResult train(DetectorModel& model, const TrainSetup& setup, const Corpus& corpus,
                  const StepObserver& observer = {});

struct EvalSummary {
  std::vector<double> per_sample_cnet;
  double total = 0;  // C_tot
  double router_total = 0;
  double mean = 0;
  double max = 0;
  double min = 0;
  double stddev = 0;
  // Mean cosine of executed route vectors over pairs sharing a scale
  // encoding (groups of >= 2 samples) and over pairs with different ones.
  double within_group_cosine = 0;
  double cross_group_cosine = 0;
  // Spearman correlation between occupied interval count and C_net.
  double occupancy_spearman = 0;
  // Index k: mean C_net over images with k occupied intervals (0 if none).
  std::vector<double> mean_cnet_by_occupancy;
  double det_loss = 0;
};

// Inference-mode routing statistics over a corpus. UsageError when empty.
EvalSummary evaluate_routing(const DetectorModel& model, const TrainSetup& setup,
                             const Corpus& corpus, int batch_size = 16);

// Single header + single row; numbers printed with %.17g.
void write_eval_summary_csv(std::ostream& os, const EvalSummary& summary);
// Average ranks for ties.
double spearman_correlation(std::span<const double> a, std::span<const double> b);

}  // namespace dynroute

#endif  // DYNROUTE_TRAINER_HPP_

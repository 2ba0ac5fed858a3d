#ifndef DYNROUTE_SCALE_BUDGET_HPP_
#define DYNROUTE_SCALE_BUDGET_HPP_

#include <cstdint>
#include <deque>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dynroute/tape.hpp"

namespace dynroute {

// Object-size intervals over max(h, w). Interval i (0-based) is
// (upper[i-1], upper[i]] with the first closed at 0 and the last open-ended,
// so there are upper.size() + 1 intervals.
struct ScaleIntervals {
  std::vector<double> upper;

  // [0, 64], (64, 150], (150, 360], (360, inf)
  static ScaleIntervals coco() { return {{64, 150, 360}}; }
  // Same four-interval layout for 64 x 64 images.
  static ScaleIntervals desk_default() { return {{8, 16, 32}}; }

  int count() const { return static_cast<int>(upper.size()) + 1; }
  int interval_of(double size) const;
  void validate() const;
};

struct Box {
  double x = 0;
  double y = 0;
  double w = 0;
  double h = 0;
  int cls = 0;
};

// m binary entries; entry i is 1 iff some object's size lies in interval i.
using ScaleEncoding = std::vector<std::uint8_t>;

// DataError naming the offending box when a side is not positive.
ScaleEncoding encode_scales(std::span<const Box> boxes, const ScaleIntervals& intervals);

int occupied_intervals(const ScaleEncoding& s);

// C0 * (1/m) * sum(s).
double expected_budget(const ScaleEncoding& s, double c0);

double fixed_budget(double c0);

// Rank r = fraction of buffered losses strictly below `current_loss`,
// mapped to c0 * (1 + 3r). UsageError on an empty buffer.
double loss_aware_budget(std::span<const double> buffer, double current_loss, double c0);

// (c_net - c_expect)^2 for one sample in normalized units.
double global_budget_loss(double c_net, double c_expect);
// Batch mean of (c_net[i] - c_expect[i])^2; c_net is a tracked length-B
// vector of normalized costs.
Var global_budget_loss(Var c_net, std::span<const double> c_expect);

enum class BudgetStrategy { kFixed, kLossAware, kScaleDynamic };

const char* to_string(BudgetStrategy s);
BudgetStrategy budget_strategy_from_string(const std::string& s);

struct BudgetConfig {
  // C0 as a fraction of C_tot.
  double c0_ratio = 0.05;
  BudgetStrategy strategy = BudgetStrategy::kScaleDynamic;
  int loss_buffer_len = 100;

  void validate() const;
};

// Per-sample expected budgets, in the same units as c0. Holds the FIFO loss
// buffer of the loss-aware strategy; single writer.
class BudgetPolicy {
 public:
  BudgetPolicy(BudgetConfig config, double c0);

  // `det_losses` is only read by the loss-aware strategy, which ranks each
  // sample against the buffer and then appends it. Scale-dynamic images with
  // no objects get the one-interval floor c0 / m.
  std::vector<double> assign(std::span<const ScaleEncoding> encodings,
                             std::span<const double> det_losses);

  double c0() const { return c0_; }
  const std::deque<double>& buffer() const { return buffer_; }

 private:
  BudgetConfig config_;
  double c0_;
  std::deque<double> buffer_;
};

// One image's annotation record: {"image_id": N, "boxes": [[x,y,w,h,class], ...]}
struct Annotation {
  std::int64_t image_id = 0;
  std::vector<Box> boxes;
};

std::string to_json_line(const Annotation& a);
Annotation parse_annotation(const std::string& line);
void write_annotations(const std::filesystem::path& path, std::span<const Annotation> records);
std::vector<Annotation> read_annotations(const std::filesystem::path& path);

}  // namespace dynroute

#endif  // DYNROUTE_SCALE_BUDGET_HPP_

#include "dynroute/scale_budget.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"

#include "dynroute/errors.hpp"
#include "dynroute/ops.hpp"

namespace dynroute {

int ScaleIntervals::interval_of(double size) const {
  const auto it = std::lower_bound(upper.begin(), upper.end(), size);
  return static_cast<int>(it - upper.begin());
}

void ScaleIntervals::validate() const {
  for (std::size_t i = 0; i < upper.size(); ++i) {
    if (!(upper[i] > 0) || (i > 0 && !(upper[i] > upper[i - 1]))) {
      throw ConfigError("scale intervals: boundaries must be positive and strictly increasing");
    }
  }
}

ScaleEncoding encode_scales(std::span<const Box> boxes, const ScaleIntervals& intervals) {
  ScaleEncoding s(static_cast<std::size_t>(intervals.count()), 0);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const Box& b = boxes[i];
    if (!(b.w > 0) || !(b.h > 0)) {
      throw DataError("annotation box " + std::to_string(i) + " has non-positive side (w=" +
                      std::to_string(b.w) + ", h=" + std::to_string(b.h) + ")");
    }
    s[static_cast<std::size_t>(intervals.interval_of(std::max(b.w, b.h)))] = 1;
  }
  return s;
}

int occupied_intervals(const ScaleEncoding& s) {
  return std::accumulate(s.begin(), s.end(), 0);
}

double expected_budget(const ScaleEncoding& s, double c0) {
  if (s.empty()) throw UsageError("expected_budget: empty scale encoding");
  return c0 * occupied_intervals(s) / static_cast<double>(s.size());
}

double fixed_budget(double c0) { return c0; }

double loss_aware_budget(std::span<const double> buffer, double current_loss, double c0) {
  if (buffer.empty()) throw UsageError("loss_aware_budget: loss buffer is empty");
  const auto below = std::count_if(buffer.begin(), buffer.end(),
                                   [current_loss](double l) { return l < current_loss; });
  const double rank = static_cast<double>(below) / static_cast<double>(buffer.size());
  return c0 * (1.0 + 3.0 * rank);
}

double global_budget_loss(double c_net, double c_expect) {
  return (c_net - c_expect) * (c_net - c_expect);
}

Var global_budget_loss(Var c_net, std::span<const double> c_expect) {
  if (c_net.value().rank() != 1 || static_cast<std::size_t>(c_net.value().dim(0)) != c_expect.size()) {
    throw ConfigError("global_budget_loss: " + shape_to_string(c_net.shape()) + " costs for " +
                      std::to_string(c_expect.size()) + " budgets");
  }
  Var target = c_net.tape->constant(
      Tensor(Shape{static_cast<int>(c_expect.size())},
             std::vector<double>(c_expect.begin(), c_expect.end())));
  return ops::mean(ops::square(ops::sub(c_net, target)));
}

const char* to_string(BudgetStrategy s) {
  switch (s) {
    case BudgetStrategy::kFixed:
      return "fixed";
    case BudgetStrategy::kLossAware:
      return "loss_aware";
    case BudgetStrategy::kScaleDynamic:
      return "scale_dynamic";
  }
  return "?";
}

BudgetStrategy budget_strategy_from_string(const std::string& s) {
  if (s == "fixed") return BudgetStrategy::kFixed;
  if (s == "loss_aware") return BudgetStrategy::kLossAware;
  if (s == "scale_dynamic") return BudgetStrategy::kScaleDynamic;
  throw ConfigError("unknown budget strategy '" + s + "'");
}

void BudgetConfig::validate() const {
  if (!(c0_ratio > 0) || c0_ratio > 1) throw ConfigError("budget: c0_ratio must be in (0, 1]");
  if (loss_buffer_len < 1) throw ConfigError("budget: loss_buffer_len must be >= 1");
}

BudgetPolicy::BudgetPolicy(BudgetConfig config, double c0) : config_(config), c0_(c0) {
  config_.validate();
  if (!(c0 > 0)) throw ConfigError("budget: C0 must be positive");
}

std::vector<double> BudgetPolicy::assign(std::span<const ScaleEncoding> encodings,
                                         std::span<const double> det_losses) {
  std::vector<double> out;
  out.reserve(encodings.size());
  for (std::size_t i = 0; i < encodings.size(); ++i) {
    switch (config_.strategy) {
      case BudgetStrategy::kFixed:
        out.push_back(fixed_budget(c0_));
        break;
      case BudgetStrategy::kScaleDynamic: {
        const ScaleEncoding& s = encodings[i];
        out.push_back(occupied_intervals(s) == 0 ? c0_ / static_cast<double>(s.size())
                                                 : expected_budget(s, c0_));
        break;
      }
      case BudgetStrategy::kLossAware: {
        if (det_losses.size() != encodings.size()) {
          throw UsageError("loss-aware budget needs one detection loss per sample");
        }
        const double loss = det_losses[i];
        if (buffer_.empty()) {
          out.push_back(c0_ * 2.5);
        } else {
          const std::vector<double> snapshot(buffer_.begin(), buffer_.end());
          out.push_back(loss_aware_budget(snapshot, loss, c0_));
        }
        buffer_.push_back(loss);
        while (static_cast<int>(buffer_.size()) > config_.loss_buffer_len) buffer_.pop_front();
        break;
      }
    }
  }
  return out;
}

std::string to_json_line(const Annotation& a) {
  nlohmann::ordered_json j;
  j["image_id"] = a.image_id;
  j["boxes"] = nlohmann::ordered_json::array();
  for (const Box& b : a.boxes) j["boxes"].push_back({b.x, b.y, b.w, b.h, b.cls});
  return j.dump();
}

Annotation parse_annotation(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("annotation: invalid JSON: ") + e.what());
  }
  Annotation a;
  try {
    a.image_id = j.at("image_id").get<std::int64_t>();
    for (const auto& b : j.at("boxes")) {
      if (!b.is_array() || b.size() != 5) {
        throw DataError("annotation " + std::to_string(a.image_id) +
                        ": each box must be [x, y, w, h, class]");
      }
      a.boxes.push_back(Box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                            b[3].get<double>(), b[4].get<int>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("annotation: ") + e.what());
  }
  return a;
}

void write_annotations(const std::filesystem::path& path, std::span<const Annotation> records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw UsageError("cannot write " + path.string());
  for (const Annotation& a : records) os << to_json_line(a) << "\n";
}

std::vector<Annotation> read_annotations(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read annotations " + path.string());
  std::vector<Annotation> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.push_back(parse_annotation(line));
  }
  return out;
}

}  // namespace dynroute

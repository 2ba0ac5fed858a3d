#include "dynroute/detection_head.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <random>

#include "dynroute/errors.hpp"
#include "dynroute/madds_counter.hpp"
#include "dynroute/ops.hpp"

namespace dynroute {
namespace {

// Initial foreground probability of the classifier.
constexpr double kPriorProbability = 0.01;
// Floor on regression targets (stride units) for center-cell fallbacks whose
// location center falls outside a tiny box.
constexpr double kMinDistance = 0.05;

void init_uniform(Parameter& p, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double& v : p.value.data()) v = u(rng);
}

}  // namespace

void HeadConfig::validate() const {
  if (num_classes < 1) throw ConfigError("head: num_classes must be >= 1");
  if (tower_depth < 0) throw ConfigError("head: tower_depth must be >= 0");
  if (!(focal_alpha >= 0 && focal_alpha <= 1)) throw ConfigError("head: focal_alpha in [0, 1]");
  if (!(focal_gamma >= 0)) throw ConfigError("head: focal_gamma must be >= 0");
}

PyramidGeometry make_pyramid_geometry(const SupernetSpec& spec, int image_height,
                                      int image_width, const ScaleIntervals& intervals) {
  intervals.validate();
  PyramidGeometry g;
  const int levels = spec.num_scales + 1;
  int h = 0, w = 0;
  for (int k = 0; k < levels; ++k) {
    PyramidGeometry::Level lv;
    lv.stride = 8 << k;
    if (k < spec.num_scales) {
      h = spec.scale_size(image_height, k);
      w = spec.scale_size(image_width, k);
    } else {
      h = (h - 1) / 2 + 1;
      w = (w - 1) / 2 + 1;
    }
    lv.height = h;
    lv.width = w;
    g.levels.push_back(lv);
  }
  const int m = intervals.count();
  const double inf = std::numeric_limits<double>::infinity();
  for (int i = 0; i < m; ++i) {
    const int k = std::min(i, levels - 1);
    const double lo = i == 0 ? 0.0 : intervals.upper[static_cast<std::size_t>(i - 1)];
    const double hi = i == m - 1 ? inf : intervals.upper[static_cast<std::size_t>(i)];
    auto& lv = g.levels[static_cast<std::size_t>(k)];
    if (lv.max_size == 0) lv.min_size = lo;
    lv.max_size = hi;
  }
  return g;
}

DetectionHead::DetectionHead(int in_channels, HeadConfig config, ParameterSet& params,
                             std::uint64_t seed)
    : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  for (int i = 0; i < config_.tower_depth; ++i) {
    const std::string p = "head.tower" + std::to_string(i);
    TowerLayer t{&params.add(p + ".dw", Shape{in_channels, 3, 3}),
                 &params.add(p + ".pw", Shape{in_channels, in_channels}),
                 &params.add(p + ".gn_gamma", Shape{in_channels}),
                 &params.add(p + ".gn_beta", Shape{in_channels})};
    t.norm_gamma->value.fill(1.0);
    init_uniform(*t.dw, std::sqrt(3.0 / 9.0), rng);
    init_uniform(*t.pw, std::sqrt(6.0 / in_channels), rng);
    tower_.push_back(t);
  }
  cls_w_ = &params.add("head.cls_w", Shape{config_.num_classes, in_channels});
  cls_b_ = &params.add("head.cls_b", Shape{config_.num_classes});
  box_w_ = &params.add("head.box_w", Shape{4, in_channels});
  box_b_ = &params.add("head.box_b", Shape{4});
  init_uniform(*cls_w_, 0.01, rng);
  init_uniform(*box_w_, 0.01, rng);
  cls_b_->value.fill(-std::log((1.0 - kPriorProbability) / kPriorProbability));
}

void DetectionHead::zero_output_layers() {
  for (Parameter* p : {cls_w_, cls_b_, box_w_, box_b_}) p->value.fill(0.0);
}

DensePrediction DetectionHead::forward(Tape& tape, std::span<const Var> pyramid) const {
  madds::CategoryScope scope(madds::Category::kHead);
  DensePrediction out;
  for (const Var& feature : pyramid) {
    Var x = feature;
    for (const TowerLayer& t : tower_) {
      x = ops::depthwise_separable_conv3x3(x, tape.param(*t.dw), tape.param(*t.pw), 1);
      x = ops::relu(ops::group_norm(x, tape.param(*t.norm_gamma), tape.param(*t.norm_beta)));
    }
    LevelPrediction lp;
    lp.cls_logits = ops::add_channel_bias(ops::conv2d_1x1(x, tape.param(*cls_w_), 1),
                                          tape.param(*cls_b_));
    lp.box = ops::exp(ops::add_channel_bias(ops::conv2d_1x1(x, tape.param(*box_w_), 1),
                                            tape.param(*box_b_)));
    out.levels.push_back(lp);
  }
  return out;
}

DetectionTargets assign_targets(std::span<const std::vector<Box>> boxes_per_image,
                                const PyramidGeometry& geometry, int num_classes) {
  const int batch = static_cast<int>(boxes_per_image.size());
  DetectionTargets targets;
  targets.positives_per_sample.assign(static_cast<std::size_t>(batch), 0);
  for (const auto& lv : geometry.levels) {
    LevelTargets lt;
    lt.cls = Tensor(Shape{batch, num_classes, lv.height, lv.width});
    lt.box = Tensor(Shape{batch, 4, lv.height, lv.width});
    lt.mask = Tensor(Shape{batch, lv.height, lv.width});
    const double stride = lv.stride;
    for (int b = 0; b < batch; ++b) {
      std::vector<double> owner_area(static_cast<std::size_t>(lv.height * lv.width),
                                     std::numeric_limits<double>::infinity());
      std::vector<int> owner(owner_area.size(), -1);
      const auto& boxes = boxes_per_image[static_cast<std::size_t>(b)];
      for (std::size_t n = 0; n < boxes.size(); ++n) {
        const Box& bx = boxes[n];
        const double size = std::max(bx.w, bx.h);
        if (!(size > lv.min_size && size <= lv.max_size)) continue;
        if (bx.cls < 0 || bx.cls >= num_classes) {
          throw DataError("box class " + std::to_string(bx.cls) + " out of range");
        }
        const int center_i = std::clamp(static_cast<int>(std::floor((bx.y + bx.h / 2) / stride)), 0, lv.height - 1);
        const int center_j = std::clamp(static_cast<int>(std::floor((bx.x + bx.w / 2) / stride)), 0, lv.width - 1);
        const double area = bx.w * bx.h;
        for (int i = 0; i < lv.height; ++i) {
          const double cy = (i + 0.5) * stride;
          for (int j = 0; j < lv.width; ++j) {
            const double cx = (j + 0.5) * stride;
            const bool inside = cx > bx.x && cx < bx.x + bx.w && cy > bx.y && cy < bx.y + bx.h;
            const bool center_cell = (i == center_i && j == center_j);
            if (!inside && !center_cell) continue;
            const std::size_t loc = static_cast<std::size_t>(i * lv.width + j);
            if (area < owner_area[loc]) {
              owner_area[loc] = area;
              owner[loc] = static_cast<int>(n);
            }
          }
        }
      }
      for (int i = 0; i < lv.height; ++i) {
        for (int j = 0; j < lv.width; ++j) {
          const int n = owner[static_cast<std::size_t>(i * lv.width + j)];
          if (n < 0) continue;
          const Box& bx = boxes[static_cast<std::size_t>(n)];
          const double cx = (j + 0.5) * stride;
          const double cy = (i + 0.5) * stride;
          lt.cls.at(b, bx.cls, i, j) = 1.0;
          lt.box.at(b, 0, i, j) = std::max((cx - bx.x) / stride, kMinDistance);
          lt.box.at(b, 1, i, j) = std::max((cy - bx.y) / stride, kMinDistance);
          lt.box.at(b, 2, i, j) = std::max((bx.x + bx.w - cx) / stride, kMinDistance);
          lt.box.at(b, 3, i, j) = std::max((bx.y + bx.h - cy) / stride, kMinDistance);
          lt.mask[static_cast<std::size_t>((b * lv.height + i) * lv.width + j)] = 1.0;
          ++lt.positives;
          ++targets.positives_per_sample[static_cast<std::size_t>(b)];
        }
      }
    }
    targets.total_positives += lt.positives;
    targets.levels.push_back(std::move(lt));
  }
  return targets;
}

namespace {

Tensor slice_mask(const Tensor& mask, int b) {
  const int h = mask.dim(1), w = mask.dim(2);
  const auto first = mask.data().begin() + static_cast<std::ptrdiff_t>(b) * h * w;
  return Tensor(Shape{1, h, w}, std::vector<double>(first, first + h * w));
}

}  // namespace

DetectionLoss detection_loss(const DensePrediction& pred, const DetectionTargets& targets,
                             const HeadConfig& config) {
  if (pred.levels.size() != targets.levels.size() || pred.levels.empty()) {
    throw ConfigError("detection_loss: " + std::to_string(pred.levels.size()) +
                      " predicted levels vs " + std::to_string(targets.levels.size()) + " targets");
  }
  Tape& tape = *pred.levels.front().cls_logits.tape;
  const double norm = std::max(1, targets.total_positives);
  std::optional<Var> cls, loc;
  for (std::size_t k = 0; k < pred.levels.size(); ++k) {
    const LevelPrediction& lp = pred.levels[k];
    const LevelTargets& lt = targets.levels[k];
    Var c = ops::sigmoid_focal_loss_sum(lp.cls_logits, lt.cls, config.focal_alpha, config.focal_gamma);
    cls = cls ? ops::add(*cls, c) : c;
    if (lt.positives > 0) {
      Var l = ops::iou_loss_sum(lp.box, lt.box, lt.mask);
      loc = loc ? ops::add(*loc, l) : l;
    }
  }
  DetectionLoss out;
  out.classification = ops::scale(*cls, 1.0 / norm);
  out.localization = loc ? ops::scale(*loc, 1.0 / norm) : tape.constant(Tensor::scalar(0.0));
  out.total = ops::add(out.classification, out.localization);

  const int batch = pred.levels.front().cls_logits.value().dim(0);
  for (int b = 0; b < batch; ++b) {
    Tape local(false);
    double c = 0.0, l = 0.0;
    for (std::size_t k = 0; k < pred.levels.size(); ++k) {
      const LevelPrediction& lp = pred.levels[k];
      const LevelTargets& lt = targets.levels[k];
      c += ops::sigmoid_focal_loss_sum(local.constant(lp.cls_logits.value().batch_slice(b)),
                                       lt.cls.batch_slice(b), config.focal_alpha,
                                       config.focal_gamma)
               .item();
      l += ops::iou_loss_sum(local.constant(lp.box.value().batch_slice(b)), lt.box.batch_slice(b),
                             slice_mask(lt.mask, b))
               .item();
    }
    const double n = std::max(1, targets.positives_per_sample[static_cast<std::size_t>(b)]);
    out.per_sample.push_back((c + l) / n);
  }
  return out;
}

Var total_loss(Var det, Var global, Var local, const LossWeights& weights,
               bool regularizers_active) {
  for (const Var* v : {&det, &global, &local}) {
    if (!std::isfinite(v->item())) {
      throw NumericError("total_loss: non-finite term (L_det=" + std::to_string(det.item()) +
                         ", L_global=" + std::to_string(global.item()) +
                         ", L_local=" + std::to_string(local.item()) + ")");
    }
  }
  if (!regularizers_active) return det;
  return ops::add(det, ops::add(ops::scale(global, weights.lambda_global),
                                ops::scale(local, weights.lambda_local)));
}

void write_prediction_csv(std::ostream& os, std::span<const std::int64_t> image_ids,
                          const DensePrediction& pred, const PyramidGeometry& geometry,
                          double min_score) {
  os << "image_id,level,x,y,class,score,l,t,r,b\n";
  char buf[256];
  for (std::size_t k = 0; k < pred.levels.size(); ++k) {
    const Tensor& logits = pred.levels[k].cls_logits.value();
    const Tensor& box = pred.levels[k].box.value();
    const double stride = geometry.levels[k].stride;
    const int batch = logits.dim(0), classes = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
    for (int b = 0; b < batch; ++b) {
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
          int best = 0;
          for (int c = 1; c < classes; ++c) {
            if (logits.at(b, c, i, j) > logits.at(b, best, i, j)) best = c;
          }
          const double score = 1.0 / (1.0 + std::exp(-logits.at(b, best, i, j)));
          if (score < min_score) continue;
          std::snprintf(buf, sizeof buf, "%lld,%zu,%g,%g,%d,%.6g,%.6g,%.6g,%.6g,%.6g\n",
                        static_cast<long long>(image_ids[static_cast<std::size_t>(b)]), k,
                        (j + 0.5) * stride, (i + 0.5) * stride, best, score,
                        box.at(b, 0, i, j) * stride, box.at(b, 1, i, j) * stride,
                        box.at(b, 2, i, j) * stride, box.at(b, 3, i, j) * stride);
          os << buf;
        }
      }
    }
  }
}

}  // namespace dynroute

#ifndef DYNROUTE_DETECTION_HEAD_HPP_
#define DYNROUTE_DETECTION_HEAD_HPP_

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "dynroute/scale_budget.hpp"
#include "dynroute/supernet.hpp"

namespace dynroute {

struct HeadConfig {
  int num_classes = 2;
  int tower_depth = 2;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;

  void validate() const;
};

// Per pyramid level: where locations sit and which object sizes they own.
struct PyramidGeometry {
  struct Level {
    int stride = 8;
    int height = 0;
    int width = 0;
    // Objects with max(h, w) in (min_size, max_size] are assigned here.
    double min_size = 0;
    double max_size = 0;
  };
  std::vector<Level> levels;
};

// Levels follow the supernet pyramid (strides 8, 16, ...). Level k owns scale
// interval k; the last interval is owned by the last level when there are
// fewer levels than intervals. Extra levels own nothing.
PyramidGeometry make_pyramid_geometry(const SupernetSpec& spec, int image_height,
                                      int image_width, const ScaleIntervals& intervals);

struct LevelPrediction {
  Var cls_logits;  // B x K x H x W
  Var box;         // B x 4 x H x W distances (l, t, r, b) in stride units, > 0
};

struct DensePrediction {
  std::vector<LevelPrediction> levels;
};

// FCOS-style head without centerness: one tower of depth `tower_depth`
// (SepConv3x3 + GroupNorm + relu) shared by all levels, then 1x1 classification
// and box outputs. Box outputs go through exp so distances stay positive.
class DetectionHead {
 public:
  DetectionHead(int in_channels, HeadConfig config, ParameterSet& params, std::uint64_t seed);

  const HeadConfig& config() const { return config_; }
  DensePrediction forward(Tape& tape, std::span<const Var> pyramid) const;

  // Zeroes the classification and box output layers (weights and bias).
  void zero_output_layers();

 private:
  struct TowerLayer {
    Parameter* dw;
    Parameter* pw;
    Parameter* norm_gamma;
    Parameter* norm_beta;
  };
  HeadConfig config_;
  std::vector<TowerLayer> tower_;
  Parameter* cls_w_ = nullptr;
  Parameter* cls_b_ = nullptr;
  Parameter* box_w_ = nullptr;
  Parameter* box_b_ = nullptr;
};

struct LevelTargets {
  Tensor cls;   // B x K x H x W one-hot for positives, zeros elsewhere
  Tensor box;   // B x 4 x H x W (l, t, r, b) in stride units
  Tensor mask;  // B x H x W, 1 at positive locations
  int positives = 0;
};

struct DetectionTargets {
  std::vector<LevelTargets> levels;
  std::vector<int> positives_per_sample;
  int total_positives = 0;
};

// A location (center at (j + 0.5) * stride, (i + 0.5) * stride) of the box's
// level is positive when its center lies strictly inside the box, or when it
// is the cell containing the box center. Overlaps go to the smallest box.
DetectionTargets assign_targets(std::span<const std::vector<Box>> boxes_per_image,
                                const PyramidGeometry& geometry, int num_classes);

struct DetectionLoss {
  Var total;
  Var classification;
  Var localization;
  // Untracked per-image losses, each normalized by its own positive count.
  std::vector<double> per_sample;
};

// Focal loss summed over all locations plus -log(IoU) over positives, both
// divided by the number of positives in the batch (at least 1). With no
// positives only the classification term remains.
DetectionLoss detection_loss(const DensePrediction& pred, const DetectionTargets& targets,
                             const HeadConfig& config);

struct LossWeights {
  double lambda_global = 1.0;
  double lambda_local = 1.0;
};

// L_det + lambda1 * L_global + lambda2 * L_local. Regularizers contribute
// nothing while `regularizers_active` is false. NumericError on a non-finite
// term.
Var total_loss(Var det, Var global, Var local, const LossWeights& weights,
               bool regularizers_active);

// Debug dump: image_id,level,x,y,class,score,l,t,r,b for every location whose
// best class score reaches `min_score`. Distances are in pixels.
void write_prediction_csv(std::ostream& os, std::span<const std::int64_t> image_ids,
                          const DensePrediction& pred, const PyramidGeometry& geometry,
                          double min_score);

}  // namespace dynroute

#endif  // DYNROUTE_DETECTION_HEAD_HPP_

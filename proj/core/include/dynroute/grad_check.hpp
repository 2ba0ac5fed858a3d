#ifndef DYNROUTE_GRAD_CHECK_HPP_
#define DYNROUTE_GRAD_CHECK_HPP_

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dynroute/tape.hpp"

namespace dynroute {

// Builds the op under test from tracked inputs on the given tape. The output
// may have any shape; it is reduced with a fixed random projection.
using GradCheckFn = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckReport {
  bool passed = false;
  // max |analytic - numeric| / max(|analytic|, |numeric|, 1e-3)
  double max_rel_error = 0.0;
  // Points rejected because a kink (max/clamp/relu tie) was within epsilon.
  int resamples = 0;
  std::string detail;
};

// Central-difference check at a fixed point.
GradCheckReport grad_check_at(const GradCheckFn& fn, std::vector<Tensor> point,
                              double epsilon, double tolerance,
                              std::uint64_t projection_seed = 7);

// Samples inputs uniformly from [-1, 1] and checks them, resampling when the
// point sits on a non-differentiable kink.
GradCheckReport grad_check(const GradCheckFn& fn, std::span<const Shape> input_shapes,
                           double epsilon, double tolerance, std::uint64_t seed);

}  // namespace dynroute

#endif  // DYNROUTE_GRAD_CHECK_HPP_

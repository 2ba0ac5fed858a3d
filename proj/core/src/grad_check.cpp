#include "dynroute/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "dynroute/ops.hpp"

namespace dynroute {
namespace {

constexpr int kMaxResamples = 50;

struct Evaluator {
  const GradCheckFn& fn;
  Tensor projection;
  bool has_projection = false;

  double operator()(const std::vector<Tensor>& point) {
    Tape tape(false);
    std::vector<Var> vars;
    vars.reserve(point.size());
    for (const Tensor& t : point) vars.push_back(tape.constant(t));
    return project(fn(tape, vars));
  }

  double project(Var out) {
    const Tensor& v = out.value();
    double acc = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) acc += v[i] * projection[i];
    return acc;
  }
};

Tensor random_projection(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  Tensor t(shape);
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Returns false if a kink was detected within epsilon of the point.
bool check_point(const GradCheckFn& fn, std::vector<Tensor> point, double eps,
                 double tol, std::uint64_t projection_seed, GradCheckReport& report) {
  Tape tape(true);
  std::vector<Var> vars;
  for (const Tensor& t : point) vars.push_back(tape.leaf(t));
  Var out = fn(tape, vars);
  Evaluator eval{fn, random_projection(out.shape(), projection_seed)};
  Var loss = ops::sum(ops::mul_const(out, eval.projection));
  const double f0 = loss.item();
  tape.backward(loss);

  double worst = 0.0;
  std::string where;
  for (std::size_t k = 0; k < point.size(); ++k) {
    const bool tracked = tape.has_grad(vars[k].id);
    for (std::size_t i = 0; i < point[k].size(); ++i) {
      const double analytic = tracked ? tape.grad(vars[k].id)[i] : 0.0;
      const double saved = point[k][i];
      point[k][i] = saved + eps;
      const double fp = eval(point);
      point[k][i] = saved - eps;
      const double fm = eval(point);
      point[k][i] = saved;
      const double forward = (fp - f0) / eps;
      const double backward = (f0 - fm) / eps;
      if (std::abs(forward - backward) >
          1e-2 * std::max(std::abs(forward), std::abs(backward)) + 1e-6) {
        return false;
      }
      const double numeric = (fp - fm) / (2 * eps);
      const double rel = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), 1e-3});
      if (rel > worst) {
        worst = rel;
        std::ostringstream os;
        os << "input " << k << " element " << i << ": analytic " << analytic
           << " numeric " << numeric;
        where = os.str();
      }
    }
  }
  report.max_rel_error = worst;
  report.passed = worst < tol;
  report.detail = where;
  return true;
}

}  // namespace

GradCheckReport grad_check_at(const GradCheckFn& fn, std::vector<Tensor> point,
                              double epsilon, double tolerance,
                              std::uint64_t projection_seed) {
  GradCheckReport report;
  if (!check_point(fn, std::move(point), epsilon, tolerance, projection_seed, report)) {
    report.passed = false;
    report.detail = "kink within epsilon of the requested point";
  }
  return report;
}

GradCheckReport grad_check(const GradCheckFn& fn, std::span<const Shape> input_shapes,
                           double epsilon, double tolerance, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  GradCheckReport report;
  for (int attempt = 0; attempt <= kMaxResamples; ++attempt) {
    std::vector<Tensor> point;
    for (const Shape& s : input_shapes) {
      Tensor t(s);
      for (double& v : t.data()) v = u(rng);
      point.push_back(std::move(t));
    }
    if (check_point(fn, std::move(point), epsilon, tolerance, seed + 1, report)) {
      return report;
    }
    ++report.resamples;
  }
  report.passed = false;
  report.detail = "could not find a kink-free sample point";
  return report;
}

}  // namespace dynroute

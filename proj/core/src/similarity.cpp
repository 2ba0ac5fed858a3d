#include "dynroute/similarity.hpp"

#include <cmath>
#include <cstdio>
#include <iostream>
#include <optional>

#include "dynroute/errors.hpp"
#include "dynroute/ops.hpp"

namespace dynroute {

void SimilarityConfig::validate() const {
  if (!(min > 0) || !(min <= max) || !(max <= 1)) {
    throw ConfigError("similarity: require 0 < min <= max <= 1");
  }
}

double scale_similarity(const ScaleEncoding& a, const ScaleEncoding& b) {
  if (a.size() != b.size() || a.empty()) {
    throw UsageError("scale_similarity: encodings of length " + std::to_string(a.size()) +
                     " and " + std::to_string(b.size()));
  }
  int agree = 0;
  for (std::size_t i = 0; i < a.size(); ++i) agree += (a[i] == b[i]) ? 1 : 0;
  return static_cast<double>(agree) / static_cast<double>(a.size());
}

double path_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw UsageError("path_similarity: length mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

Var path_similarity(Var a, Var b) { return ops::cosine_similarity(a, b); }

double gt_similarity(double sim_scale, const SimilarityConfig& config) {
  return sim_scale * (config.max - config.min) + config.min;
}

Var flatten_routes(std::span<const Var> node_gates) { return ops::concat_columns(node_gates); }

std::vector<double> route_vector(const RouteRecord& route, bool mask_closed) {
  std::vector<double> r;
  r.reserve(route.nodes.size() * kNumDirections);
  for (const NodeRoute& nr : route.nodes) {
    for (int d = 0; d < kNumDirections; ++d) {
      const auto k = static_cast<std::size_t>(d);
      r.push_back(mask_closed && !nr.open[k] ? 0.0 : nr.gates[k]);
    }
  }
  return r;
}

Var local_similarity_loss(Var routes, std::span<const ScaleEncoding> encodings,
                          const SimilarityConfig& config) {
  const Tensor& rv = routes.value();
  if (rv.rank() != 2 || static_cast<std::size_t>(rv.dim(0)) != encodings.size()) {
    throw ConfigError("local_similarity_loss: routes " + shape_to_string(rv.shape()) + " for " +
                      std::to_string(encodings.size()) + " encodings");
  }
  const int batch = rv.dim(0);
  if (batch < 2) {
    std::clog << "local_similarity_loss: batch of " << batch << " has no pairs; loss is 0\n";
    return routes.tape->constant(Tensor::scalar(0.0));
  }
  std::vector<Var> rows;
  for (int i = 0; i < batch; ++i) rows.push_back(ops::row(routes, i));
  std::optional<Var> total;
  for (int i = 0; i < batch; ++i) {
    for (int j = i + 1; j < batch; ++j) {
      const double gt = gt_similarity(
          scale_similarity(encodings[static_cast<std::size_t>(i)], encodings[static_cast<std::size_t>(j)]),
          config);
      Var gap = ops::add_scalar(path_similarity(rows[static_cast<std::size_t>(i)],
                                                rows[static_cast<std::size_t>(j)]),
                                -gt);
      Var term = ops::square(gap);
      total = total ? ops::add(*total, term) : term;
    }
  }
  return ops::scale(*total, 1.0 / batch);
}

void write_similarity_matrix_csv(std::ostream& os,
                                 const std::vector<std::vector<double>>& matrix) {
  os << "i";
  for (std::size_t j = 0; j < matrix.size(); ++j) os << "," << j;
  os << "\n";
  char buf[64];
  for (std::size_t i = 0; i < matrix.size(); ++i) {
    os << i;
    for (double v : matrix[i]) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      os << buf;
    }
    os << "\n";
  }
}

}  // namespace dynroute

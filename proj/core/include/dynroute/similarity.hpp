#ifndef DYNROUTE_SIMILARITY_HPP_
#define DYNROUTE_SIMILARITY_HPP_

#include <iosfwd>
#include <span>
#include <vector>

#include "dynroute/scale_budget.hpp"
#include "dynroute/supernet.hpp"

namespace dynroute {

struct SimilarityConfig {
  double min = 0.6;
  double max = 0.95;

  void validate() const;
};

// Fraction of positions where the two encodings agree (XNOR count / m).
double scale_similarity(const ScaleEncoding& a, const ScaleEncoding& b);

// Cosine of two route vectors; 0 if either is all zeros.
double path_similarity(std::span<const double> a, std::span<const double> b);
Var path_similarity(Var a, Var b);

// Maps a scale similarity in [0, 1] onto [min, max].
double gt_similarity(double sim_scale, const SimilarityConfig& config);

// Flattens per-node B x 3 gates into B x 3n route vectors, node-major then
// (up, keep, down).
Var flatten_routes(std::span<const Var> node_gates);

// Route vector of one recorded sample. With `mask_closed`, gates of closed
// paths are zeroed (the route actually executed at inference).
std::vector<double> route_vector(const RouteRecord& route, bool mask_closed);

// (1/B) * sum over pairs i < j of (cos(R_i, R_j) - gt(i, j))^2.
// routes: B x 3n. Returns 0 (and logs a notice) when B < 2.
Var local_similarity_loss(Var routes, std::span<const ScaleEncoding> encodings,
                          const SimilarityConfig& config);

// Writes a square matrix as CSV with row/column indices.
void write_similarity_matrix_csv(std::ostream& os,
                                 const std::vector<std::vector<double>>& matrix);

}  // namespace dynroute

#endif  // DYNROUTE_SIMILARITY_HPP_

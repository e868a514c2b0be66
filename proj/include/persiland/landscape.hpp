#pragma once

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "persiland/topology.hpp"

namespace persiland {

/// Sampling window for a landscape: the value range [c0, c1], the number of
/// pieces P (how many lambda_k rows to keep) and the number of uniformly
/// spaced sample points Q.
struct LandscapeSpec {
  double c0 = 0.0;
  double c1 = 5.0;
  int num_pieces = 5;
  int num_samples = 10;
};

inline void validate(const LandscapeSpec& spec) {
  if (!(spec.c1 > spec.c0)) {
    throw std::invalid_argument("landscape range requires c1 > c0");
  }
  if (spec.num_pieces < 1) {
    throw std::invalid_argument("landscape needs at least one piece");
  }
  if (spec.num_samples < 1) {
    throw std::invalid_argument("landscape needs at least one sample point");
  }
}

enum class RouteSide : unsigned char { none, birth, death };

/// Where a sampled landscape entry sends its gradient: the triangle that won
/// the k-th-largest selection, the endpoint (birth or death) the active
/// linear piece depends on, and the derivative sign of that piece.
struct GradientRoute {
  RouteSide side = RouteSide::none;
  int pair_id = -1;   ///< index into the originating diagram's pairs
  int vertex = -1;    ///< signal index owning the routed extremum value
  double sign = 0.0;  ///< +1 on the falling piece (birth), -1 on the rising piece (death)
};

/// P x Q grid sample of a persistence landscape together with one gradient
/// route per entry. Row k holds lambda_{k+1} at the grid points.
struct LandscapeMatrix {
  int num_pieces = 0;
  int num_samples = 0;
  std::vector<double> values;          // row-major [k][q]
  std::vector<GradientRoute> ownership;

  double value(int k, int q) const {
    return values[static_cast<std::size_t>(k * num_samples + q)];
  }
  const GradientRoute& route(int k, int q) const {
    return ownership[static_cast<std::size_t>(k * num_samples + q)];
  }
};

/// Evaluates the triangle function of one birth-death pair at x.
///
/// The function is 0 outside (death, birth), rises as x - death up to and
/// including the apex (death+birth)/2, and falls as birth - x after it. The
/// returned route records which endpoint the value currently depends on;
/// the apex itself sits on the rising piece, so its gradient flows to the
/// death value.
inline std::pair<double, GradientRoute> triangle_eval(const BirthDeathPair& pair,
                                                      double x) {
  const double b = pair.birth;
  const double d = pair.death;
  const double mid = 0.5 * (d + b);
  if (x > d && x <= mid) {
    return {x - d, GradientRoute{RouteSide::death, -1, pair.death_index, -1.0}};
  }
  if (x > mid && x < b) {
    return {b - x, GradientRoute{RouteSide::birth, -1, pair.birth_index, +1.0}};
  }
  return {0.0, GradientRoute{}};
}

namespace detail {

struct RankedValue {
  double value;
  int pair_id;
  GradientRoute route;
};

/// All triangle values at x, sorted by (value desc, pair_id asc). Ties in
/// value therefore hand the earlier rank to the smaller pair id.
inline std::vector<RankedValue> ranked_triangle_values(
    const PersistenceDiagramD0& diagram, double x) {
  std::vector<RankedValue> ranked;
  ranked.reserve(diagram.pairs.size());
  for (int id = 0; id < static_cast<int>(diagram.pairs.size()); ++id) {
    auto [value, route] =
        triangle_eval(diagram.pairs[static_cast<std::size_t>(id)], x);
    route.pair_id = route.side == RouteSide::none ? -1 : id;
    ranked.push_back(RankedValue{value, id, route});
  }
  std::sort(ranked.begin(), ranked.end(),
            [](const RankedValue& a, const RankedValue& b) {
              if (a.value != b.value) return a.value > b.value;
              return a.pair_id < b.pair_id;
            });
  return ranked;
}

}  // namespace detail

/// lambda_k(x): the k-th largest triangle value at x (k is 1-based), or 0
/// with an empty route when fewer than k triangles are positive there.
inline std::pair<double, GradientRoute> landscape_value(
    const PersistenceDiagramD0& diagram, int k, double x) {
  if (k < 1) {
    throw std::invalid_argument("landscape piece index k must be >= 1");
  }
  if (k > static_cast<int>(diagram.pairs.size())) {
    return {0.0, GradientRoute{}};
  }
  const auto ranked = detail::ranked_triangle_values(diagram, x);
  const auto& hit = ranked[static_cast<std::size_t>(k - 1)];
  if (hit.value <= 0.0) {
    return {0.0, GradientRoute{}};
  }
  return {hit.value, hit.route};
}

/// The q-th grid point of the sampling window (endpoint-inclusive uniform
/// grid; a single sample collapses to the midpoint).
inline double grid_point(const LandscapeSpec& spec, int q) {
  if (spec.num_samples == 1) return 0.5 * (spec.c0 + spec.c1);
  return spec.c0 + static_cast<double>(q) * (spec.c1 - spec.c0) /
                       static_cast<double>(spec.num_samples - 1);
}

/// Samples lambda_1..lambda_P on the spec's grid and records one gradient
/// route per entry.
inline LandscapeMatrix sample_landscape(const PersistenceDiagramD0& diagram,
                                        const LandscapeSpec& spec) {
  validate(spec);
  LandscapeMatrix matrix;
  matrix.num_pieces = spec.num_pieces;
  matrix.num_samples = spec.num_samples;
  matrix.values.assign(
      static_cast<std::size_t>(spec.num_pieces * spec.num_samples), 0.0);
  matrix.ownership.assign(
      static_cast<std::size_t>(spec.num_pieces * spec.num_samples),
      GradientRoute{});

  for (int q = 0; q < spec.num_samples; ++q) {
    const double x = grid_point(spec, q);
    const auto ranked = detail::ranked_triangle_values(diagram, x);
    const int rows = std::min(spec.num_pieces, static_cast<int>(ranked.size()));
    for (int k = 0; k < rows; ++k) {
      const auto& hit = ranked[static_cast<std::size_t>(k)];
      if (hit.value <= 0.0) break;  // ranked descending; the rest are zero
      const std::size_t at = static_cast<std::size_t>(k * spec.num_samples + q);
      matrix.values[at] = hit.value;
      matrix.ownership[at] = hit.route;
    }
  }
  return matrix;
}

/// Scatters upstream gradients back onto the signal: each routed entry adds
/// sign * upstream to the extremum vertex it depends on. Entries without a
/// route contribute nothing.
inline std::vector<double> landscape_backward(const LandscapeMatrix& matrix,
                                              std::span<const double> upstream,
                                              int signal_length) {
  const std::size_t expected =
      static_cast<std::size_t>(matrix.num_pieces * matrix.num_samples);
  if (upstream.size() != expected) {
    throw std::invalid_argument(
        "upstream gradient size does not match landscape matrix");
  }
  if (signal_length < 1) {
    throw std::invalid_argument("signal_length must be positive");
  }
  std::vector<double> gradient(static_cast<std::size_t>(signal_length), 0.0);
  for (std::size_t i = 0; i < expected; ++i) {
    const GradientRoute& route = matrix.ownership[i];
    if (route.side == RouteSide::none) continue;
    if (route.vertex < 0 || route.vertex >= signal_length) {
      throw std::invalid_argument("gradient route points outside the signal");
    }
    gradient[static_cast<std::size_t>(route.vertex)] += route.sign * upstream[i];
  }
  return gradient;
}

/// Writes the matrix as CSV, one row per landscape piece, Q columns.
inline void write_matrix_csv(std::ostream& out, const LandscapeMatrix& matrix) {
  char buffer[64];
  for (int k = 0; k < matrix.num_pieces; ++k) {
    for (int q = 0; q < matrix.num_samples; ++q) {
      std::snprintf(buffer, sizeof(buffer), "%.17g", matrix.value(k, q));
      out << (q ? "," : "") << buffer;
    }
    out << '\n';
  }
}

/// Writes a sequence of matrices as CSV with one row per segment and
/// P*Q row-major columns.
inline void write_segments_csv(std::ostream& out,
                               std::span<const LandscapeMatrix> segments) {
  char buffer[64];
  for (const LandscapeMatrix& matrix : segments) {
    const std::size_t count = matrix.values.size();
    for (std::size_t i = 0; i < count; ++i) {
      std::snprintf(buffer, sizeof(buffer), "%.17g", matrix.values[i]);
      out << (i ? "," : "") << buffer;
    }
    out << '\n';
  }
}

}  // namespace persiland

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "colorflow/image.hpp"

namespace colorflow {

enum class CostKind { SquaredEuclidean, Euclidean };

// Dense transport plan between two uniform empirical clouds.
struct Coupling {
  std::size_t rows = 0, cols = 0;
  std::vector<double> w;  // row-major, rows*cols
  double at(std::size_t i, std::size_t j) const { return w[i * cols + j]; }
};

struct OtResult {
  double cost = 0.0;
  Coupling plan;
};

// Exact discrete OT between equal-size uniform clouds (assignment problem,
// shortest augmenting path, O(n^3)). Refuses n > 2048; use the sliced
// estimator above that.
OtResult ot_exact(const PixelCloud& p, const PixelCloud& q, CostKind cost);

inline constexpr std::size_t kExactOtBound = 2048;

enum class WassersteinMode { Exact, Sliced };

// Empirical Wasserstein distance on n-point subsamples. Exact mode solves the
// assignment; sliced mode averages 1-D transport over `projections` random
// directions, scaled by the 3-D correction (2 for W1, 3 for squared cost) so
// the two modes are comparable.
double wasserstein(const PixelCloud& p, const PixelCloud& q, std::size_t n,
                   WassersteinMode mode, std::uint64_t seed,
                   CostKind cost = CostKind::Euclidean, int projections = 128,
                   int threads = 1);

// Monotone 1-D rearrangement: source rank i at midpoint quantile (i+0.5)/N
// maps to the target quantile at the same level (linear interpolation between
// order statistics).
struct Rearrangement1d {
  std::vector<double> source;  // sorted
  std::vector<double> mapped;  // same length, monotone non-decreasing
  // piecewise-linear evaluation, clamped at the ends
  double apply(double x) const;
};

Rearrangement1d rearrange_1d(const std::vector<double>& sorted_source,
                             const std::vector<double>& sorted_target);

// Affine color map T(x) = A x + b.
struct AffineColorMap {
  std::array<double, 9> A{};  // row-major 3x3
  std::array<double, 3> b{};
  std::array<double, 3> apply(std::array<double, 3> x) const;
};

// Closed-form optimal map between Gaussian approximations of two clouds:
// A = S0^-1/2 (S0^1/2 S1 S0^1/2)^1/2 S0^-1/2, b = mu1 - A mu0.
// Near-singular source covariance is regularized by +1e-6 I; *regularized is
// set when that happened.
AffineColorMap mkl_map(const PixelCloud& p, const PixelCloud& q,
                       bool* regularized = nullptr);

// Batch color map: the transfer composition, an affine map, anything.
using CloudMap = std::function<PixelCloud(const PixelCloud&)>;

// Mean local expansion ratio ||map(x+d)-map(x)|| / ||x+d-x|| over random
// sphere perturbations of the given radius, clamped into the cube (degenerate
// pairs are resampled).
double lipschitz_estimate(const CloudMap& map, const PixelCloud& domain,
                          int pairs, double radius, std::uint64_t seed);

// Same quantity estimated from a pixel correspondence (content pixel i ->
// output pixel i) when the map itself is not available: nearest-neighbour
// difference quotients over a subsample.
double lipschitz_from_pairs(const PixelCloud& domain, const PixelCloud& image,
                            int pairs, std::uint64_t seed);

// Mean absolute difference of CDF-normalized grayscales, in [0,1].
double content_distance(const RgbImage& a, const RgbImage& b);

// Distance to the ideal point: sqrt((p-style)^2 + (p-content)^2).
double aggregated_score(double style, double content, double ideal_point = 0.0);

struct TransportReport {
  double style_distance = 0.0;
  double content_distance = 0.0;
  double aggregated = 0.0;
  double lipschitz = 0.0;
};

struct EvalConfig {
  std::size_t style_samples = 6000;
  int projections = 128;
  CostKind cost = CostKind::Euclidean;
  int lipschitz_pairs = 10000;
  double lipschitz_radius = 1.0 / 255.0;
  double ideal_point = 0.0;
  std::uint64_t seed = 0;
  int threads = 1;
};

// Full metrics for one transfer. If `map` is null the Lipschitz estimate
// falls back to the pixel-correspondence variant.
TransportReport evaluate_transfer(const RgbImage& content, const RgbImage& style,
                                  const RgbImage& output, const CloudMap* map,
                                  const EvalConfig& cfg);

}  // namespace colorflow

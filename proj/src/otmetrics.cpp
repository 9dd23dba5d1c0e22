#include "colorflow/otmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "colorflow/errors.hpp"
#include "colorflow/parallel.hpp"
#include "colorflow/rng.hpp"

namespace colorflow {
namespace {

inline double ground_cost(CostKind kind, double dx, double dy, double dz) {
  const double sq = dx * dx + dy * dy + dz * dz;
  return kind == CostKind::SquaredEuclidean ? sq : std::sqrt(sq);
}

// Shortest-augmenting-path assignment with potentials (Jonker-Volgenant
// flavor). cost is n x n row-major. Returns the column assigned to each row.
std::vector<int> solve_assignment(const std::vector<double>& cost, std::size_t n,
                                  double* total) {
  const double INF = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = int(i);
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, INF);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = std::size_t(p[j0]);
      double delta = INF;
      std::size_t j1 = 0;
      const double* row = cost.data() + (i0 - 1) * n;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = row[j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = int(j0);
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[std::size_t(p[j])] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = std::size_t(way[j0]);
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  double sum = 0.0;
  for (std::size_t j = 1; j <= n; ++j) {
    if (p[j] == 0) continue;
    row_to_col[std::size_t(p[j] - 1)] = int(j - 1);
    sum += cost[std::size_t(p[j] - 1) * n + (j - 1)];
  }
  if (total) *total = sum;
  return row_to_col;
}

PixelCloud subsample(const PixelCloud& cloud, std::size_t n, std::uint64_t seed) {
  if (cloud.size() == n) return cloud;
  Rng rng(seed);
  PixelCloud out;
  out.resize(n);
  const std::size_t total = cloud.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = rng.below(total);
    out.r[i] = cloud.r[k];
    out.g[i] = cloud.g[k];
    out.b[i] = cloud.b[k];
  }
  return out;
}

}  // namespace

OtResult ot_exact(const PixelCloud& p, const PixelCloud& q, CostKind kind) {
  const std::size_t n = p.size();
  if (n == 0 || q.size() == 0) throw ValidationError("ot_exact: empty cloud");
  if (n != q.size())
    throw ValidationError("ot_exact: clouds must have equal size (uniform masses)");
  if (n > kExactOtBound)
    throw ValidationError("ot_exact: size " + std::to_string(n) + " exceeds bound " +
                          std::to_string(kExactOtBound) +
                          "; use the sliced estimator");

  std::vector<double> cost(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      cost[i * n + j] = ground_cost(kind, double(p.r[i]) - q.r[j],
                                    double(p.g[i]) - q.g[j], double(p.b[i]) - q.b[j]);

  double total = 0.0;
  std::vector<int> match = solve_assignment(cost, n, &total);

  OtResult res;
  res.cost = total / double(n);
  res.plan.rows = n;
  res.plan.cols = n;
  res.plan.w.assign(n * n, 0.0);
  const double mass = 1.0 / double(n);
  for (std::size_t i = 0; i < n; ++i) res.plan.w[i * n + std::size_t(match[i])] = mass;
  return res;
}

double wasserstein(const PixelCloud& p, const PixelCloud& q, std::size_t n,
                   WassersteinMode mode, std::uint64_t seed, CostKind cost,
                   int projections, int threads) {
  if (p.empty() || q.empty()) throw ValidationError("wasserstein: empty cloud");
  if (n == 0) throw ValidationError("wasserstein: n must be >= 1");

  const PixelCloud ps = subsample(p, n, seed_mix(seed, 0x70));
  const PixelCloud qs = subsample(q, n, seed_mix(seed, 0x71));

  if (mode == WassersteinMode::Exact) {
    return ot_exact(ps, qs, cost).cost;
  }

  if (projections < 1) throw ValidationError("wasserstein: projections must be >= 1");
  std::vector<double> per_proj(std::size_t(projections), 0.0);
  parallel_chunks(std::size_t(projections), threads, [&](std::size_t b, std::size_t e) {
    std::vector<double> a(n), bb(n);
    for (std::size_t k = b; k < e; ++k) {
      Rng rng(seed_mix(seed, 0x536c9ced + k));
      double ux, uy, uz, norm;
      do {
        ux = rng.normal();
        uy = rng.normal();
        uz = rng.normal();
        norm = std::sqrt(ux * ux + uy * uy + uz * uz);
      } while (norm < 1e-12);
      ux /= norm;
      uy /= norm;
      uz /= norm;
      for (std::size_t i = 0; i < n; ++i) {
        a[i] = ux * ps.r[i] + uy * ps.g[i] + uz * ps.b[i];
        bb[i] = ux * qs.r[i] + uy * qs.g[i] + uz * qs.b[i];
      }
      std::sort(a.begin(), a.end());
      std::sort(bb.begin(), bb.end());
      double acc = 0.0;
      if (cost == CostKind::Euclidean) {
        for (std::size_t i = 0; i < n; ++i) acc += std::abs(a[i] - bb[i]);
      } else {
        for (std::size_t i = 0; i < n; ++i) acc += (a[i] - bb[i]) * (a[i] - bb[i]);
      }
      per_proj[k] = acc / double(n);
    }
  });
  double mean = 0.0;
  for (double v : per_proj) mean += v;
  mean /= double(projections);
  // E[|<u,d>|] = |d|/2 and E[<u,d>^2] = |d|^2/3 for uniform directions in 3-D
  return cost == CostKind::Euclidean ? 2.0 * mean : 3.0 * mean;
}

double Rearrangement1d::apply(double x) const {
  if (source.empty()) throw ValidationError("rearrange: empty table");
  if (x <= source.front()) return mapped.front();
  if (x >= source.back()) return mapped.back();
  const auto it = std::upper_bound(source.begin(), source.end(), x);
  const std::size_t hi = std::size_t(it - source.begin());
  const std::size_t lo = hi - 1;
  const double span = source[hi] - source[lo];
  if (span <= 0.0) return mapped[lo];
  const double f = (x - source[lo]) / span;
  return mapped[lo] * (1.0 - f) + mapped[hi] * f;
}

Rearrangement1d rearrange_1d(const std::vector<double>& sorted_source,
                             const std::vector<double>& sorted_target) {
  if (sorted_source.empty() || sorted_target.empty())
    throw ValidationError("rearrange_1d: empty input");
  if (!std::is_sorted(sorted_source.begin(), sorted_source.end()) ||
      !std::is_sorted(sorted_target.begin(), sorted_target.end()))
    throw ValidationError("rearrange_1d: inputs must be sorted");

  const std::size_t n = sorted_source.size();
  const std::size_t m = sorted_target.size();
  Rearrangement1d out;
  out.source = sorted_source;
  out.mapped.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    // midpoint rank of source i, read off the target quantile function
    double pos = (double(i) + 0.5) * double(m) / double(n) - 0.5;
    pos = std::clamp(pos, 0.0, double(m - 1));
    const std::size_t lo = std::size_t(pos);
    const std::size_t hi = std::min(lo + 1, m - 1);
    const double f = pos - double(lo);
    out.mapped[i] = sorted_target[lo] * (1.0 - f) + sorted_target[hi] * f;
  }
  return out;
}

// ---------------------------------------------------------------------------
// MKL closed form

namespace {

using Mat3 = std::array<double, 9>;
using Vec3 = std::array<double, 3>;

Mat3 mat_mul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += a[3 * i + k] * b[3 * k + j];
      c[3 * i + j] = s;
    }
  return c;
}

// Jacobi eigendecomposition of a symmetric 3x3: A = Q diag(d) Q^T.
void sym_eig3(const Mat3& a, Mat3& q, Vec3& d) {
  Mat3 m = a;
  q = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = std::abs(m[1]) + std::abs(m[2]) + std::abs(m[5]);
    if (off < 1e-15) break;
    for (int p = 0; p < 2; ++p) {
      for (int r = p + 1; r < 3; ++r) {
        const double apq = m[3 * p + r];
        if (std::abs(apq) < 1e-300) continue;
        const double app = m[3 * p + p];
        const double aqq = m[3 * r + r];
        const double phi = 0.5 * std::atan2(2.0 * apq, aqq - app);
        const double c = std::cos(phi), s = std::sin(phi);
        for (int k = 0; k < 3; ++k) {
          const double mkp = m[3 * k + p], mkq = m[3 * k + r];
          m[3 * k + p] = c * mkp - s * mkq;
          m[3 * k + r] = s * mkp + c * mkq;
        }
        for (int k = 0; k < 3; ++k) {
          const double mpk = m[3 * p + k], mqk = m[3 * r + k];
          m[3 * p + k] = c * mpk - s * mqk;
          m[3 * r + k] = s * mpk + c * mqk;
        }
        for (int k = 0; k < 3; ++k) {
          const double qkp = q[3 * k + p], qkq = q[3 * k + r];
          q[3 * k + p] = c * qkp - s * qkq;
          q[3 * k + r] = s * qkp + c * qkq;
        }
      }
    }
  }
  d = {m[0], m[4], m[8]};
}

// f applied to eigenvalues: Q f(d) Q^T
Mat3 sym_func(const Mat3& a, double (*f)(double)) {
  Mat3 q;
  Vec3 d;
  sym_eig3(a, q, d);
  Mat3 res{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += q[3 * i + k] * f(d[k]) * q[3 * j + k];
      res[3 * i + j] = s;
    }
  return res;
}

double sqrt_clamped(double x) { return std::sqrt(std::max(0.0, x)); }
double inv_sqrt_clamped(double x) { return 1.0 / std::sqrt(std::max(1e-300, x)); }

void cloud_moments(const PixelCloud& c, Vec3& mean, Mat3& cov) {
  const std::size_t n = c.size();
  double mr = 0, mg = 0, mb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mr += c.r[i];
    mg += c.g[i];
    mb += c.b[i];
  }
  mr /= double(n);
  mg /= double(n);
  mb /= double(n);
  mean = {mr, mg, mb};
  cov = {};
  for (std::size_t i = 0; i < n; ++i) {
    const double dr = c.r[i] - mr, dg = c.g[i] - mg, db = c.b[i] - mb;
    cov[0] += dr * dr;
    cov[1] += dr * dg;
    cov[2] += dr * db;
    cov[4] += dg * dg;
    cov[5] += dg * db;
    cov[8] += db * db;
  }
  for (double& v : cov) v /= double(n);
  cov[3] = cov[1];
  cov[6] = cov[2];
  cov[7] = cov[5];
}

}  // namespace

std::array<double, 3> AffineColorMap::apply(std::array<double, 3> x) const {
  return {A[0] * x[0] + A[1] * x[1] + A[2] * x[2] + b[0],
          A[3] * x[0] + A[4] * x[1] + A[5] * x[2] + b[1],
          A[6] * x[0] + A[7] * x[1] + A[8] * x[2] + b[2]};
}

AffineColorMap mkl_map(const PixelCloud& p, const PixelCloud& q, bool* regularized) {
  if (p.empty() || q.empty()) throw ValidationError("mkl_map: empty cloud");
  Vec3 mu0, mu1;
  Mat3 s0, s1;
  cloud_moments(p, mu0, s0);
  cloud_moments(q, mu1, s1);

  if (regularized) *regularized = false;
  {
    Mat3 qm;
    Vec3 d;
    sym_eig3(s0, qm, d);
    const double min_eig = std::min({d[0], d[1], d[2]});
    if (min_eig < 1e-9) {
      s0[0] += 1e-6;
      s0[4] += 1e-6;
      s0[8] += 1e-6;
      if (regularized) *regularized = true;
    }
  }

  const Mat3 s0_half = sym_func(s0, sqrt_clamped);
  const Mat3 s0_inv_half = sym_func(s0, inv_sqrt_clamped);
  const Mat3 middle = mat_mul(mat_mul(s0_half, s1), s0_half);
  const Mat3 middle_half = sym_func(middle, sqrt_clamped);
  const Mat3 a = mat_mul(mat_mul(s0_inv_half, middle_half), s0_inv_half);

  AffineColorMap map;
  map.A = a;
  for (int i = 0; i < 3; ++i)
    map.b[i] = mu1[i] - (a[3 * i] * mu0[0] + a[3 * i + 1] * mu0[1] + a[3 * i + 2] * mu0[2]);
  return map;
}

double lipschitz_estimate(const CloudMap& map, const PixelCloud& domain,
                          int pairs, double radius, std::uint64_t seed) {
  if (pairs < 1) throw ValidationError("lipschitz_estimate: pairs must be >= 1");
  if (radius <= 0.0) throw ValidationError("lipschitz_estimate: radius must be > 0");
  if (domain.empty()) throw ValidationError("lipschitz_estimate: empty domain");

  Rng rng(seed);
  PixelCloud probes;
  probes.resize(2 * std::size_t(pairs));
  for (int i = 0; i < pairs; ++i) {
    const std::size_t k = rng.below(domain.size());
    const float x0 = domain.r[k], y0 = domain.g[k], z0 = domain.b[k];
    float x1 = x0, y1 = y0, z1 = z0;
    for (int attempt = 0; attempt < 64; ++attempt) {
      double dx, dy, dz, norm;
      do {
        dx = rng.normal();
        dy = rng.normal();
        dz = rng.normal();
        norm = std::sqrt(dx * dx + dy * dy + dz * dz);
      } while (norm < 1e-12);
      x1 = std::clamp(float(x0 + radius * dx / norm), 0.0f, 1.0f);
      y1 = std::clamp(float(y0 + radius * dy / norm), 0.0f, 1.0f);
      z1 = std::clamp(float(z0 + radius * dz / norm), 0.0f, 1.0f);
      const double d2 = (double(x1) - x0) * (double(x1) - x0) +
                        (double(y1) - y0) * (double(y1) - y0) +
                        (double(z1) - z0) * (double(z1) - z0);
      if (d2 >= 1e-6 * radius * radius) break;  // clamp collapsed the pair
    }
    probes.r[2 * std::size_t(i)] = x0;
    probes.g[2 * std::size_t(i)] = y0;
    probes.b[2 * std::size_t(i)] = z0;
    probes.r[2 * std::size_t(i) + 1] = x1;
    probes.g[2 * std::size_t(i) + 1] = y1;
    probes.b[2 * std::size_t(i) + 1] = z1;
  }

  const PixelCloud mapped = map(probes);
  if (mapped.size() != probes.size())
    throw ValidationError("lipschitz_estimate: map changed the cloud size");

  double sum = 0.0;
  std::size_t counted = 0;
  for (int i = 0; i < pairs; ++i) {
    const std::size_t a = 2 * std::size_t(i), b = a + 1;
    const double din = std::sqrt(
        (double(probes.r[b]) - probes.r[a]) * (double(probes.r[b]) - probes.r[a]) +
        (double(probes.g[b]) - probes.g[a]) * (double(probes.g[b]) - probes.g[a]) +
        (double(probes.b[b]) - probes.b[a]) * (double(probes.b[b]) - probes.b[a]));
    if (din <= 0.0) continue;
    const double dout = std::sqrt(
        (double(mapped.r[b]) - mapped.r[a]) * (double(mapped.r[b]) - mapped.r[a]) +
        (double(mapped.g[b]) - mapped.g[a]) * (double(mapped.g[b]) - mapped.g[a]) +
        (double(mapped.b[b]) - mapped.b[a]) * (double(mapped.b[b]) - mapped.b[a]));
    sum += dout / din;
    ++counted;
  }
  if (counted == 0) throw NumericError("lipschitz_estimate: all pairs degenerate");
  return sum / double(counted);
}

double lipschitz_from_pairs(const PixelCloud& domain, const PixelCloud& image,
                            int pairs, std::uint64_t seed) {
  if (domain.size() != image.size() || domain.empty())
    throw ValidationError("lipschitz_from_pairs: clouds must align");
  Rng rng(seed);
  const std::size_t n = domain.size();
  // correspondence subsample to keep the NN scans bounded
  const std::size_t m = std::min<std::size_t>(n, 4096);
  std::vector<std::size_t> subset(m);
  for (std::size_t i = 0; i < m; ++i) subset[i] = n == m ? i : rng.below(n);

  double sum = 0.0;
  std::size_t counted = 0;
  for (int k = 0; k < pairs; ++k) {
    const std::size_t i = subset[rng.below(m)];
    double best = std::numeric_limits<double>::infinity();
    std::size_t bj = i;
    for (std::size_t s = 0; s < m; ++s) {
      const std::size_t j = subset[s];
      if (j == i) continue;
      const double dr = double(domain.r[i]) - domain.r[j];
      const double dg = double(domain.g[i]) - domain.g[j];
      const double db = double(domain.b[i]) - domain.b[j];
      const double d2 = dr * dr + dg * dg + db * db;
      if (d2 > 0.0 && d2 < best) {
        best = d2;
        bj = j;
      }
    }
    if (bj == i) continue;
    const double din = std::sqrt(best);
    const double dr = double(image.r[i]) - image.r[bj];
    const double dg = double(image.g[i]) - image.g[bj];
    const double db = double(image.b[i]) - image.b[bj];
    sum += std::sqrt(dr * dr + dg * dg + db * db) / din;
    ++counted;
  }
  return counted == 0 ? 0.0 : sum / double(counted);
}

double content_distance(const RgbImage& a, const RgbImage& b) {
  if (a.width != b.width || a.height != b.height)
    throw ValidationError("content_distance: dimension mismatch");
  const GrayImage ga = normalize_grayscale(a);
  const GrayImage gb = normalize_grayscale(b);
  double sum = 0.0;
  for (std::size_t i = 0; i < ga.intensity.size(); ++i)
    sum += std::abs(double(ga.intensity[i]) - gb.intensity[i]);
  return sum / double(ga.intensity.size());
}

double aggregated_score(double style, double content, double ideal_point) {
  if (style < 0.0 || content < 0.0)
    throw ValidationError("aggregated_score: inputs must be >= 0");
  return std::hypot(ideal_point - style, ideal_point - content);
}

TransportReport evaluate_transfer(const RgbImage& content, const RgbImage& style,
                                  const RgbImage& output, const CloudMap* map,
                                  const EvalConfig& cfg) {
  if (output.width != content.width || output.height != content.height)
    throw ValidationError("evaluate_transfer: output dims must match content");
  TransportReport rep;
  const PixelCloud out_cloud = image_cloud(output);
  const PixelCloud style_cloud = image_cloud(style);
  rep.style_distance =
      wasserstein(out_cloud, style_cloud, cfg.style_samples, WassersteinMode::Sliced,
                  seed_mix(cfg.seed, 0x57), cfg.cost, cfg.projections, cfg.threads);
  rep.content_distance = content_distance(content, output);
  rep.aggregated =
      aggregated_score(rep.style_distance, rep.content_distance, cfg.ideal_point);
  const PixelCloud content_cloud = image_cloud(content);
  if (map) {
    rep.lipschitz = lipschitz_estimate(*map, content_cloud, cfg.lipschitz_pairs,
                                       cfg.lipschitz_radius, seed_mix(cfg.seed, 0x4c));
  } else {
    rep.lipschitz = lipschitz_from_pairs(content_cloud, out_cloud,
                                         cfg.lipschitz_pairs, seed_mix(cfg.seed, 0x4c));
  }
  return rep;
}

}  // namespace colorflow

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "colorflow/errors.hpp"
#include "colorflow/otmetrics.hpp"
#include "testutil.hpp"

using namespace colorflow;

namespace {

// factorial brute force over all assignments
double brute_force_ot(const PixelCloud& p, const PixelCloud& q, CostKind kind) {
  const std::size_t n = p.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double cost = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dx = double(p.r[i]) - q.r[perm[i]];
      const double dy = double(p.g[i]) - q.g[perm[i]];
      const double dz = double(p.b[i]) - q.b[perm[i]];
      const double sq = dx * dx + dy * dy + dz * dz;
      cost += kind == CostKind::SquaredEuclidean ? sq : std::sqrt(sq);
    }
    best = std::min(best, cost / double(n));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace

TEST_CASE("ot_exact") {
  SUBCASE("identical clouds have zero cost") {
    const PixelCloud p = testutil::random_cloud(16, 1);
    const OtResult res = ot_exact(p, p, CostKind::Euclidean);
    CHECK(res.cost == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("two single-point clouds cost c(x,y)") {
    PixelCloud p, q;
    p.push_back(0.1f, 0.2f, 0.3f);
    q.push_back(0.4f, 0.6f, 0.8f);
    const double d = testutil::l2(0.3, 0.4, 0.5);
    CHECK(ot_exact(p, q, CostKind::Euclidean).cost == doctest::Approx(d).epsilon(1e-9));
    CHECK(ot_exact(p, q, CostKind::SquaredEuclidean).cost ==
          doctest::Approx(d * d).epsilon(1e-9));
  }
  SUBCASE("8x8 instances match the factorial oracle") {
    for (std::uint64_t inst = 0; inst < 10; ++inst) {
      const PixelCloud p = testutil::random_cloud(8, 100 + inst);
      const PixelCloud q = testutil::random_cloud(8, 200 + inst);
      for (CostKind kind : {CostKind::Euclidean, CostKind::SquaredEuclidean}) {
        const double expected = brute_force_ot(p, q, kind);
        CHECK(std::abs(ot_exact(p, q, kind).cost - expected) <= 1e-9);
      }
    }
  }
  SUBCASE("coupling satisfies the marginal constraints to 1e-9") {
    const PixelCloud p = testutil::random_cloud(24, 7);
    const PixelCloud q = testutil::random_cloud(24, 8);
    const OtResult res = ot_exact(p, q, CostKind::SquaredEuclidean);
    const double mass = 1.0 / 24.0;
    double total = 0.0;
    for (std::size_t i = 0; i < 24; ++i) {
      double row = 0.0, col = 0.0;
      for (std::size_t j = 0; j < 24; ++j) {
        row += res.plan.at(i, j);
        col += res.plan.at(j, i);
        CHECK(res.plan.at(i, j) >= 0.0);
      }
      CHECK(std::abs(row - mass) <= 1e-9);
      CHECK(std::abs(col - mass) <= 1e-9);
      total += row;
    }
    CHECK(std::abs(total - 1.0) <= 1e-9);
  }
  SUBCASE("cost is symmetric for Euclidean cost") {
    const PixelCloud p = testutil::random_cloud(32, 11);
    const PixelCloud q = testutil::random_cloud(32, 12);
    const double ab = ot_exact(p, q, CostKind::Euclidean).cost;
    const double ba = ot_exact(q, p, CostKind::Euclidean).cost;
    CHECK(std::abs(ab - ba) <= 1e-9);
  }
  SUBCASE("refuses oversized and mismatched inputs") {
    PixelCloud big;
    big.resize(kExactOtBound + 1);
    CHECK_THROWS_AS(ot_exact(big, big, CostKind::Euclidean), ValidationError);
    const PixelCloud p = testutil::random_cloud(4, 1);
    const PixelCloud q = testutil::random_cloud(5, 2);
    CHECK_THROWS_AS(ot_exact(p, q, CostKind::Euclidean), ValidationError);
  }
}

TEST_CASE("wasserstein") {
  SUBCASE("W(P,P) with identical subsamples is zero") {
    const PixelCloud p = testutil::random_cloud(128, 3);
    CHECK(wasserstein(p, p, 128, WassersteinMode::Exact, 1) ==
          doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("point masses at distance d") {
    PixelCloud p, q;
    for (int i = 0; i < 64; ++i) {
      p.push_back(0.2f, 0.2f, 0.2f);
      q.push_back(0.2f, 0.2f, 0.7f);
    }
    CHECK(wasserstein(p, q, 64, WassersteinMode::Exact, 1) ==
          doctest::Approx(0.5).epsilon(1e-9));
    // sliced: exact in expectation, Monte-Carlo noise over projections
    CHECK(wasserstein(p, q, 64, WassersteinMode::Sliced, 1) ==
          doctest::Approx(0.5).epsilon(0.08));
  }
  SUBCASE("sliced estimate tracks the exact solver on separated clouds") {
    int within = 0;
    const int instances = 6;
    for (std::uint64_t inst = 0; inst < instances; ++inst) {
      Rng rng(9000 + inst);
      const std::array<double, 3> mu0{0.25 + 0.2 * rng.uniform(), 0.3 + 0.3 * rng.uniform(),
                                      0.3 + 0.2 * rng.uniform()};
      const std::array<double, 3> mu1{0.55 + 0.2 * rng.uniform(), 0.25 + 0.2 * rng.uniform(),
                                      0.5 + 0.3 * rng.uniform()};
      const double s0 = 0.05 + 0.05 * rng.uniform();
      const double s1 = 0.08 + 0.06 * rng.uniform();
      const PixelCloud p = testutil::gaussian_cloud(
          512, mu0, {s0, 0, 0, 0, s0, 0, 0, 0, s0}, 40 + inst);
      const PixelCloud q = testutil::gaussian_cloud(
          512, mu1, {s1, 0, 0, 0, s1, 0, 0, 0, s1}, 50 + inst);
      const double exact = wasserstein(p, q, 512, WassersteinMode::Exact, 7);
      const double sliced = wasserstein(p, q, 512, WassersteinMode::Sliced, 7);
      if (std::abs(sliced - exact) <= 0.15 * exact) ++within;
    }
    CHECK(within == instances);
  }
  SUBCASE("triangle inequality in exact mode") {
    const PixelCloud a = testutil::random_cloud(96, 61);
    const PixelCloud b = testutil::gaussian_cloud(
        96, {0.3, 0.5, 0.7}, {0.1, 0, 0, 0, 0.15, 0, 0, 0, 0.05}, 62);
    const PixelCloud c = testutil::gaussian_cloud(
        96, {0.7, 0.3, 0.4}, {0.12, 0, 0, 0, 0.06, 0, 0, 0, 0.2}, 63);
    const double ab = wasserstein(a, b, 96, WassersteinMode::Exact, 1);
    const double bc = wasserstein(b, c, 96, WassersteinMode::Exact, 1);
    const double ac = wasserstein(a, c, 96, WassersteinMode::Exact, 1);
    CHECK(ac <= ab + bc + 1e-6);
    CHECK(ab <= ac + bc + 1e-6);
    CHECK(bc <= ab + ac + 1e-6);
  }
  SUBCASE("exact mode above the solver bound is refused") {
    const PixelCloud p = testutil::random_cloud(kExactOtBound + 8, 5);
    CHECK_THROWS_AS(
        wasserstein(p, p, kExactOtBound + 8, WassersteinMode::Exact, 1),
        ValidationError);
  }
}

TEST_CASE("rearrange_1d") {
  SUBCASE("source equal to target is the identity within 1/N") {
    std::vector<double> s(32);
    Rng rng(4);
    for (auto& v : s) v = rng.uniform();
    std::sort(s.begin(), s.end());
    const auto map = rearrange_1d(s, s);
    for (std::size_t i = 0; i < s.size(); ++i)
      CHECK(std::abs(map.mapped[i] - s[i]) <= 1.0 / 32.0);
  }
  SUBCASE("uniform samples map approximately affinely onto U[a,b]") {
    const std::size_t n = 4000;
    std::vector<double> src(n), tgt(n);
    Rng rng(5);
    for (auto& v : src) v = rng.uniform();
    for (auto& v : tgt) v = 0.2 + 0.6 * rng.uniform();
    std::sort(src.begin(), src.end());
    std::sort(tgt.begin(), tgt.end());
    const auto map = rearrange_1d(src, tgt);
    for (std::size_t i = 0; i < n; i += 97)
      CHECK(std::abs(map.mapped[i] - (0.2 + 0.6 * src[i])) <= 0.03);
  }
  SUBCASE("equal-size pairs reproduce sorted matching exactly") {
    for (std::uint64_t inst = 0; inst < 50; ++inst) {
      Rng rng(700 + inst);
      std::vector<double> src(16), tgt(16);
      for (auto& v : src) v = rng.uniform() * 2.0 - 0.5;
      for (auto& v : tgt) v = rng.uniform() * 3.0;
      std::sort(src.begin(), src.end());
      std::sort(tgt.begin(), tgt.end());
      const auto map = rearrange_1d(src, tgt);
      for (std::size_t i = 0; i < 16; ++i) CHECK(map.mapped[i] == tgt[i]);
    }
  }
  SUBCASE("mapped values are monotone non-decreasing") {
    Rng rng(8);
    std::vector<double> src(100), tgt(37);
    for (auto& v : src) v = rng.uniform();
    for (auto& v : tgt) v = rng.uniform();
    std::sort(src.begin(), src.end());
    std::sort(tgt.begin(), tgt.end());
    const auto map = rearrange_1d(src, tgt);
    for (std::size_t i = 1; i < map.mapped.size(); ++i)
      CHECK(map.mapped[i] >= map.mapped[i - 1]);
  }
  SUBCASE("quadratic cost of the rearrangement beats random pairings") {
    Rng rng(9);
    std::vector<double> src(64), tgt(64);
    for (auto& v : src) v = rng.uniform();
    for (auto& v : tgt) v = rng.uniform() * 0.7 + 0.2;
    std::sort(src.begin(), src.end());
    std::sort(tgt.begin(), tgt.end());
    const auto map = rearrange_1d(src, tgt);
    double sorted_cost = 0.0;
    for (std::size_t i = 0; i < 64; ++i)
      sorted_cost += (src[i] - map.mapped[i]) * (src[i] - map.mapped[i]);
    std::vector<std::size_t> perm(64);
    std::iota(perm.begin(), perm.end(), 0);
    for (int trial = 0; trial < 100; ++trial) {
      // Fisher-Yates with the test rng
      for (std::size_t i = 63; i > 0; --i)
        std::swap(perm[i], perm[rng.below(i + 1)]);
      double cost = 0.0;
      for (std::size_t i = 0; i < 64; ++i)
        cost += (src[i] - tgt[perm[i]]) * (src[i] - tgt[perm[i]]);
      CHECK(sorted_cost <= cost + 1e-12);
    }
  }
}

TEST_CASE("mkl_map") {
  SUBCASE("pure translation when covariances match") {
    const std::array<double, 9> chol{0.1, 0, 0, 0, 0.1, 0, 0, 0, 0.1};
    const PixelCloud p = testutil::gaussian_cloud(20000, {0.3, 0.4, 0.5}, chol, 1);
    const PixelCloud q = testutil::gaussian_cloud(20000, {0.5, 0.5, 0.3}, chol, 1);
    // same seed: identical standardized samples, so sample covariances match
    const AffineColorMap map = mkl_map(p, q);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        CHECK(map.A[std::size_t(3 * i + j)] ==
              doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-6));
    CHECK(map.b[0] == doctest::Approx(0.2).epsilon(1e-6));
    CHECK(map.b[1] == doctest::Approx(0.1).epsilon(1e-6));
    CHECK(map.b[2] == doctest::Approx(-0.2).epsilon(1e-6));
  }
  SUBCASE("diagonal case gives per-channel sigma ratios") {
    const PixelCloud p = testutil::gaussian_cloud(
        30000, {0.5, 0.5, 0.5}, {0.05, 0, 0, 0, 0.1, 0, 0, 0, 0.15}, 21);
    const PixelCloud q = testutil::gaussian_cloud(
        30000, {0.5, 0.5, 0.5}, {0.10, 0, 0, 0, 0.05, 0, 0, 0, 0.15}, 21);
    const AffineColorMap map = mkl_map(p, q);
    CHECK(map.A[0] == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(map.A[4] == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(map.A[8] == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("pushforward covariance equals the target covariance") {
    for (std::uint64_t inst = 0; inst < 5; ++inst) {
      Rng rng(3000 + inst);
      std::array<double, 9> c0{}, c1{};
      for (auto& v : c0) v = (rng.uniform() - 0.5) * 0.12;
      for (auto& v : c1) v = (rng.uniform() - 0.5) * 0.12;
      for (int d : {0, 4, 8}) {
        c0[std::size_t(d)] += 0.15;
        c1[std::size_t(d)] += 0.15;
      }
      const PixelCloud p = testutil::gaussian_cloud(4096, {0.5, 0.45, 0.55}, c0, 70 + inst);
      const PixelCloud q = testutil::gaussian_cloud(4096, {0.4, 0.6, 0.5}, c1, 80 + inst);
      const AffineColorMap map = mkl_map(p, q);

      // sample moments of both clouds (the closed form is exact on them)
      auto moments = [](const PixelCloud& c, double mu[3], double cov[9]) {
        const std::size_t n = c.size();
        mu[0] = mu[1] = mu[2] = 0;
        for (std::size_t i = 0; i < n; ++i) {
          mu[0] += c.r[i];
          mu[1] += c.g[i];
          mu[2] += c.b[i];
        }
        for (int d = 0; d < 3; ++d) mu[d] /= double(n);
        std::fill(cov, cov + 9, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          const double d0 = c.r[i] - mu[0], d1 = c.g[i] - mu[1], d2 = c.b[i] - mu[2];
          const double d[3] = {d0, d1, d2};
          for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) cov[3 * a + b] += d[a] * d[b];
        }
        for (int a = 0; a < 9; ++a) cov[a] /= double(n);
      };
      double mu0[3], cov0[9], mu1[3], cov1[9];
      moments(p, mu0, cov0);
      moments(q, mu1, cov1);

      // A cov0 A^T == cov1 and A mu0 + b == mu1
      for (int a = 0; a < 3; ++a) {
        double mapped = map.b[std::size_t(a)];
        for (int b = 0; b < 3; ++b) mapped += map.A[std::size_t(3 * a + b)] * mu0[b];
        CHECK(std::abs(mapped - mu1[a]) <= 1e-9);
      }
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) {
          double acc = 0.0;
          for (int u = 0; u < 3; ++u)
            for (int v = 0; v < 3; ++v)
              acc += map.A[std::size_t(3 * a + u)] * cov0[3 * u + v] *
                     map.A[std::size_t(3 * b + v)];
          CHECK(std::abs(acc - cov1[3 * a + b]) <= 1e-6);
        }
    }
  }
  SUBCASE("near-singular source covariance is regularized with a warning flag") {
    PixelCloud p;  // constant blue channel: rank-deficient covariance
    Rng rng(5);
    for (int i = 0; i < 4096; ++i)
      p.push_back(rng.uniform_f() * 0.5f + 0.2f, rng.uniform_f() * 0.5f + 0.2f, 0.5f);
    const PixelCloud q = testutil::random_cloud(4096, 6);
    bool regularized = false;
    const AffineColorMap map = mkl_map(p, q, &regularized);
    CHECK(regularized);
    for (double v : map.A) CHECK(std::isfinite(v));
  }
}

TEST_CASE("lipschitz_estimate") {
  const PixelCloud domain = testutil::random_cloud(4096, 10);
  SUBCASE("identity map gives exactly 1") {
    const CloudMap identity = [](const PixelCloud& c) { return c; };
    CHECK(lipschitz_estimate(identity, domain, 2000, 1.0 / 255.0, 3) == 1.0);
  }
  SUBCASE("scaling map x -> cx gives c") {
    const CloudMap scale = [](const PixelCloud& c) {
      PixelCloud out = c;
      for (auto& v : out.r) v *= 0.75f;
      for (auto& v : out.g) v *= 0.75f;
      for (auto& v : out.b) v *= 0.75f;
      return out;
    };
    CHECK(lipschitz_estimate(scale, domain, 2000, 1.0 / 255.0, 3) ==
          doctest::Approx(0.75).epsilon(1e-5));
  }
  SUBCASE("fixed linear map stays inside the singular-value bracket") {
    // A = diag(2.0, 0.5, 1.0) rotated a little in the rg-plane
    const double c = std::cos(0.4), s = std::sin(0.4);
    const CloudMap linear = [c, s](const PixelCloud& in) {
      PixelCloud out = in;
      for (std::size_t i = 0; i < in.size(); ++i) {
        const double r = in.r[i], g = in.g[i], b = in.b[i];
        out.r[i] = float(2.0 * (c * r - s * g));
        out.g[i] = float(0.5 * (s * r + c * g));
        out.b[i] = float(1.0 * b);
      }
      return out;
    };
    std::vector<double> estimates;
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
      const double est = lipschitz_estimate(linear, domain, 10000, 1.0 / 255.0, seed);
      CHECK(est >= 0.5 - 1e-3);
      CHECK(est <= 2.0 + 1e-3);
      estimates.push_back(est);
    }
    const double mean = (estimates[0] + estimates[1] + estimates[2]) / 3.0;
    for (double est : estimates) CHECK(std::abs(est - mean) <= 0.05 * mean);
  }
}

TEST_CASE("content_distance") {
  SUBCASE("identical images give zero") {
    const RgbImage img = testutil::synth_image(31, 40, 30);
    CHECK(content_distance(img, img) == 0.0);
  }
  SUBCASE("a strictly monotone luma curve survives equalization") {
    const RgbImage img = testutil::synth_image(33, 48, 36);
    RgbImage curved = img;
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
      const float l = luma709(img.data[3 * i], img.data[3 * i + 1], img.data[3 * i + 2]);
      if (l <= 0.0f) continue;
      // rescale the pixel so its luma becomes l^0.6 (strictly monotone in l)
      const float k = std::pow(l, 0.6f) / l;
      for (int ch = 0; ch < 3; ++ch) curved.data[3 * i + ch] = img.data[3 * i + ch] * k;
    }
    CHECK(content_distance(img, curved) <= 0.02);
  }
  SUBCASE("luma inversion lands near 0.5") {
    RgbImage img = RgbImage::blank(64, 64);
    Rng rng(12);
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
      const float v = rng.uniform_f();
      img.data[3 * i] = img.data[3 * i + 1] = img.data[3 * i + 2] = v;
    }
    RgbImage inverted = img;
    for (auto& v : inverted.data) v = 1.0f - v;
    CHECK(content_distance(img, inverted) == doctest::Approx(0.5).epsilon(0.01));
  }
  SUBCASE("dimension mismatch is an error") {
    CHECK_THROWS_AS(content_distance(RgbImage::blank(2, 2), RgbImage::blank(3, 2)),
                    ValidationError);
  }
}

TEST_CASE("aggregated_score") {
  CHECK(aggregated_score(0.0, 0.0) == 0.0);
  CHECK(aggregated_score(0.3, 0.4) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(aggregated_score(0.3, 0.4, 0.1) ==
        doctest::Approx(std::hypot(0.2, 0.3)).epsilon(1e-12));
  CHECK_THROWS_AS(aggregated_score(-0.1, 0.0), ValidationError);
}

TEST_CASE("evaluate_transfer") {
  const RgbImage img = testutil::synth_image(77, 64, 48);
  SUBCASE("output == content == style: zero distances, unit lipschitz") {
    EvalConfig cfg;
    cfg.style_samples = 2000;
    cfg.lipschitz_pairs = 500;
    const TransportReport rep = evaluate_transfer(img, img, img, nullptr, cfg);
    CHECK(rep.style_distance <= 0.03);  // subsampling noise only
    CHECK(rep.content_distance == 0.0);
    CHECK(rep.lipschitz == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("output with the style's palette scores near-zero style distance") {
    EvalConfig cfg;
    cfg.style_samples = 4000;
    cfg.lipschitz_pairs = 200;
    const RgbImage style = testutil::synth_image(78, 64, 48);
    const TransportReport rep = evaluate_transfer(img, style, style, nullptr, cfg);
    CHECK(rep.style_distance <= 0.03);
  }
  SUBCASE("MKL beats identity on a shifted Gaussian pair") {
    // content: blue-ish Gaussian blob; style: the same shape shifted red-ward
    auto cloud_to_image = [](const PixelCloud& c, int w, int h) {
      RgbImage im;
      im.width = w;
      im.height = h;
      im.data.resize(3 * std::size_t(w) * h);
      for (std::size_t i = 0; i < std::size_t(w) * h; ++i) {
        im.data[3 * i] = c.r[i];
        im.data[3 * i + 1] = c.g[i];
        im.data[3 * i + 2] = c.b[i];
      }
      return im;
    };
    const std::array<double, 9> chol{0.08, 0, 0, 0, 0.06, 0, 0, 0, 0.07};
    const PixelCloud cc = testutil::gaussian_cloud(48 * 48, {0.3, 0.4, 0.6}, chol, 1);
    const PixelCloud sc = testutil::gaussian_cloud(48 * 48, {0.65, 0.45, 0.3}, chol, 2);
    const RgbImage content = cloud_to_image(cc, 48, 48);
    const RgbImage style = cloud_to_image(sc, 48, 48);

    const AffineColorMap map = mkl_map(cc, sc);
    RgbImage mkl_out = content;
    for (std::size_t i = 0; i < mkl_out.pixel_count(); ++i) {
      const auto y = map.apply({double(content.data[3 * i]), double(content.data[3 * i + 1]),
                                double(content.data[3 * i + 2])});
      for (int ch = 0; ch < 3; ++ch)
        mkl_out.data[3 * i + ch] = float(std::clamp(y[std::size_t(ch)], 0.0, 1.0));
    }
    EvalConfig cfg;
    cfg.style_samples = 2000;
    cfg.lipschitz_pairs = 200;
    const TransportReport identity_rep = evaluate_transfer(content, style, content, nullptr, cfg);
    const TransportReport mkl_rep = evaluate_transfer(content, style, mkl_out, nullptr, cfg);
    CHECK(mkl_rep.style_distance < identity_rep.style_distance);
  }
}

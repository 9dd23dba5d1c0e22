#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "colorflow/otmetrics.hpp"
#include "colorflow/transfer.hpp"
#include "testutil.hpp"

using namespace colorflow;

namespace {

// second trained flow on a different palette, shared across cases
const FlowWeights& style_flow_fixture() {
  static FlowWeights w = [] {
    PixelCloud cloud = image_cloud(testutil::synth_image(84, 96, 72));
    cloud.source_id = "style-fixture";
    FlowTrainParams p;
    p.iters = 12000;
    p.seed = 13;
    return train_flow(cloud, FlowArch{64}, p);
  }();
  return w;
}

double mean_l2(const PixelCloud& a, const PixelCloud& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    acc += testutil::l2(double(a.r[i]) - b.r[i], double(a.g[i]) - b.g[i],
                        double(a.b[i]) - b.b[i]);
  return acc / double(a.size());
}

}  // namespace

TEST_CASE("transfer_cloud") {
  const FlowWeights& cf = testutil::shared_trained_flow();
  const FlowWeights& sf = style_flow_fixture();

  SUBCASE("strength 0 returns the input exactly") {
    const PixelCloud x = testutil::random_cloud(500, 3);
    TransferConfig cfg;
    cfg.strength = 0.0f;
    const PixelCloud y = transfer_cloud(x, cf, sf, cfg);
    CHECK(y.r == x.r);
    CHECK(y.g == x.g);
    CHECK(y.b == x.b);
  }
  SUBCASE("content flow composed with its own inverse is near-identity") {
    const PixelCloud x = sample_pixels(testutil::shared_fixture_image(), 2048, 21);
    TransferConfig cfg;
    cfg.steps = 32;
    const PixelCloud y = transfer_cloud(x, cf, cf, cfg);
    CHECK(mean_l2(x, y) <= 0.02);
  }
  SUBCASE("blend 0 reproduces the input exactly") {
    const PixelCloud x = testutil::random_cloud(300, 4);
    TransferConfig cfg;
    cfg.blend = 0.0f;
    const PixelCloud y = transfer_cloud(x, cf, sf, cfg);
    CHECK(y.r == x.r);
    CHECK(y.g == x.g);
    CHECK(y.b == x.b);
  }
  SUBCASE("output stays in the unit cube") {
    const PixelCloud x = testutil::random_cloud(1000, 5);
    const PixelCloud y = transfer_cloud(x, cf, sf, TransferConfig{});
    for (std::size_t i = 0; i < y.size(); ++i) {
      CHECK(y.r[i] >= 0.0f);
      CHECK(y.r[i] <= 1.0f);
      CHECK(y.g[i] >= 0.0f);
      CHECK(y.g[i] <= 1.0f);
      CHECK(y.b[i] >= 0.0f);
      CHECK(y.b[i] <= 1.0f);
    }
  }
}

TEST_CASE("transfer through the cube matches the 1-D rearrangement on ramps" *
          doctest::timeout(600)) {
  // 1-D structured clouds on the cube diagonal
  const RgbImage content_img = testutil::ramp_image(1, 64, 64);
  const RgbImage style_img = testutil::ramp_image(2, 64, 64);
  FlowTrainParams p;
  p.iters = 12000;
  p.seed = 31;
  FlowWeights cf = train_flow(image_cloud(content_img), FlowArch{64}, p);
  p.seed = 32;
  FlowWeights sf = train_flow(image_cloud(style_img), FlowArch{64}, p);

  TransferConfig cfg;
  cfg.steps = 32;
  const PixelCloud content_cloud = image_cloud(content_img);
  const PixelCloud style_cloud = image_cloud(style_img);
  const PixelCloud out = transfer_cloud(content_cloud, cf, sf, cfg);

  const double w = wasserstein(out, style_cloud, 2048, WassersteinMode::Sliced, 77);
  CHECK(w <= 0.07);

  // sort-matching oracle: the optimal 1-D map sends content quantiles to
  // style quantiles; check rank agreement along the diagonal
  std::vector<double> src(content_cloud.size()), dst(style_cloud.size());
  for (std::size_t i = 0; i < src.size(); ++i) src[i] = content_cloud.r[i];
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = style_cloud.r[i];
  std::sort(src.begin(), src.end());
  std::sort(dst.begin(), dst.end());
  const Rearrangement1d oracle = rearrange_1d(src, dst);
  double err = 0.0;
  for (std::size_t i = 0; i < content_cloud.size(); i += 37) {
    const double expected = oracle.apply(content_cloud.r[i]);
    const double got = (double(out.r[i]) + out.g[i] + out.b[i]) / 3.0;
    err += std::abs(expected - got);
  }
  err /= double((content_cloud.size() + 36) / 37);
  CHECK(err <= 0.06);
}

TEST_CASE("transfer_image") {
  const FlowWeights& cf = testutil::shared_trained_flow();
  const FlowWeights& sf = style_flow_fixture();

  SUBCASE("1x1 content with strength 0 is unchanged") {
    const RgbImage img = RgbImage::blank(1, 1, 0.4f, 0.1f, 0.9f);
    TransferConfig cfg;
    cfg.strength = 0.0f;
    const RgbImage out = transfer_image(TransferJob{img, cf, sf, cfg});
    CHECK(out.data == img.data);
  }
  SUBCASE("uniform content maps to uniform output") {
    const RgbImage img = RgbImage::blank(17, 9, 0.3f, 0.5f, 0.2f);
    const RgbImage out = transfer_image(TransferJob{img, cf, sf, TransferConfig{}});
    for (std::size_t i = 1; i < out.pixel_count(); ++i) {
      CHECK(out.data[3 * i + 0] == out.data[0]);
      CHECK(out.data[3 * i + 1] == out.data[1]);
      CHECK(out.data[3 * i + 2] == out.data[2]);
    }
  }
  SUBCASE("tile size does not change the output bits") {
    const RgbImage img = testutil::synth_image(91, 120, 80);
    TransferConfig small;
    small.tile_size = 1024;
    TransferConfig large;
    large.tile_size = std::size_t(1) << 20;
    const RgbImage a = transfer_image(TransferJob{img, cf, sf, small});
    const RgbImage b = transfer_image(TransferJob{img, cf, sf, large});
    CHECK(a.data == b.data);
  }
  SUBCASE("thread count does not change the output bits") {
    const RgbImage img = testutil::synth_image(92, 100, 60);
    TransferConfig one;
    one.threads = 1;
    TransferConfig four;
    four.threads = 4;
    const RgbImage a = transfer_image(TransferJob{img, cf, sf, one});
    const RgbImage b = transfer_image(TransferJob{img, cf, sf, four});
    CHECK(a.data == b.data);
  }
  SUBCASE("the pixel map is pure: position permutations commute with transfer") {
    const RgbImage img = testutil::synth_image(93, 40, 30);
    RgbImage shuffled = img;
    // deterministic permutation of pixel positions
    std::vector<std::size_t> perm(img.pixel_count());
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(17);
    for (std::size_t i = perm.size() - 1; i > 0; --i)
      std::swap(perm[i], perm[rng.below(i + 1)]);
    for (std::size_t i = 0; i < perm.size(); ++i)
      for (int c = 0; c < 3; ++c)
        shuffled.data[3 * i + c] = img.data[3 * perm[i] + c];

    const RgbImage out = transfer_image(TransferJob{img, cf, sf, TransferConfig{}});
    const RgbImage out_shuffled =
        transfer_image(TransferJob{shuffled, cf, sf, TransferConfig{}});
    for (std::size_t i = 0; i < perm.size(); ++i)
      for (int c = 0; c < 3; ++c)
        CHECK(out_shuffled.data[3 * i + c] == out.data[3 * perm[i] + c]);
  }
}

TEST_CASE("transfer_direct" * doctest::timeout(900)) {
  const RgbImage img = testutil::duotone_image(56, 64, 48);
  FlowTrainParams train;
  train.iters = 10000;
  train.seed = 41;
  TransferConfig cfg;  // 8 steps, the inference default
  cfg.threads = 2;

  SUBCASE("content == style gives output close to the content") {
    const RgbImage out = transfer_direct(img, img, FlowArch{64}, train, cfg);
    const PixelCloud a = image_cloud(img);
    const PixelCloud b = image_cloud(out);
    CHECK(mean_l2(a, b) <= 0.05);
  }
  SUBCASE("grayscale-ramp style preserves luma ranks") {
    FlowTrainParams longer = train;
    longer.iters = 12000;
    const RgbImage style = testutil::ramp_image(3, 64, 48);
    const RgbImage out = transfer_direct(img, style, FlowArch{64}, longer, cfg);
    // rank correlation between content luma and output luma
    const std::size_t n = img.pixel_count();
    std::vector<double> la(n), lb(n);
    for (std::size_t i = 0; i < n; ++i) {
      la[i] = luma709(img.data[3 * i], img.data[3 * i + 1], img.data[3 * i + 2]);
      lb[i] = luma709(out.data[3 * i], out.data[3 * i + 1], out.data[3 * i + 2]);
    }
    auto ranks = [](const std::vector<double>& v) {
      std::vector<std::size_t> idx(v.size()), rank(v.size());
      std::iota(idx.begin(), idx.end(), 0);
      std::stable_sort(idx.begin(), idx.end(),
                       [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
      for (std::size_t r = 0; r < idx.size(); ++r) rank[idx[r]] = r;
      return rank;
    };
    const auto ra = ranks(la), rb = ranks(lb);
    double num = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = double(ra[i]) - double(rb[i]);
      num += d * d;
    }
    const double spearman = 1.0 - 6.0 * num / (double(n) * (double(n) * n - 1.0));
    CHECK(spearman >= 0.95);
  }
  SUBCASE("seeded run repeats bit-exactly") {
    const RgbImage style = testutil::synth_image(56, 48, 32);
    FlowTrainParams quick = train;
    quick.iters = 500;
    const RgbImage a = transfer_direct(img, style, FlowArch{32}, quick, cfg);
    const RgbImage b = transfer_direct(img, style, FlowArch{32}, quick, cfg);
    CHECK(a.data == b.data);
  }
}

TEST_CASE("strength monotonicity at the distribution level" * doctest::timeout(600)) {
  const FlowWeights& cf = testutil::shared_trained_flow();
  const FlowWeights& sf = style_flow_fixture();
  const PixelCloud content = sample_pixels(testutil::shared_fixture_image(), 4096, 3);
  const PixelCloud style = sample_pixels(testutil::synth_image(84, 96, 72), 4096, 4);

  double prev = std::numeric_limits<double>::infinity();
  for (float s : {0.0f, 0.25f, 0.5f, 0.75f, 1.0f}) {
    TransferConfig cfg;
    cfg.steps = 32;
    cfg.strength = s;
    const PixelCloud out = transfer_cloud(content, cf, sf, cfg);
    const double w = wasserstein(out, style, 4096, WassersteinMode::Sliced, 100);
    CHECK(w <= prev * 1.05);  // non-increasing within 5%
    prev = w;
  }
}

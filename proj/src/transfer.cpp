#include "colorflow/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_map>

#include "colorflow/errors.hpp"
#include "colorflow/parallel.hpp"
#include "colorflow/rng.hpp"

namespace colorflow {
namespace {

void validate_config(const TransferConfig& cfg) {
  if (cfg.steps < 1) throw ValidationError("transfer: steps must be >= 1");
  if (cfg.strength < 0.0f || cfg.strength > 1.0f)
    throw ValidationError("transfer: strength must be in [0,1]");
  if (cfg.blend < 0.0f || cfg.blend > 1.0f)
    throw ValidationError("transfer: blend must be in [0,1]");
  if (cfg.tile_size < 1) throw ValidationError("transfer: tile_size must be >= 1");
}

// key on exact float bit patterns: identical colors share one trajectory
struct ColorKey {
  std::uint32_t r, g, b;
  bool operator==(const ColorKey&) const = default;
};

struct ColorKeyHash {
  std::size_t operator()(const ColorKey& k) const {
    std::uint64_t h = k.r;
    h = h * 0x9E3779B97F4A7C15ull ^ k.g;
    h = h * 0x9E3779B97F4A7C15ull ^ k.b;
    h ^= h >> 29;
    h *= 0xBF58476D1CE4E5B9ull;
    return std::size_t(h ^ (h >> 32));
  }
};

inline ColorKey key_of(float r, float g, float b) {
  ColorKey k;
  std::memcpy(&k.r, &r, 4);
  std::memcpy(&k.g, &g, 4);
  std::memcpy(&k.b, &b, 4);
  return k;
}

void map_points(float* x, float* y, float* z, std::size_t n,
                const FlowWeights& content_flow, const FlowWeights& style_flow,
                const TransferConfig& cfg) {
  parallel_chunks(n, cfg.threads, [&](std::size_t b, std::size_t e) {
    integrate_inplace(content_flow, x + b, y + b, z + b, e - b, cfg.steps,
                      cfg.strength, Direction::Forward);
    integrate_inplace(style_flow, x + b, y + b, z + b, e - b, cfg.steps,
                      cfg.strength, Direction::Inverse);
  });
}

}  // namespace

PixelCloud transfer_cloud(const PixelCloud& x, const FlowWeights& content_flow,
                          const FlowWeights& style_flow, const TransferConfig& cfg) {
  validate_config(cfg);
  if (cfg.strength == 0.0f) return x;  // zero-length curve, exact identity

  PixelCloud out = x;
  map_points(out.r.data(), out.g.data(), out.b.data(), out.size(), content_flow,
             style_flow, cfg);

  const float lam = cfg.blend;
  for (std::size_t i = 0; i < out.size(); ++i) {
    float rr = lam * out.r[i] + (1.0f - lam) * x.r[i];
    float gg = lam * out.g[i] + (1.0f - lam) * x.g[i];
    float bb = lam * out.b[i] + (1.0f - lam) * x.b[i];
    out.r[i] = std::clamp(rr, 0.0f, 1.0f);
    out.g[i] = std::clamp(gg, 0.0f, 1.0f);
    out.b[i] = std::clamp(bb, 0.0f, 1.0f);
  }
  return out;
}

RgbImage transfer_image(const TransferJob& job) {
  validate_config(job.config);
  const RgbImage& src = job.content;
  if (src.pixel_count() == 0) throw ValidationError("transfer_image: empty content");

  RgbImage out;
  out.width = src.width;
  out.height = src.height;
  out.data.resize(src.data.size());

  const std::size_t total = src.pixel_count();
  const std::size_t tile = job.config.tile_size;

  std::unordered_map<ColorKey, std::uint32_t, ColorKeyHash> seen;
  std::vector<std::uint32_t> index;
  PixelCloud unique;

  for (std::size_t base = 0; base < total; base += tile) {
    const std::size_t count = std::min(tile, total - base);
    seen.clear();
    seen.reserve(count);
    index.assign(count, 0);
    unique.r.clear();
    unique.g.clear();
    unique.b.clear();

    for (std::size_t i = 0; i < count; ++i) {
      const float* p = src.data.data() + 3 * (base + i);
      auto [it, inserted] =
          seen.try_emplace(key_of(p[0], p[1], p[2]), std::uint32_t(unique.size()));
      if (inserted) unique.push_back(p[0], p[1], p[2]);
      index[i] = it->second;
    }

    const PixelCloud mapped = transfer_cloud(unique, job.content_flow,
                                             job.style_flow, job.config);

    for (std::size_t i = 0; i < count; ++i) {
      float* q = out.data.data() + 3 * (base + i);
      const std::uint32_t u = index[i];
      q[0] = mapped.r[u];
      q[1] = mapped.g[u];
      q[2] = mapped.b[u];
    }
  }
  return out;
}

RgbImage transfer_direct(const RgbImage& content, const RgbImage& style,
                         FlowArch arch, const FlowTrainParams& train,
                         const TransferConfig& cfg) {
  FlowWeights flows[2];
  const RgbImage* imgs[2] = {&content, &style};
  const std::uint64_t seeds[2] = {seed_mix(train.seed, 0xC0117E47),
                                  seed_mix(train.seed, 0x57717E00)};
  parallel_items(2, std::min(cfg.threads, 2), [&](std::size_t i) {
    FlowTrainParams p = train;
    p.seed = seeds[i];
    flows[i] = train_flow(image_cloud(*imgs[i]), arch, p);
  });
  TransferJob job{content, flows[0], flows[1], cfg};
  return transfer_image(job);
}

}  // namespace colorflow

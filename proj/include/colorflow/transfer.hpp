#pragma once

#include <cstddef>
#include <cstdint>

#include "colorflow/flow.hpp"
#include "colorflow/image.hpp"

namespace colorflow {

struct TransferConfig {
  int steps = 8;               // ODE steps per direction
  float strength = 1.0f;       // fraction of the interpolation curve traversed
  float blend = 1.0f;          // linear mix with the original (1 = full transfer)
  std::size_t tile_size = std::size_t(1) << 20;  // pixels per tile
  int threads = 1;
};

struct TransferJob {
  const RgbImage& content;
  const FlowWeights& content_flow;
  const FlowWeights& style_flow;
  TransferConfig config;
};

// Forward content flow into the latent cube, inverse style flow out of it,
// then blend and clamp. The map is pure per color.
PixelCloud transfer_cloud(const PixelCloud& x, const FlowWeights& content_flow,
                          const FlowWeights& style_flow, const TransferConfig& cfg);

// Whole-image transfer, tile by tile. Distinct colors within a tile are
// integrated once (the map is color-pure, photographs repeat colors heavily).
// Output is bit-identical for any tile size or thread count.
RgbImage transfer_image(const TransferJob& job);

// The no-encoder baseline: trains both flows from scratch, then transfers.
RgbImage transfer_direct(const RgbImage& content, const RgbImage& style,
                         FlowArch arch, const FlowTrainParams& train,
                         const TransferConfig& cfg);

}  // namespace colorflow

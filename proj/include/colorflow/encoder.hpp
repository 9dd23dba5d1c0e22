#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "colorflow/flow.hpp"
#include "colorflow/image.hpp"

namespace colorflow {

// Palette encoder: bilinear resize to a square input, a stack of stride-2
// 3x3 conv + relu stages, global average pooling, and a linear head onto the
// flow parameter vector. dim(e) must equal 8H+3 of the target flow.
struct EncoderArch {
  int input_size = 64;
  std::vector<int> widths = {16, 32, 64, 128};
  int embed_dim = 515;  // 8*64+3

  std::size_t param_count() const;
  bool operator==(const EncoderArch&) const = default;
};

struct EncoderMeta {
  std::uint64_t iterations = 0;
  double final_loss = 0.0;
  std::string note;
};

struct EncoderModel {
  EncoderArch arch;
  std::vector<double> params;
  EncoderMeta meta;
};

EncoderModel init_encoder(const EncoderArch& arch, std::uint64_t seed);

struct PaletteEmbedding {
  std::vector<double> e;
  std::string image_id;
};

// Deterministic: resize, forward pass, return e.
PaletteEmbedding encode(const EncoderModel& m, const RgbImage& img);

// e interpreted as flow weights (the "modulated flow").
FlowWeights modulated_flow(const PaletteEmbedding& e);

// Distillation samples: Z = forward-integrated pixels, t ~ U[0,1] per point,
// z_t = t*Z + (1-t)*X. The canonical target is the straight-line displacement
// Z - X; velocity_target instead records v_theta(z_t, t) of the dataset flow.
struct DistillBatch {
  std::vector<float> x, y, z, t;     // z_t coordinates and times
  std::vector<float> tx, ty, tz;     // regression targets
  std::size_t size() const { return x.size(); }
};

DistillBatch distill_targets(const FlowWeights& w, const PixelCloud& pixels,
                             int steps, std::uint64_t seed,
                             bool velocity_target = false);

// Flow-image dataset (stage-1 output); paths already resolved.
struct FlowDatasetEntry {
  std::string image_path;
  std::string weights_path;
  std::uint64_t iterations = 0;
  float final_loss = 0.0f;
  std::uint64_t seed = 0;
};

struct FlowDataset {
  FlowArch arch;
  std::vector<FlowDatasetEntry> entries;
};

struct LoadedDataset {
  FlowArch arch;
  std::vector<std::string> ids;
  std::vector<RgbImage> images;
  std::vector<FlowWeights> flows;
  std::size_t size() const { return images.size(); }
};

// Reads every referenced file; enforces arch consistency (dim checks happen
// here so training can assume a clean dataset).
LoadedDataset load_dataset(const FlowDataset& ds);

// Distillation loss and its gradient w.r.t. encoder parameters for one
// already-prepared batch (images resized+augmented upstream). Exposed for the
// finite-difference tests.
double encoder_loss_grad(const EncoderModel& m,
                         const std::vector<const RgbImage*>& images,
                         const std::vector<const DistillBatch*>& batches,
                         std::vector<double>& grad, int threads = 1);

struct EncoderTrainParams {
  int iters = 20000;
  double lr = 5e-4;
  double lr_after_drop = 1e-4;
  int drop_at = 100000;  // paper schedule: one drop
  int batch_images = 8;
  int pixels_per_image = 1024;
  int distill_steps = 8;
  bool velocity_target = false;
  std::uint64_t seed = 0;
  int threads = 1;
  int start_iter = 0;
  int checkpoint_every = 0;
  std::function<void(int iter, double loss)> on_progress;
};

// Exact-resume state (double-precision params travel here; the MENC file
// stores float32).
struct EncoderTrainState {
  std::vector<double> params;
  std::vector<double> adam_m, adam_v;
  std::int64_t adam_step = 0;
  int iter = 0;
  bool valid() const { return !params.empty(); }
};

// Alg-style distillation training. Every random draw derives from
// (seed, iteration), so a resumed run reproduces an uninterrupted one
// bit-exactly given the state. on_checkpoint fires every checkpoint_every
// iterations with the current model and state.
EncoderModel train_encoder(
    const LoadedDataset& ds, const EncoderArch& arch,
    const EncoderTrainParams& params, const EncoderTrainState* resume = nullptr,
    const std::function<void(const EncoderModel&, const EncoderTrainState&)>&
        on_checkpoint = nullptr);

// Top-k by Euclidean distance on e, ascending; ties broken by id.
std::vector<std::pair<std::string, double>> embed_search(
    const std::vector<PaletteEmbedding>& db, const PaletteEmbedding& query,
    std::size_t k);

// Channel means (3) followed by the flattened covariance (9).
std::array<double, 12> moment_embedding(const RgbImage& img);

// MENC checkpoint: arch descriptor + float32 params + metadata blob.
void save_encoder(const EncoderModel& m, const std::string& path);
EncoderModel load_encoder(const std::string& path);

}  // namespace colorflow

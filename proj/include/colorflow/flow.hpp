#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "colorflow/image.hpp"
#include "colorflow/kernels.hpp"

namespace colorflow {

// Velocity-field MLP: 4 inputs (r,g,b,t), one tanh hidden layer, 3 outputs.
struct FlowArch {
  int hidden = 1024;
  static constexpr int input_dim = 4;
  static constexpr int output_dim = 3;

  std::size_t param_count() const { return kernels::param_count(hidden); }
  bool operator==(const FlowArch&) const = default;
};

struct FlowMeta {
  std::uint64_t iterations = 0;
  float final_loss = 0.0f;
  std::string source_id;
};

struct FlowWeights {
  FlowArch arch;
  std::vector<float> theta;
  FlowMeta meta;
};

// Uniformly initialized weights, U[-1/sqrt(fan_in), +1/sqrt(fan_in)] per
// layer, zero biases.
FlowWeights init_flow(FlowArch arch, std::uint64_t seed);

std::array<float, 3> velocity(const FlowWeights& w, std::array<float, 3> x, float t);

struct FlowBatch {
  // x_t positions, per-sample times, regression targets; equal lengths
  std::span<const float> x, y, z, t;
  std::span<const float> tx, ty, tz;
  std::size_t size() const { return x.size(); }
};

// loss = mean_i ||target_i - v_theta(x_i, t_i)||^2 and its exact gradient.
double flow_loss_grad(const FlowWeights& w, const FlowBatch& batch,
                      std::span<float> grad);

// Bias-corrected Adam. Templated so the encoder (double) and the flows
// (float) share one implementation.
template <typename T>
struct AdamState {
  std::vector<T> m, v;
  std::int64_t step = 0;
  T lr;
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);

  AdamState(std::size_t n, T learning_rate)
      : m(n, T(0)), v(n, T(0)), lr(learning_rate) {}
};

template <typename T>
void adam_step(AdamState<T>& st, std::span<T> w, std::span<const T> grad);

extern template void adam_step<float>(AdamState<float>&, std::span<float>,
                                      std::span<const float>);
extern template void adam_step<double>(AdamState<double>&, std::span<double>,
                                       std::span<const double>);

struct FlowTrainParams {
  int iters = 100000;
  float lr = 5e-4f;
  int batch = 4096;
  std::uint64_t seed = 0;
};

// Rectified-flow training of one image's color distribution onto the uniform
// cube. Per iteration, cloud points X and fresh uniform points U are paired
// independently, t ~ U[0,1] per pair, x_t = t*U + (1-t)*X, target U - X.
// Throws NumericError if the loss diverges.
FlowWeights train_flow(const PixelCloud& cloud, FlowArch arch,
                       const FlowTrainParams& params);

enum class Direction { Forward, Inverse };

// Explicit Euler over t in [0, strength]. Output is NOT clamped to the cube;
// clamping happens only at image reassembly.
PixelCloud integrate(const FlowWeights& w, const PixelCloud& points, int steps,
                     float strength, Direction dir);

// In-place variant over raw SoA ranges (used by the tiled transfer path).
void integrate_inplace(const FlowWeights& w, float* x, float* y, float* z,
                       std::size_t n, int steps, float strength, Direction dir);

// MODF flow weight file, little-endian, bit-exact round-trip.
void save_flow(const FlowWeights& w, const std::string& path);
FlowWeights load_flow(const std::string& path);

}  // namespace colorflow

#pragma once

#include <cstddef>
#include <cstdint>

// Arithmetic kernels for the velocity-field MLP: forward evaluation, fused
// loss+gradient, and Euler integration over point batches. Points are SoA
// (separate x/y/z arrays) so the vector variants process 8 points per lane
// group with purely vertical arithmetic — a point's result never depends on
// its batch position, which is what makes tiling and thread splits bit-exact.
//
// A scalar reference implementation always exists; an AVX2+FMA variant is
// selected at runtime when the CPU supports it. The two are equivalence-tested
// against each other (tolerance, not bitwise: the vector path uses FMA and a
// polynomial tanh).
//
// Network: v = W2 * tanh(W1 * [x y z t]^T + b1) + b2, hidden width H.
// Parameter vector layout (float, length 8H+3):
//   [0, 4H)      W1, per hidden unit j: (w_x, w_y, w_z, w_t) at 4j
//   [4H, 5H)     b1
//   [5H, 8H)     W2, per output channel c: row of H at 5H + cH
//   [8H, 8H+3)   b2

namespace colorflow::kernels {

enum class Backend { Auto, Scalar, Avx2 };

// Thread-safe only at startup / test setup; not meant to be flipped mid-run.
void set_backend(Backend b);
Backend active_backend();
const char* backend_name();
bool avx2_supported();

inline std::size_t param_count(int hidden) {
  return 8 * std::size_t(hidden) + 3;
}

struct ThetaLayout {
  int hidden;
  std::size_t w1(int j) const { return 4 * std::size_t(j); }
  std::size_t b1() const { return 4 * std::size_t(hidden); }
  std::size_t w2(int channel) const {
    return 5 * std::size_t(hidden) + std::size_t(channel) * hidden;
  }
  std::size_t b2() const { return 8 * std::size_t(hidden); }
};

// v(x_i, t_i) for i in [0,n). If shared_t, t[0] is used for every point.
void mlp_forward(const float* theta, int hidden, const float* x, const float* y,
                 const float* z, const float* t, bool shared_t, std::size_t n,
                 float* vx, float* vy, float* vz);

// loss = (1/n) sum_i ||target_i - v(x_i,t_i)||^2, grad = d loss / d theta
// (written to grad, length 8H+3). Returns the loss.
double mlp_loss_grad(const float* theta, int hidden, const float* x,
                     const float* y, const float* z, const float* t,
                     const float* tx, const float* ty, const float* tz,
                     std::size_t n, float* grad);

// Explicit Euler along the interpolation time axis, in place.
// forward: t_k = k*dt,            p += dt * v(p, t_k)
// inverse: t_k = strength - k*dt, p -= dt * v(p, t_k)
// with dt = strength / steps, k = 0..steps-1.
// Returns -1, or the first step index at which a coordinate went non-finite.
int euler_integrate(const float* theta, int hidden, int steps, float strength,
                    bool inverse, float* x, float* y, float* z, std::size_t n);

// Elementwise tanh; exposed so the scalar/vector variants can be compared
// directly in tests.
void tanh_n(const float* in, float* out, std::size_t n);

}  // namespace colorflow::kernels

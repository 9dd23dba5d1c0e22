#include "colorflow/kernels.hpp"

#include <atomic>
#include <cmath>

#include "colorflow/errors.hpp"
#include "kernels_internal.hpp"

namespace colorflow::kernels {
namespace {

std::atomic<Backend> g_requested{Backend::Auto};

const Ops& ops_for(Backend b) {
#if defined(COLORFLOW_HAVE_AVX2)
  if (b == Backend::Avx2) return avx2_ops;
#endif
  return scalar_ops;
}

Backend resolve(Backend b) {
  if (b == Backend::Auto) return avx2_supported() ? Backend::Avx2 : Backend::Scalar;
  return b;
}

const Ops& current() { return ops_for(resolve(g_requested.load())); }

}  // namespace

bool avx2_supported() {
#if defined(COLORFLOW_HAVE_AVX2)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

void set_backend(Backend b) {
  if (b == Backend::Avx2 && !avx2_supported())
    throw ValidationError("avx2 backend requested but not supported on this CPU");
  g_requested.store(b);
}

Backend active_backend() { return resolve(g_requested.load()); }

const char* backend_name() {
  return active_backend() == Backend::Avx2 ? "avx2" : "scalar";
}

void mlp_forward(const float* theta, int hidden, const float* x, const float* y,
                 const float* z, const float* t, bool shared_t, std::size_t n,
                 float* vx, float* vy, float* vz) {
  current().forward(theta, hidden, x, y, z, t, shared_t, n, vx, vy, vz);
}

double mlp_loss_grad(const float* theta, int hidden, const float* x,
                     const float* y, const float* z, const float* t,
                     const float* tx, const float* ty, const float* tz,
                     std::size_t n, float* grad) {
  return current().loss_grad(theta, hidden, x, y, z, t, tx, ty, tz, n, grad);
}

void tanh_n(const float* in, float* out, std::size_t n) {
  current().tanh_n(in, out, n);
}

int euler_integrate(const float* theta, int hidden, int steps, float strength,
                    bool inverse, float* x, float* y, float* z, std::size_t n) {
  if (steps < 1) throw ValidationError("euler_integrate: steps must be >= 1");
  if (strength == 0.0f || n == 0) return -1;
  const Ops& ops = current();
  const float dt = strength / float(steps);

  // fixed-size chunks keep the velocity scratch in cache; per-point results
  // do not depend on the chunking
  constexpr std::size_t kChunk = 4096;
  static thread_local float bvx[kChunk], bvy[kChunk], bvz[kChunk];

  for (std::size_t base = 0; base < n; base += kChunk) {
    const std::size_t m = n - base < kChunk ? n - base : kChunk;
    float* cx = x + base;
    float* cy = y + base;
    float* cz = z + base;
    for (int k = 0; k < steps; ++k) {
      float tk = inverse ? strength - float(k) * dt : float(k) * dt;
      ops.forward(theta, hidden, cx, cy, cz, &tk, true, m, bvx, bvy, bvz);
      if (inverse) {
        for (std::size_t i = 0; i < m; ++i) {
          cx[i] -= dt * bvx[i];
          cy[i] -= dt * bvy[i];
          cz[i] -= dt * bvz[i];
        }
      } else {
        for (std::size_t i = 0; i < m; ++i) {
          cx[i] += dt * bvx[i];
          cy[i] += dt * bvy[i];
          cz[i] += dt * bvz[i];
        }
      }
      bool finite = true;
      for (std::size_t i = 0; i < m; ++i)
        finite = finite && std::isfinite(cx[i]) && std::isfinite(cy[i]) &&
                 std::isfinite(cz[i]);
      if (!finite) return k;
    }
  }
  return -1;
}

}  // namespace colorflow::kernels

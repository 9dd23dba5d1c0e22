#pragma once

#include <cstddef>

namespace colorflow::kernels {

struct Ops {
  void (*forward)(const float* theta, int hidden, const float* x,
                  const float* y, const float* z, const float* t, bool shared_t,
                  std::size_t n, float* vx, float* vy, float* vz);
  double (*loss_grad)(const float* theta, int hidden, const float* x,
                      const float* y, const float* z, const float* t,
                      const float* tx, const float* ty, const float* tz,
                      std::size_t n, float* grad);
  void (*tanh_n)(const float* in, float* out, std::size_t n);
};

extern const Ops scalar_ops;
#if defined(COLORFLOW_HAVE_AVX2)
extern const Ops avx2_ops;
#endif

}  // namespace colorflow::kernels

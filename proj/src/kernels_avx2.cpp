#if defined(COLORFLOW_HAVE_AVX2)

#include <immintrin.h>

#include <cstring>

#include "colorflow/kernels.hpp"
#include "kernels_internal.hpp"

// AVX2+FMA kernels, 8 points per lane group. All point math is vertical
// (lane-independent); reductions only happen in the gradient accumulators,
// whose summation order is fixed by the loop structure.

namespace colorflow::kernels {
namespace {

// cephes-style expf, |rel err| ~1 ulp over the clamped range
inline __m256 exp256(__m256 x) {
  const __m256 one = _mm256_set1_ps(1.0f);
  x = _mm256_min_ps(x, _mm256_set1_ps(88.3762626647949f));
  x = _mm256_max_ps(x, _mm256_set1_ps(-88.3762626647949f));

  __m256 fx = _mm256_fmadd_ps(x, _mm256_set1_ps(1.44269504088896341f),
                              _mm256_set1_ps(0.5f));
  __m256 flr = _mm256_floor_ps(fx);
  __m256 mask = _mm256_and_ps(_mm256_cmp_ps(flr, fx, _CMP_GT_OS), one);
  fx = _mm256_sub_ps(flr, mask);

  x = _mm256_fnmadd_ps(fx, _mm256_set1_ps(0.693359375f), x);
  x = _mm256_fnmadd_ps(fx, _mm256_set1_ps(-2.12194440e-4f), x);

  __m256 z = _mm256_mul_ps(x, x);
  __m256 y = _mm256_set1_ps(1.9875691500e-4f);
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.3981999507e-3f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(8.3334519073e-3f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(4.1665795894e-2f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.6666665459e-1f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(5.0000001201e-1f));
  y = _mm256_fmadd_ps(y, z, x);
  y = _mm256_add_ps(y, one);

  __m256i imm = _mm256_cvttps_epi32(fx);
  imm = _mm256_add_epi32(imm, _mm256_set1_epi32(0x7f));
  imm = _mm256_slli_epi32(imm, 23);
  return _mm256_mul_ps(y, _mm256_castsi256_ps(imm));
}

inline __m256 tanh256(__m256 x) {
  const __m256 cap = _mm256_set1_ps(9.0f);
  const __m256 one = _mm256_set1_ps(1.0f);
  x = _mm256_max_ps(_mm256_min_ps(x, cap), _mm256_sub_ps(_mm256_setzero_ps(), cap));
  __m256 e = exp256(_mm256_add_ps(x, x));
  return _mm256_div_ps(_mm256_sub_ps(e, one), _mm256_add_ps(e, one));
}

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 sh = _mm_movehl_ps(lo, lo);
  lo = _mm_add_ps(lo, sh);
  sh = _mm_shuffle_ps(lo, lo, 0x1);
  lo = _mm_add_ss(lo, sh);
  return _mm_cvtss_f32(lo);
}

inline void forward_octet(const float* theta, int hidden, const ThetaLayout& L,
                          __m256 X, __m256 Y, __m256 Z, __m256 T, __m256& VX,
                          __m256& VY, __m256& VZ) {
  const float* w1 = theta;
  const float* b1 = theta + L.b1();
  const float* w2x = theta + L.w2(0);
  const float* w2y = theta + L.w2(1);
  const float* w2z = theta + L.w2(2);
  __m256 ax = _mm256_broadcast_ss(theta + L.b2() + 0);
  __m256 ay = _mm256_broadcast_ss(theta + L.b2() + 1);
  __m256 az = _mm256_broadcast_ss(theta + L.b2() + 2);
  for (int j = 0; j < hidden; ++j) {
    const float* w = w1 + 4 * j;
    __m256 pre = _mm256_broadcast_ss(b1 + j);
    pre = _mm256_fmadd_ps(_mm256_broadcast_ss(w + 0), X, pre);
    pre = _mm256_fmadd_ps(_mm256_broadcast_ss(w + 1), Y, pre);
    pre = _mm256_fmadd_ps(_mm256_broadcast_ss(w + 2), Z, pre);
    pre = _mm256_fmadd_ps(_mm256_broadcast_ss(w + 3), T, pre);
    __m256 h = tanh256(pre);
    ax = _mm256_fmadd_ps(_mm256_broadcast_ss(w2x + j), h, ax);
    ay = _mm256_fmadd_ps(_mm256_broadcast_ss(w2y + j), h, ay);
    az = _mm256_fmadd_ps(_mm256_broadcast_ss(w2z + j), h, az);
  }
  VX = ax;
  VY = ay;
  VZ = az;
}

void forward_avx2(const float* theta, int hidden, const float* x,
                  const float* y, const float* z, const float* t, bool shared_t,
                  std::size_t n, float* vx, float* vy, float* vz) {
  const ThetaLayout L{hidden};
  const __m256 tshared = _mm256_broadcast_ss(t);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 X = _mm256_loadu_ps(x + i);
    __m256 Y = _mm256_loadu_ps(y + i);
    __m256 Z = _mm256_loadu_ps(z + i);
    __m256 T = shared_t ? tshared : _mm256_loadu_ps(t + i);
    __m256 VX, VY, VZ;
    forward_octet(theta, hidden, L, X, Y, Z, T, VX, VY, VZ);
    _mm256_storeu_ps(vx + i, VX);
    _mm256_storeu_ps(vy + i, VY);
    _mm256_storeu_ps(vz + i, VZ);
  }
  if (i < n) {
    // tail goes through the same lane code so a point's value never depends
    // on where it lands in a batch
    alignas(32) float bx[8] = {0}, by[8] = {0}, bz[8] = {0}, bt[8] = {0};
    alignas(32) float ox[8], oy[8], oz[8];
    std::size_t m = n - i;
    std::memcpy(bx, x + i, m * sizeof(float));
    std::memcpy(by, y + i, m * sizeof(float));
    std::memcpy(bz, z + i, m * sizeof(float));
    if (!shared_t) std::memcpy(bt, t + i, m * sizeof(float));
    __m256 T = shared_t ? tshared : _mm256_load_ps(bt);
    __m256 VX, VY, VZ;
    forward_octet(theta, hidden, L, _mm256_load_ps(bx), _mm256_load_ps(by),
                  _mm256_load_ps(bz), T, VX, VY, VZ);
    _mm256_store_ps(ox, VX);
    _mm256_store_ps(oy, VY);
    _mm256_store_ps(oz, VZ);
    std::memcpy(vx + i, ox, m * sizeof(float));
    std::memcpy(vy + i, oy, m * sizeof(float));
    std::memcpy(vz + i, oz, m * sizeof(float));
  }
}

// Gradient blocks: 64-point macro-blocks, forward residuals in phase A,
// per-hidden-unit accumulation with activation recompute in phase B. The
// recompute avoids streaming an H x 64 activation buffer through L2.
constexpr std::size_t kBlock = 64;

double loss_grad_avx2(const float* theta, int hidden, const float* x,
                      const float* y, const float* z, const float* t,
                      const float* tx, const float* ty, const float* tz,
                      std::size_t n, float* grad) {
  const ThetaLayout L{hidden};
  const float* w1 = theta;
  const float* b1 = theta + L.b1();
  const float* w2x = theta + L.w2(0);
  const float* w2y = theta + L.w2(1);
  const float* w2z = theta + L.w2(2);

  std::memset(grad, 0, param_count(hidden) * sizeof(float));
  float* gw1 = grad;
  float* gb1 = grad + L.b1();
  float* gw2x = grad + L.w2(0);
  float* gw2y = grad + L.w2(1);
  float* gw2z = grad + L.w2(2);
  float* gb2 = grad + L.b2();

  const float inv_n = 1.0f / float(n);
  const __m256 scale = _mm256_set1_ps(2.0f * inv_n);
  const __m256 one = _mm256_set1_ps(1.0f);

  alignas(32) float bx[kBlock], by[kBlock], bz[kBlock], bt[kBlock];
  alignas(32) float rx[kBlock], ry[kBlock], rz[kBlock];
  alignas(32) float mk[kBlock];

  __m256 gb2x = _mm256_setzero_ps();
  __m256 gb2y = _mm256_setzero_ps();
  __m256 gb2z = _mm256_setzero_ps();
  double loss = 0.0;

  for (std::size_t base = 0; base < n; base += kBlock) {
    const std::size_t m = n - base < kBlock ? n - base : kBlock;
    const std::size_t octets = (m + 7) / 8;
    std::memset(bx, 0, sizeof(bx));
    std::memset(by, 0, sizeof(by));
    std::memset(bz, 0, sizeof(bz));
    std::memset(bt, 0, sizeof(bt));
    std::memcpy(bx, x + base, m * sizeof(float));
    std::memcpy(by, y + base, m * sizeof(float));
    std::memcpy(bz, z + base, m * sizeof(float));
    std::memcpy(bt, t + base, m * sizeof(float));
    for (std::size_t i = 0; i < kBlock; ++i) mk[i] = i < m ? 1.0f : 0.0f;

    // phase A: residuals
    __m256 lossv = _mm256_setzero_ps();
    for (std::size_t o = 0; o < octets; ++o) {
      __m256 X = _mm256_load_ps(bx + 8 * o);
      __m256 Y = _mm256_load_ps(by + 8 * o);
      __m256 Z = _mm256_load_ps(bz + 8 * o);
      __m256 T = _mm256_load_ps(bt + 8 * o);
      __m256 VX, VY, VZ;
      forward_octet(theta, hidden, L, X, Y, Z, T, VX, VY, VZ);

      alignas(32) float tgt[8] = {0};
      const std::size_t valid = (m - 8 * o) < 8 ? (m - 8 * o) : 8;
      std::memcpy(tgt, tx + base + 8 * o, valid * sizeof(float));
      __m256 EX = _mm256_sub_ps(VX, _mm256_load_ps(tgt));
      std::memcpy(tgt, ty + base + 8 * o, valid * sizeof(float));
      __m256 EY = _mm256_sub_ps(VY, _mm256_load_ps(tgt));
      std::memcpy(tgt, tz + base + 8 * o, valid * sizeof(float));
      __m256 EZ = _mm256_sub_ps(VZ, _mm256_load_ps(tgt));

      __m256 M = _mm256_load_ps(mk + 8 * o);
      EX = _mm256_mul_ps(EX, M);
      EY = _mm256_mul_ps(EY, M);
      EZ = _mm256_mul_ps(EZ, M);
      lossv = _mm256_fmadd_ps(EX, EX, lossv);
      lossv = _mm256_fmadd_ps(EY, EY, lossv);
      lossv = _mm256_fmadd_ps(EZ, EZ, lossv);

      __m256 RX = _mm256_mul_ps(EX, scale);
      __m256 RY = _mm256_mul_ps(EY, scale);
      __m256 RZ = _mm256_mul_ps(EZ, scale);
      _mm256_store_ps(rx + 8 * o, RX);
      _mm256_store_ps(ry + 8 * o, RY);
      _mm256_store_ps(rz + 8 * o, RZ);
      gb2x = _mm256_add_ps(gb2x, RX);
      gb2y = _mm256_add_ps(gb2y, RY);
      gb2z = _mm256_add_ps(gb2z, RZ);
    }
    loss += double(hsum(lossv));

    // phase B: per-hidden-unit accumulation
    for (int j = 0; j < hidden; ++j) {
      const float* w = w1 + 4 * j;
      const __m256 W1X = _mm256_broadcast_ss(w + 0);
      const __m256 W1Y = _mm256_broadcast_ss(w + 1);
      const __m256 W1Z = _mm256_broadcast_ss(w + 2);
      const __m256 W1T = _mm256_broadcast_ss(w + 3);
      const __m256 B1 = _mm256_broadcast_ss(b1 + j);
      const __m256 W2X = _mm256_broadcast_ss(w2x + j);
      const __m256 W2Y = _mm256_broadcast_ss(w2y + j);
      const __m256 W2Z = _mm256_broadcast_ss(w2z + j);
      __m256 aw1x = _mm256_setzero_ps(), aw1y = _mm256_setzero_ps();
      __m256 aw1z = _mm256_setzero_ps(), aw1t = _mm256_setzero_ps();
      __m256 ab1 = _mm256_setzero_ps();
      __m256 aw2x = _mm256_setzero_ps(), aw2y = _mm256_setzero_ps();
      __m256 aw2z = _mm256_setzero_ps();
      for (std::size_t o = 0; o < octets; ++o) {
        __m256 X = _mm256_load_ps(bx + 8 * o);
        __m256 Y = _mm256_load_ps(by + 8 * o);
        __m256 Z = _mm256_load_ps(bz + 8 * o);
        __m256 T = _mm256_load_ps(bt + 8 * o);
        __m256 pre = B1;
        pre = _mm256_fmadd_ps(W1X, X, pre);
        pre = _mm256_fmadd_ps(W1Y, Y, pre);
        pre = _mm256_fmadd_ps(W1Z, Z, pre);
        pre = _mm256_fmadd_ps(W1T, T, pre);
        __m256 h = tanh256(pre);
        __m256 RX = _mm256_load_ps(rx + 8 * o);
        __m256 RY = _mm256_load_ps(ry + 8 * o);
        __m256 RZ = _mm256_load_ps(rz + 8 * o);
        aw2x = _mm256_fmadd_ps(RX, h, aw2x);
        aw2y = _mm256_fmadd_ps(RY, h, aw2y);
        aw2z = _mm256_fmadd_ps(RZ, h, aw2z);
        __m256 dh = _mm256_mul_ps(RX, W2X);
        dh = _mm256_fmadd_ps(RY, W2Y, dh);
        dh = _mm256_fmadd_ps(RZ, W2Z, dh);
        __m256 dpre = _mm256_mul_ps(dh, _mm256_fnmadd_ps(h, h, one));
        ab1 = _mm256_add_ps(ab1, dpre);
        aw1x = _mm256_fmadd_ps(dpre, X, aw1x);
        aw1y = _mm256_fmadd_ps(dpre, Y, aw1y);
        aw1z = _mm256_fmadd_ps(dpre, Z, aw1z);
        aw1t = _mm256_fmadd_ps(dpre, T, aw1t);
      }
      float* gw = gw1 + 4 * j;
      gw[0] += hsum(aw1x);
      gw[1] += hsum(aw1y);
      gw[2] += hsum(aw1z);
      gw[3] += hsum(aw1t);
      gb1[j] += hsum(ab1);
      gw2x[j] += hsum(aw2x);
      gw2y[j] += hsum(aw2y);
      gw2z[j] += hsum(aw2z);
    }
  }

  gb2[0] = hsum(gb2x);
  gb2[1] = hsum(gb2y);
  gb2[2] = hsum(gb2z);
  return loss * double(inv_n);
}

void tanh_avx2(const float* in, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, tanh256(_mm256_loadu_ps(in + i)));
  if (i < n) {
    alignas(32) float buf[8] = {0};
    std::memcpy(buf, in + i, (n - i) * sizeof(float));
    _mm256_store_ps(buf, tanh256(_mm256_load_ps(buf)));
    std::memcpy(out + i, buf, (n - i) * sizeof(float));
  }
}

}  // namespace

const Ops avx2_ops = {forward_avx2, loss_grad_avx2, tanh_avx2};

}  // namespace colorflow::kernels

#endif  // COLORFLOW_HAVE_AVX2

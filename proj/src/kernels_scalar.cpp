#include <cmath>
#include <cstring>
#include <vector>

#include "colorflow/kernels.hpp"
#include "kernels_internal.hpp"

// Reference kernels. Plain loops, std::tanh, no FMA contraction expected from
// the base TU. These define the semantics the vector variants are tested
// against.

namespace colorflow::kernels {
namespace {

void forward_scalar(const float* theta, int hidden, const float* x,
                    const float* y, const float* z, const float* t,
                    bool shared_t, std::size_t n, float* vx, float* vy,
                    float* vz) {
  const ThetaLayout L{hidden};
  const float* w1 = theta;
  const float* b1 = theta + L.b1();
  const float* w2x = theta + L.w2(0);
  const float* w2y = theta + L.w2(1);
  const float* w2z = theta + L.w2(2);
  const float bx = theta[L.b2() + 0];
  const float by = theta[L.b2() + 1];
  const float bz = theta[L.b2() + 2];
  for (std::size_t i = 0; i < n; ++i) {
    const float xi = x[i], yi = y[i], zi = z[i];
    const float ti = shared_t ? t[0] : t[i];
    float ax = bx, ay = by, az = bz;
    for (int j = 0; j < hidden; ++j) {
      const float* w = w1 + 4 * j;
      float pre = w[0] * xi + w[1] * yi + w[2] * zi + w[3] * ti + b1[j];
      float h = std::tanh(pre);
      ax += w2x[j] * h;
      ay += w2y[j] * h;
      az += w2z[j] * h;
    }
    vx[i] = ax;
    vy[i] = ay;
    vz[i] = az;
  }
}

double loss_grad_scalar(const float* theta, int hidden, const float* x,
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

  std::vector<float> h(static_cast<std::size_t>(hidden));
  const float inv_n = 1.0f / float(n);
  double loss = 0.0;

  for (std::size_t i = 0; i < n; ++i) {
    const float xi = x[i], yi = y[i], zi = z[i], ti = t[i];
    float ax = theta[L.b2() + 0];
    float ay = theta[L.b2() + 1];
    float az = theta[L.b2() + 2];
    for (int j = 0; j < hidden; ++j) {
      const float* w = w1 + 4 * j;
      float pre = w[0] * xi + w[1] * yi + w[2] * zi + w[3] * ti + b1[j];
      float hj = std::tanh(pre);
      h[std::size_t(j)] = hj;
      ax += w2x[j] * hj;
      ay += w2y[j] * hj;
      az += w2z[j] * hj;
    }
    const float ex = ax - tx[i], ey = ay - ty[i], ez = az - tz[i];
    loss += double(ex) * ex + double(ey) * ey + double(ez) * ez;
    // d loss / d v
    const float rx = 2.0f * inv_n * ex;
    const float ry = 2.0f * inv_n * ey;
    const float rz = 2.0f * inv_n * ez;
    gb2[0] += rx;
    gb2[1] += ry;
    gb2[2] += rz;
    for (int j = 0; j < hidden; ++j) {
      const float hj = h[std::size_t(j)];
      gw2x[j] += rx * hj;
      gw2y[j] += ry * hj;
      gw2z[j] += rz * hj;
      float dh = w2x[j] * rx + w2y[j] * ry + w2z[j] * rz;
      float dpre = dh * (1.0f - hj * hj);
      gb1[j] += dpre;
      float* gw = gw1 + 4 * j;
      gw[0] += dpre * xi;
      gw[1] += dpre * yi;
      gw[2] += dpre * zi;
      gw[3] += dpre * ti;
    }
  }
  return loss * inv_n;
}

void tanh_scalar(const float* in, float* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(in[i]);
}

}  // namespace

const Ops scalar_ops = {forward_scalar, loss_grad_scalar, tanh_scalar};

}  // namespace colorflow::kernels

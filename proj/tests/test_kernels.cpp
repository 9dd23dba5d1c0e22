#include <doctest.h>

#include <cmath>
#include <vector>

#include "colorflow/kernels.hpp"
#include "testutil.hpp"

using namespace colorflow;
namespace k = colorflow::kernels;

namespace {

std::vector<float> random_theta(int hidden, std::uint64_t seed, float scale = 0.5f) {
  Rng rng(seed);
  std::vector<float> theta(k::param_count(hidden));
  for (auto& v : theta) v = (2.0f * rng.uniform_f() - 1.0f) * scale;
  return theta;
}

struct Points {
  std::vector<float> x, y, z, t;
};

Points random_points(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Points p;
  p.x.resize(n);
  p.y.resize(n);
  p.z.resize(n);
  p.t.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    p.x[i] = rng.uniform_f();
    p.y[i] = rng.uniform_f();
    p.z[i] = rng.uniform_f();
    p.t[i] = rng.uniform_f();
  }
  return p;
}

struct BackendGuard {
  BackendGuard(k::Backend b) { k::set_backend(b); }
  ~BackendGuard() { k::set_backend(k::Backend::Auto); }
};

}  // namespace

TEST_CASE("tanh: vector variant matches std::tanh") {
  if (!k::avx2_supported()) return;
  std::vector<float> in;
  for (float v = -20.0f; v <= 20.0f; v += 0.0137f) in.push_back(v);
  in.push_back(0.0f);
  in.push_back(-0.0f);
  in.push_back(88.0f);
  in.push_back(-88.0f);
  std::vector<float> ref(in.size()), vec(in.size());
  {
    BackendGuard g(k::Backend::Scalar);
    k::tanh_n(in.data(), ref.data(), in.size());
  }
  {
    BackendGuard g(k::Backend::Avx2);
    k::tanh_n(in.data(), vec.data(), in.size());
  }
  for (std::size_t i = 0; i < in.size(); ++i)
    CHECK(std::abs(vec[i] - ref[i]) <= 1e-6f);
}

TEST_CASE("forward: scalar and avx2 agree across sizes and widths") {
  if (!k::avx2_supported()) return;
  for (int hidden : {1, 5, 64, 256}) {
    const auto theta = random_theta(hidden, 11 + std::uint64_t(hidden));
    for (std::size_t n : {std::size_t(1), std::size_t(7), std::size_t(8),
                          std::size_t(9), std::size_t(64), std::size_t(101)}) {
      const auto p = random_points(n, 1000 + n);
      std::vector<float> sx(n), sy(n), sz(n), ax(n), ay(n), az(n);
      {
        BackendGuard g(k::Backend::Scalar);
        k::mlp_forward(theta.data(), hidden, p.x.data(), p.y.data(), p.z.data(),
                       p.t.data(), false, n, sx.data(), sy.data(), sz.data());
      }
      {
        BackendGuard g(k::Backend::Avx2);
        k::mlp_forward(theta.data(), hidden, p.x.data(), p.y.data(), p.z.data(),
                       p.t.data(), false, n, ax.data(), ay.data(), az.data());
      }
      for (std::size_t i = 0; i < n; ++i) {
        const float tol = 1e-5f * float(std::max(1, hidden / 16));
        CHECK(std::abs(sx[i] - ax[i]) <= tol);
        CHECK(std::abs(sy[i] - ay[i]) <= tol);
        CHECK(std::abs(sz[i] - az[i]) <= tol);
      }
    }
  }
}

TEST_CASE("forward: matches the double-precision matrix oracle") {
  const int hidden = 64;
  const auto theta = random_theta(hidden, 99);
  const auto p = random_points(32, 5);
  std::vector<float> vx(32), vy(32), vz(32);
  k::mlp_forward(theta.data(), hidden, p.x.data(), p.y.data(), p.z.data(),
                 p.t.data(), false, 32, vx.data(), vy.data(), vz.data());
  for (std::size_t i = 0; i < 32; ++i) {
    const auto ref = testutil::mlp_ref_velocity(theta, hidden, p.x[i], p.y[i],
                                                p.z[i], p.t[i]);
    CHECK(std::abs(double(vx[i]) - ref[0]) <= 1e-6);
    CHECK(std::abs(double(vy[i]) - ref[1]) <= 1e-6);
    CHECK(std::abs(double(vz[i]) - ref[2]) <= 1e-6);
  }
}

TEST_CASE("forward: a point's value does not depend on its batch position") {
  const int hidden = 32;
  const auto theta = random_theta(hidden, 3);
  const auto p = random_points(37, 8);
  std::vector<float> full_x(37), full_y(37), full_z(37);
  k::mlp_forward(theta.data(), hidden, p.x.data(), p.y.data(), p.z.data(),
                 p.t.data(), false, 37, full_x.data(), full_y.data(), full_z.data());
  // re-evaluate each point alone; must be bit-identical to the batch result
  for (std::size_t i = 0; i < 37; ++i) {
    float vx, vy, vz;
    k::mlp_forward(theta.data(), hidden, &p.x[i], &p.y[i], &p.z[i], &p.t[i], false,
                   1, &vx, &vy, &vz);
    CHECK(vx == full_x[i]);
    CHECK(vy == full_y[i]);
    CHECK(vz == full_z[i]);
  }
}

TEST_CASE("loss_grad: scalar and avx2 agree") {
  if (!k::avx2_supported()) return;
  for (int hidden : {3, 64}) {
    const auto theta = random_theta(hidden, 21);
    for (std::size_t n : {std::size_t(1), std::size_t(63), std::size_t(64),
                          std::size_t(200)}) {
      const auto p = random_points(n, 70 + n);
      const auto tgt = random_points(n, 170 + n);
      std::vector<float> gs(k::param_count(hidden)), ga(k::param_count(hidden));
      double ls, la;
      {
        BackendGuard g(k::Backend::Scalar);
        ls = k::mlp_loss_grad(theta.data(), hidden, p.x.data(), p.y.data(),
                              p.z.data(), p.t.data(), tgt.x.data(), tgt.y.data(),
                              tgt.z.data(), n, gs.data());
      }
      {
        BackendGuard g(k::Backend::Avx2);
        la = k::mlp_loss_grad(theta.data(), hidden, p.x.data(), p.y.data(),
                              p.z.data(), p.t.data(), tgt.x.data(), tgt.y.data(),
                              tgt.z.data(), n, ga.data());
      }
      CHECK(std::abs(ls - la) <= 1e-5 * (1.0 + std::abs(ls)));
      double num = 0, den = 0;
      for (std::size_t i = 0; i < gs.size(); ++i) {
        num += (double(gs[i]) - ga[i]) * (double(gs[i]) - ga[i]);
        den += double(gs[i]) * gs[i];
      }
      CHECK(std::sqrt(num) <= 1e-4 * (1e-12 + std::sqrt(den)));
    }
  }
}

TEST_CASE("loss_grad: gradient matches central finite differences") {
  for (std::uint64_t inst = 0; inst < 20; ++inst) {
    const int hidden = inst % 2 == 0 ? 4 : 16;
    const auto theta = random_theta(hidden, 300 + inst);
    const std::size_t n = 24;
    const auto p = random_points(n, 400 + inst);
    const auto tgt = random_points(n, 500 + inst);

    std::vector<float> grad(k::param_count(hidden));
    k::mlp_loss_grad(theta.data(), hidden, p.x.data(), p.y.data(), p.z.data(),
                     p.t.data(), tgt.x.data(), tgt.y.data(), tgt.z.data(), n,
                     grad.data());

    testutil::RefBatch rb;
    for (std::size_t i = 0; i < n; ++i) {
      rb.x.push_back(p.x[i]);
      rb.y.push_back(p.y[i]);
      rb.z.push_back(p.z[i]);
      rb.t.push_back(p.t[i]);
      rb.tx.push_back(tgt.x[i]);
      rb.ty.push_back(tgt.y[i]);
      rb.tz.push_back(tgt.z[i]);
    }
    const auto fd = testutil::mlp_ref_fd_grad(theta, hidden, rb);
    double num = 0, den = 0;
    for (std::size_t i = 0; i < fd.size(); ++i) {
      num += (grad[i] - fd[i]) * (grad[i] - fd[i]);
      den += fd[i] * fd[i];
    }
    CHECK(std::sqrt(num) <= 1e-3 * std::sqrt(den));
  }
}

TEST_CASE("euler_integrate: zero field is the identity") {
  const int hidden = 8;
  std::vector<float> theta(k::param_count(hidden), 0.0f);
  auto p = random_points(100, 7);
  const auto orig = p;
  const int bad = k::euler_integrate(theta.data(), hidden, 16, 1.0f, false,
                                     p.x.data(), p.y.data(), p.z.data(), 100);
  CHECK(bad == -1);
  CHECK(p.x == orig.x);
  CHECK(p.y == orig.y);
  CHECK(p.z == orig.z);
}

TEST_CASE("euler_integrate: exact on constant fields, any step count") {
  const int hidden = 8;
  const k::ThetaLayout L{hidden};
  std::vector<float> theta(k::param_count(hidden), 0.0f);
  theta[L.b2() + 0] = 0.125f;
  theta[L.b2() + 1] = -0.25f;
  theta[L.b2() + 2] = 0.0625f;
  for (int steps : {1, 3, 8, 32}) {
    auto p = random_points(33, 9);
    const auto orig = p;
    k::euler_integrate(theta.data(), hidden, steps, 1.0f, false, p.x.data(),
                       p.y.data(), p.z.data(), 33);
    for (std::size_t i = 0; i < 33; ++i) {
      CHECK(p.x[i] == doctest::Approx(orig.x[i] + 0.125f).epsilon(1e-6));
      CHECK(p.y[i] == doctest::Approx(orig.y[i] - 0.25f).epsilon(1e-6));
      CHECK(p.z[i] == doctest::Approx(orig.z[i] + 0.0625f).epsilon(1e-6));
    }
  }
}

TEST_CASE("euler_integrate: results independent of batch splitting") {
  const auto& flow = testutil::shared_trained_flow();
  auto p = random_points(5000, 31);  // crosses the internal chunk boundary
  auto whole = p;
  k::euler_integrate(flow.theta.data(), flow.arch.hidden, 8, 1.0f, false,
                     whole.x.data(), whole.y.data(), whole.z.data(), 5000);
  auto split = p;
  k::euler_integrate(flow.theta.data(), flow.arch.hidden, 8, 1.0f, false,
                     split.x.data(), split.y.data(), split.z.data(), 1234);
  k::euler_integrate(flow.theta.data(), flow.arch.hidden, 8, 1.0f, false,
                     split.x.data() + 1234, split.y.data() + 1234,
                     split.z.data() + 1234, 5000 - 1234);
  CHECK(whole.x == split.x);
  CHECK(whole.y == split.y);
  CHECK(whole.z == split.z);
}

TEST_CASE("backend dispatch reports and switches") {
  CHECK(k::active_backend() != k::Backend::Auto);
  if (k::avx2_supported()) {
    BackendGuard g(k::Backend::Scalar);
    CHECK(k::active_backend() == k::Backend::Scalar);
    CHECK(std::string(k::backend_name()) == "scalar");
  }
}

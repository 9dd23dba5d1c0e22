#include "colorflow/flow.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>

#include "colorflow/errors.hpp"
#include "colorflow/rng.hpp"

namespace colorflow {

FlowWeights init_flow(FlowArch arch, std::uint64_t seed) {
  if (arch.hidden < 1) throw ValidationError("init_flow: hidden must be >= 1");
  FlowWeights w;
  w.arch = arch;
  w.theta.assign(arch.param_count(), 0.0f);
  Rng rng(seed);
  const kernels::ThetaLayout L{arch.hidden};
  const float s1 = 1.0f / std::sqrt(float(FlowArch::input_dim));
  const float s2 = 1.0f / std::sqrt(float(arch.hidden));
  for (std::size_t i = 0; i < L.b1(); ++i)
    w.theta[i] = (2.0f * rng.uniform_f() - 1.0f) * s1;
  for (std::size_t i = L.w2(0); i < L.b2(); ++i)
    w.theta[i] = (2.0f * rng.uniform_f() - 1.0f) * s2;
  return w;
}

std::array<float, 3> velocity(const FlowWeights& w, std::array<float, 3> x, float t) {
  std::array<float, 3> v;
  float vx, vy, vz;
  kernels::mlp_forward(w.theta.data(), w.arch.hidden, &x[0], &x[1], &x[2], &t,
                       false, 1, &vx, &vy, &vz);
  v = {vx, vy, vz};
  return v;
}

double flow_loss_grad(const FlowWeights& w, const FlowBatch& batch,
                      std::span<float> grad) {
  const std::size_t n = batch.size();
  if (n == 0) throw ValidationError("flow_loss_grad: empty batch");
  if (batch.y.size() != n || batch.z.size() != n || batch.t.size() != n ||
      batch.tx.size() != n || batch.ty.size() != n || batch.tz.size() != n)
    throw ValidationError("flow_loss_grad: batch spans disagree on length");
  if (grad.size() != w.arch.param_count())
    throw ValidationError("flow_loss_grad: grad length mismatch");
  return kernels::mlp_loss_grad(w.theta.data(), w.arch.hidden, batch.x.data(),
                                batch.y.data(), batch.z.data(), batch.t.data(),
                                batch.tx.data(), batch.ty.data(), batch.tz.data(),
                                n, grad.data());
}

template <typename T>
void adam_step(AdamState<T>& st, std::span<T> w, std::span<const T> grad) {
  if (w.size() != st.m.size() || grad.size() != st.m.size())
    throw ValidationError("adam_step: dimension mismatch");
  st.step += 1;
  const T c1 = T(1) - T(std::pow(double(st.beta1), double(st.step)));
  const T c2 = T(1) - T(std::pow(double(st.beta2), double(st.step)));
  for (std::size_t i = 0; i < w.size(); ++i) {
    const T g = grad[i];
    st.m[i] = st.beta1 * st.m[i] + (T(1) - st.beta1) * g;
    st.v[i] = st.beta2 * st.v[i] + (T(1) - st.beta2) * g * g;
    const T mh = st.m[i] / c1;
    const T vh = st.v[i] / c2;
    w[i] -= st.lr * mh / (std::sqrt(vh) + st.eps);
  }
}

template void adam_step<float>(AdamState<float>&, std::span<float>,
                               std::span<const float>);
template void adam_step<double>(AdamState<double>&, std::span<double>,
                                std::span<const double>);

FlowWeights train_flow(const PixelCloud& cloud, FlowArch arch,
                       const FlowTrainParams& params) {
  if (cloud.empty()) throw ValidationError("train_flow: empty cloud");
  if (params.iters < 1 || params.batch < 1)
    throw ValidationError("train_flow: iters and batch must be >= 1");

  FlowWeights w = init_flow(arch, seed_mix(params.seed, 0x666c6f77));
  AdamState<float> adam(w.theta.size(), params.lr);
  std::vector<float> grad(w.theta.size());

  const std::size_t n = cloud.size();
  const std::size_t batch = std::size_t(params.batch);
  std::vector<float> bx(batch), by(batch), bz(batch), bt(batch);
  std::vector<float> gx(batch), gy(batch), gz(batch);

  double last_loss = 0.0;
  for (int it = 0; it < params.iters; ++it) {
    Rng rng(seed_mix(params.seed, std::uint64_t(it)));
    for (std::size_t i = 0; i < batch; ++i) {
      const std::size_t k = rng.below(n);
      const float xr = cloud.r[k], xg = cloud.g[k], xb = cloud.b[k];
      const float ur = rng.uniform_f();
      const float ug = rng.uniform_f();
      const float ub = rng.uniform_f();
      const float t = rng.uniform_f();
      bx[i] = t * ur + (1.0f - t) * xr;
      by[i] = t * ug + (1.0f - t) * xg;
      bz[i] = t * ub + (1.0f - t) * xb;
      bt[i] = t;
      gx[i] = ur - xr;
      gy[i] = ug - xg;
      gz[i] = ub - xb;
    }
    last_loss = kernels::mlp_loss_grad(w.theta.data(), arch.hidden, bx.data(),
                                       by.data(), bz.data(), bt.data(), gx.data(),
                                       gy.data(), gz.data(), batch, grad.data());
    if (!std::isfinite(last_loss) || last_loss > 1e6)
      throw NumericError("train_flow: diverged at iteration " + std::to_string(it) +
                         " (loss=" + std::to_string(last_loss) + ")");
    adam_step<float>(adam, w.theta, grad);
  }

  w.meta.iterations = std::uint64_t(params.iters);
  w.meta.final_loss = float(last_loss);
  w.meta.source_id = cloud.source_id;
  return w;
}

void integrate_inplace(const FlowWeights& w, float* x, float* y, float* z,
                       std::size_t n, int steps, float strength, Direction dir) {
  if (steps < 1) throw ValidationError("integrate: steps must be >= 1");
  if (strength < 0.0f || strength > 1.0f)
    throw ValidationError("integrate: strength must be in [0,1]");
  int bad = kernels::euler_integrate(w.theta.data(), w.arch.hidden, steps, strength,
                                     dir == Direction::Inverse, x, y, z, n);
  if (bad >= 0)
    throw NumericError("integrate: non-finite state at step " + std::to_string(bad));
}

PixelCloud integrate(const FlowWeights& w, const PixelCloud& points, int steps,
                     float strength, Direction dir) {
  PixelCloud out = points;
  integrate_inplace(w, out.r.data(), out.g.data(), out.b.data(), out.size(),
                    steps, strength, dir);
  return out;
}

// ---------------------------------------------------------------------------
// MODF weight file

namespace {

constexpr char kMagic[4] = {'M', 'O', 'D', 'F'};
constexpr std::uint32_t kVersion = 1;

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void put_u32(std::FILE* f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                        static_cast<unsigned char>((v >> 8) & 0xFF),
                        static_cast<unsigned char>((v >> 16) & 0xFF),
                        static_cast<unsigned char>((v >> 24) & 0xFF)};
  if (std::fwrite(b, 1, 4, f) != 4) throw IoError("write failed");
}

std::uint32_t get_u32(std::FILE* f) {
  unsigned char b[4];
  if (std::fread(b, 1, 4, f) != 4) throw IoError("unexpected end of file");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
         (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

void put_f32(std::FILE* f, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(f, bits);
}

float get_f32(std::FILE* f) {
  std::uint32_t bits = get_u32(f);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

std::string meta_to_text(const FlowMeta& meta) {
  char buf[64];
  std::string s;
  std::snprintf(buf, sizeof(buf), "iterations=%" PRIu64 "\n", meta.iterations);
  s += buf;
  std::snprintf(buf, sizeof(buf), "final_loss=%a\n", double(meta.final_loss));
  s += buf;
  s += "source_id=" + meta.source_id + "\n";
  return s;
}

FlowMeta meta_from_text(const std::string& text) {
  FlowMeta meta;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    if (key == "iterations")
      meta.iterations = std::strtoull(val.c_str(), nullptr, 10);
    else if (key == "final_loss")
      meta.final_loss = std::strtof(val.c_str(), nullptr);
    else if (key == "source_id")
      meta.source_id = val;
  }
  return meta;
}

}  // namespace

void save_flow(const FlowWeights& w, const std::string& path) {
  if (w.theta.size() != w.arch.param_count())
    throw ValidationError("save_flow: theta length does not match arch");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot write '" + path + "'");
  if (std::fwrite(kMagic, 1, 4, fp.get()) != 4) throw IoError("write failed");
  put_u32(fp.get(), kVersion);
  put_u32(fp.get(), std::uint32_t(w.arch.hidden));
  put_u32(fp.get(), std::uint32_t(w.theta.size()));
  for (float v : w.theta) put_f32(fp.get(), v);
  const std::string meta = meta_to_text(w.meta);
  put_u32(fp.get(), std::uint32_t(meta.size()));
  if (!meta.empty() &&
      std::fwrite(meta.data(), 1, meta.size(), fp.get()) != meta.size())
    throw IoError("write failed");
  if (std::fflush(fp.get()) != 0) throw IoError("write failed");
}

FlowWeights load_flow(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open '" + path + "'");
  char magic[4];
  if (std::fread(magic, 1, 4, fp.get()) != 4 || std::memcmp(magic, kMagic, 4) != 0)
    throw ValidationError("'" + path + "' is not a MODF flow file");
  const std::uint32_t version = get_u32(fp.get());
  if (version != kVersion)
    throw ValidationError("unsupported MODF version " + std::to_string(version));
  FlowWeights w;
  w.arch.hidden = int(get_u32(fp.get()));
  const std::uint32_t count = get_u32(fp.get());
  if (w.arch.hidden < 1 || count != w.arch.param_count())
    throw ValidationError("MODF parameter count mismatch in '" + path + "'");
  w.theta.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    w.theta[i] = get_f32(fp.get());
    if (!std::isfinite(w.theta[i]))
      throw ValidationError("MODF contains non-finite weights: '" + path + "'");
  }
  const std::uint32_t meta_len = get_u32(fp.get());
  std::string meta(meta_len, '\0');
  if (meta_len > 0 && std::fread(meta.data(), 1, meta_len, fp.get()) != meta_len)
    throw IoError("unexpected end of file in '" + path + "'");
  w.meta = meta_from_text(meta);
  return w;
}

}  // namespace colorflow

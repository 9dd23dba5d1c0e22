#include "colorflow/encoder.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <numeric>

#include "colorflow/errors.hpp"
#include "colorflow/kernels.hpp"
#include "colorflow/parallel.hpp"
#include "colorflow/rng.hpp"

namespace colorflow {
namespace {

// Static shape plan: stage geometry and parameter offsets. Convs are 3x3,
// stride 2, pad 1, so each stage halves the map (rounding up).
struct Plan {
  struct Stage {
    int in_ch, out_ch, in_hw, out_hw;
    std::size_t w, b;  // offsets into params
  };
  std::vector<Stage> stages;
  int feat = 0;      // channels after the last stage
  int feat_hw = 0;   // spatial size after the last stage
  std::size_t head_w = 0, head_b = 0, total = 0;
};

Plan make_plan(const EncoderArch& a) {
  if (a.input_size < 2) throw ValidationError("encoder: input_size must be >= 2");
  if (a.widths.empty()) throw ValidationError("encoder: no conv stages");
  if (a.embed_dim < 1) throw ValidationError("encoder: embed_dim must be >= 1");
  Plan p;
  int ch = 3, hw = a.input_size;
  std::size_t off = 0;
  for (int w : a.widths) {
    if (w < 1) throw ValidationError("encoder: stage width must be >= 1");
    Plan::Stage s;
    s.in_ch = ch;
    s.out_ch = w;
    s.in_hw = hw;
    s.out_hw = (hw + 1) / 2;
    if (s.out_hw < 1) throw ValidationError("encoder: input_size too small for stages");
    s.w = off;
    off += std::size_t(w) * ch * 9;
    s.b = off;
    off += std::size_t(w);
    p.stages.push_back(s);
    ch = w;
    hw = s.out_hw;
  }
  p.feat = ch;
  p.feat_hw = hw;
  p.head_w = off;
  off += std::size_t(a.embed_dim) * ch;
  p.head_b = off;
  off += std::size_t(a.embed_dim);
  p.total = off;
  return p;
}

// one conv+relu stage forward; in/out are CHW
void stage_forward(const Plan::Stage& s, const double* params, const double* in,
                   double* out) {
  const double* W = params + s.w;
  const double* B = params + s.b;
  const int ihw = s.in_hw, ohw = s.out_hw;
  for (int oc = 0; oc < s.out_ch; ++oc) {
    double* omap = out + std::size_t(oc) * ohw * ohw;
    for (int oy = 0; oy < ohw; ++oy) {
      for (int ox = 0; ox < ohw; ++ox) {
        double acc = B[oc];
        for (int ic = 0; ic < s.in_ch; ++ic) {
          const double* imap = in + std::size_t(ic) * ihw * ihw;
          const double* w = W + ((std::size_t(oc) * s.in_ch + ic) * 9);
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = 2 * oy + ky - 1;
            if (iy < 0 || iy >= ihw) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = 2 * ox + kx - 1;
              if (ix < 0 || ix >= ihw) continue;
              acc += w[3 * ky + kx] * imap[std::size_t(iy) * ihw + ix];
            }
          }
        }
        omap[std::size_t(oy) * ohw + ox] = acc > 0.0 ? acc : 0.0;
      }
    }
  }
}

// gradient w.r.t. weights/bias/input for one stage; d_out already relu-masked
void stage_backward(const Plan::Stage& s, const double* params, const double* in,
                    const double* d_out, double* d_params, double* d_in) {
  const double* W = params + s.w;
  double* dW = d_params + s.w;
  double* dB = d_params + s.b;
  const int ihw = s.in_hw, ohw = s.out_hw;
  if (d_in)
    std::memset(d_in, 0, std::size_t(s.in_ch) * ihw * ihw * sizeof(double));
  for (int oc = 0; oc < s.out_ch; ++oc) {
    const double* dmap = d_out + std::size_t(oc) * ohw * ohw;
    for (int oy = 0; oy < ohw; ++oy) {
      for (int ox = 0; ox < ohw; ++ox) {
        const double dz = dmap[std::size_t(oy) * ohw + ox];
        if (dz == 0.0) continue;
        dB[oc] += dz;
        for (int ic = 0; ic < s.in_ch; ++ic) {
          const double* imap = in + std::size_t(ic) * ihw * ihw;
          double* dimap = d_in ? d_in + std::size_t(ic) * ihw * ihw : nullptr;
          const std::size_t wbase = (std::size_t(oc) * s.in_ch + ic) * 9;
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = 2 * oy + ky - 1;
            if (iy < 0 || iy >= ihw) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = 2 * ox + kx - 1;
              if (ix < 0 || ix >= ihw) continue;
              dW[wbase + 3 * ky + kx] += dz * imap[std::size_t(iy) * ihw + ix];
              if (dimap) dimap[std::size_t(iy) * ihw + ix] += W[wbase + 3 * ky + kx] * dz;
            }
          }
        }
      }
    }
  }
}

struct ForwardCache {
  // acts[0] = CHW input, acts[s+1] = stage s output (post-relu)
  std::vector<std::vector<double>> acts;
  std::vector<double> feat;  // pooled
};

void image_to_chw(const RgbImage& img, int size, std::vector<double>& out) {
  const RgbImage r = (img.width == size && img.height == size)
                         ? img
                         : resize_bilinear(img, size, size);
  out.resize(3 * std::size_t(size) * size);
  const std::size_t hw = std::size_t(size) * size;
  for (std::size_t i = 0; i < hw; ++i) {
    out[i] = r.data[3 * i + 0];
    out[hw + i] = r.data[3 * i + 1];
    out[2 * hw + i] = r.data[3 * i + 2];
  }
}

std::vector<double> forward(const Plan& plan, const EncoderArch& arch,
                            const std::vector<double>& params, const RgbImage& img,
                            ForwardCache* cache) {
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.acts.resize(plan.stages.size() + 1);
  image_to_chw(img, arch.input_size, c.acts[0]);
  for (std::size_t s = 0; s < plan.stages.size(); ++s) {
    const auto& st = plan.stages[s];
    c.acts[s + 1].resize(std::size_t(st.out_ch) * st.out_hw * st.out_hw);
    stage_forward(st, params.data(), c.acts[s].data(), c.acts[s + 1].data());
  }
  const auto& last = c.acts.back();
  const std::size_t hw = std::size_t(plan.feat_hw) * plan.feat_hw;
  c.feat.assign(std::size_t(plan.feat), 0.0);
  for (int ch = 0; ch < plan.feat; ++ch) {
    double acc = 0.0;
    for (std::size_t i = 0; i < hw; ++i) acc += last[std::size_t(ch) * hw + i];
    c.feat[std::size_t(ch)] = acc / double(hw);
  }
  std::vector<double> e(std::size_t(arch.embed_dim));
  const double* HW = params.data() + plan.head_w;
  const double* HB = params.data() + plan.head_b;
  for (int j = 0; j < arch.embed_dim; ++j) {
    double acc = HB[j];
    const double* row = HW + std::size_t(j) * plan.feat;
    for (int ch = 0; ch < plan.feat; ++ch) acc += row[ch] * c.feat[std::size_t(ch)];
    e[std::size_t(j)] = acc;
  }
  return e;
}

// backward from de into d_params (accumulated, caller zeroes)
void backward(const Plan& plan, const EncoderArch& arch,
              const std::vector<double>& params, const ForwardCache& c,
              const std::vector<double>& de, std::vector<double>& d_params) {
  const double* HW = params.data() + plan.head_w;
  double* dHW = d_params.data() + plan.head_w;
  double* dHB = d_params.data() + plan.head_b;
  std::vector<double> dfeat(std::size_t(plan.feat), 0.0);
  for (int j = 0; j < arch.embed_dim; ++j) {
    const double dj = de[std::size_t(j)];
    dHB[j] += dj;
    const double* row = HW + std::size_t(j) * plan.feat;
    double* drow = dHW + std::size_t(j) * plan.feat;
    for (int ch = 0; ch < plan.feat; ++ch) {
      drow[ch] += dj * c.feat[std::size_t(ch)];
      dfeat[std::size_t(ch)] += row[ch] * dj;
    }
  }

  const std::size_t hw = std::size_t(plan.feat_hw) * plan.feat_hw;
  std::vector<double> d_act(c.acts.back().size());
  for (int ch = 0; ch < plan.feat; ++ch) {
    const double v = dfeat[std::size_t(ch)] / double(hw);
    for (std::size_t i = 0; i < hw; ++i) d_act[std::size_t(ch) * hw + i] = v;
  }

  std::vector<double> d_prev;
  for (std::size_t s = plan.stages.size(); s-- > 0;) {
    const auto& st = plan.stages[s];
    // relu mask
    const auto& act = c.acts[s + 1];
    for (std::size_t i = 0; i < act.size(); ++i)
      if (act[i] <= 0.0) d_act[i] = 0.0;
    const bool need_din = s > 0;
    if (need_din) d_prev.resize(c.acts[s].size());
    stage_backward(st, params.data(), c.acts[s].data(), d_act.data(),
                   d_params.data(), need_din ? d_prev.data() : nullptr);
    if (need_din) d_act = d_prev;
  }
}

}  // namespace

std::size_t EncoderArch::param_count() const { return make_plan(*this).total; }

EncoderModel init_encoder(const EncoderArch& arch, std::uint64_t seed) {
  const Plan plan = make_plan(arch);
  EncoderModel m;
  m.arch = arch;
  m.params.assign(plan.total, 0.0);
  Rng rng(seed);
  for (const auto& st : plan.stages) {
    const double s = 1.0 / std::sqrt(double(st.in_ch) * 9.0);
    for (std::size_t i = st.w; i < st.b; ++i)
      m.params[i] = (2.0 * rng.uniform() - 1.0) * s;
    // biases stay zero
  }
  const double sh = 1.0 / std::sqrt(double(plan.feat));
  for (std::size_t i = plan.head_w; i < plan.head_b; ++i)
    m.params[i] = (2.0 * rng.uniform() - 1.0) * sh;
  return m;
}

PaletteEmbedding encode(const EncoderModel& m, const RgbImage& img) {
  const Plan plan = make_plan(m.arch);
  if (m.params.size() != plan.total)
    throw ValidationError("encode: parameter vector does not match arch");
  PaletteEmbedding out;
  out.e = forward(plan, m.arch, m.params, img, nullptr);
  return out;
}

FlowWeights modulated_flow(const PaletteEmbedding& emb) {
  const std::size_t d = emb.e.size();
  if (d < 11 || (d - 3) % 8 != 0)
    throw ValidationError("modulated_flow: dim(e) is not 8H+3");
  FlowWeights w;
  w.arch.hidden = int((d - 3) / 8);
  w.theta.resize(d);
  for (std::size_t i = 0; i < d; ++i) w.theta[i] = float(emb.e[i]);
  w.meta.source_id = emb.image_id;
  return w;
}

DistillBatch distill_targets(const FlowWeights& w, const PixelCloud& pixels,
                             int steps, std::uint64_t seed, bool velocity_target) {
  if (pixels.empty()) throw ValidationError("distill_targets: empty cloud");
  const PixelCloud z = integrate(w, pixels, steps, 1.0f, Direction::Forward);
  const std::size_t n = pixels.size();
  DistillBatch b;
  b.x.resize(n);
  b.y.resize(n);
  b.z.resize(n);
  b.t.resize(n);
  b.tx.resize(n);
  b.ty.resize(n);
  b.tz.resize(n);
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const float t = rng.uniform_f();
    b.t[i] = t;
    b.x[i] = t * z.r[i] + (1.0f - t) * pixels.r[i];
    b.y[i] = t * z.g[i] + (1.0f - t) * pixels.g[i];
    b.z[i] = t * z.b[i] + (1.0f - t) * pixels.b[i];
    b.tx[i] = z.r[i] - pixels.r[i];
    b.ty[i] = z.g[i] - pixels.g[i];
    b.tz[i] = z.b[i] - pixels.b[i];
  }
  if (velocity_target) {
    kernels::mlp_forward(w.theta.data(), w.arch.hidden, b.x.data(), b.y.data(),
                         b.z.data(), b.t.data(), false, n, b.tx.data(),
                         b.ty.data(), b.tz.data());
  }
  return b;
}

LoadedDataset load_dataset(const FlowDataset& ds) {
  if (ds.entries.empty()) throw ValidationError("load_dataset: empty dataset");
  LoadedDataset out;
  out.arch = ds.arch;
  out.ids.resize(ds.entries.size());
  out.images.resize(ds.entries.size());
  out.flows.resize(ds.entries.size());
  for (std::size_t i = 0; i < ds.entries.size(); ++i) {
    const auto& e = ds.entries[i];
    out.ids[i] = e.image_path;
    out.images[i] = load_image(e.image_path);
    out.flows[i] = load_flow(e.weights_path);
    if (!(out.flows[i].arch == ds.arch))
      throw ValidationError("load_dataset: '" + e.weights_path +
                            "' does not match the dataset arch (hidden=" +
                            std::to_string(ds.arch.hidden) + ")");
  }
  return out;
}

double encoder_loss_grad(const EncoderModel& m,
                         const std::vector<const RgbImage*>& images,
                         const std::vector<const DistillBatch*>& batches,
                         std::vector<double>& grad, int threads) {
  const Plan plan = make_plan(m.arch);
  if (m.params.size() != plan.total)
    throw ValidationError("encoder_loss_grad: parameter vector does not match arch");
  if (images.empty() || images.size() != batches.size())
    throw ValidationError("encoder_loss_grad: images/batches mismatch");
  const std::size_t B = images.size();
  grad.assign(plan.total, 0.0);

  std::vector<std::vector<double>> slot_grads(B);
  std::vector<double> slot_loss(B, 0.0);

  parallel_items(B, threads, [&](std::size_t i) {
    ForwardCache cache;
    std::vector<double> e = forward(plan, m.arch, m.params, *images[i], &cache);

    // gradient w.r.t. e goes through the float flow kernels
    std::vector<float> theta(e.size());
    for (std::size_t j = 0; j < e.size(); ++j) theta[j] = float(e[j]);
    const int hidden = int((e.size() - 3) / 8);
    if (kernels::param_count(hidden) != e.size())
      throw ValidationError("encoder_loss_grad: dim(e) is not 8H+3");
    const DistillBatch& b = *batches[i];
    std::vector<float> ge(e.size());
    slot_loss[i] = kernels::mlp_loss_grad(theta.data(), hidden, b.x.data(),
                                          b.y.data(), b.z.data(), b.t.data(),
                                          b.tx.data(), b.ty.data(), b.tz.data(),
                                          b.size(), ge.data());

    std::vector<double> de(e.size());
    const double scale = 1.0 / double(B);
    for (std::size_t j = 0; j < e.size(); ++j) de[j] = double(ge[j]) * scale;
    slot_grads[i].assign(plan.total, 0.0);
    backward(plan, m.arch, m.params, cache, de, slot_grads[i]);
  });

  // fixed-order accumulation keeps training bit-deterministic across thread counts
  double loss = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    loss += slot_loss[i];
    const auto& sg = slot_grads[i];
    for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += sg[j];
  }
  return loss / double(B);
}

EncoderModel train_encoder(
    const LoadedDataset& ds, const EncoderArch& arch,
    const EncoderTrainParams& params, const EncoderTrainState* resume,
    const std::function<void(const EncoderModel&, const EncoderTrainState&)>&
        on_checkpoint) {
  if (ds.size() == 0) throw ValidationError("train_encoder: empty dataset");
  if (std::size_t(arch.embed_dim) != ds.arch.param_count())
    throw ValidationError("train_encoder: dim(e)=" + std::to_string(arch.embed_dim) +
                          " does not match dataset flows (" +
                          std::to_string(ds.arch.param_count()) + ")");
  if (params.batch_images < 1 || params.pixels_per_image < 1 ||
      params.distill_steps < 1)
    throw ValidationError("train_encoder: bad batch parameters");

  const Plan plan = make_plan(arch);
  EncoderModel model;
  AdamState<double> adam(plan.total, params.lr);
  int start = params.start_iter;

  if (resume && resume->valid()) {
    if (resume->params.size() != plan.total || resume->adam_m.size() != plan.total)
      throw ValidationError("train_encoder: resume state does not match arch");
    model.arch = arch;
    model.params = resume->params;
    adam.m = resume->adam_m;
    adam.v = resume->adam_v;
    adam.step = resume->adam_step;
    start = resume->iter;
  } else {
    model = init_encoder(arch, seed_mix(params.seed, 0xE4C0DE2));
  }

  const std::size_t B = std::size_t(params.batch_images);
  std::vector<RgbImage> aug_images(B);
  std::vector<DistillBatch> slot_batches(B);
  std::vector<double> grad;
  double loss = 0.0;

  for (int it = start; it < params.iters; ++it) {
    adam.lr = it >= params.drop_at ? params.lr_after_drop : params.lr;

    const std::uint64_t iter_seed = seed_mix(seed_mix(params.seed, 0xA19), it);
    std::vector<std::size_t> picks(B);
    {
      Rng rng(iter_seed);
      for (std::size_t b = 0; b < B; ++b) picks[b] = rng.below(ds.size());
    }

    parallel_items(B, params.threads, [&](std::size_t b) {
      Rng rng(seed_mix(iter_seed, 101 + b));
      const std::size_t k = picks[b];
      const PixelCloud pix =
          sample_pixels(ds.images[k], std::size_t(params.pixels_per_image),
                        rng.next_u64());
      slot_batches[b] = distill_targets(ds.flows[k], pix, params.distill_steps,
                                        rng.next_u64(), params.velocity_target);
      aug_images[b] = augment(ds.images[k], rng.next_u64());
    });

    std::vector<const RgbImage*> img_ptrs(B);
    std::vector<const DistillBatch*> batch_ptrs(B);
    for (std::size_t b = 0; b < B; ++b) {
      img_ptrs[b] = &aug_images[b];
      batch_ptrs[b] = &slot_batches[b];
    }
    loss = encoder_loss_grad(model, img_ptrs, batch_ptrs, grad, params.threads);
    if (!std::isfinite(loss) || loss > 1e6)
      throw NumericError("train_encoder: diverged at iteration " +
                         std::to_string(it) + " (loss=" + std::to_string(loss) + ")");
    adam_step<double>(adam, model.params, grad);

    if (params.on_progress) params.on_progress(it + 1, loss);
    if (on_checkpoint && params.checkpoint_every > 0 &&
        (it + 1) % params.checkpoint_every == 0 && it + 1 < params.iters) {
      model.meta.iterations = std::uint64_t(it + 1);
      model.meta.final_loss = loss;
      EncoderTrainState st{model.params, adam.m, adam.v, adam.step, it + 1};
      on_checkpoint(model, st);
    }
  }

  model.meta.iterations = std::uint64_t(params.iters);
  model.meta.final_loss = loss;
  if (on_checkpoint) {
    EncoderTrainState st{model.params, adam.m, adam.v, adam.step, params.iters};
    on_checkpoint(model, st);
  }
  return model;
}

std::vector<std::pair<std::string, double>> embed_search(
    const std::vector<PaletteEmbedding>& db, const PaletteEmbedding& query,
    std::size_t k) {
  if (db.empty()) throw ValidationError("embed_search: empty database");
  if (k < 1) throw ValidationError("embed_search: k must be >= 1");
  std::vector<std::pair<std::string, double>> scored;
  scored.reserve(db.size());
  for (const auto& entry : db) {
    if (entry.e.size() != query.e.size())
      throw ValidationError("embed_search: embedding dimension mismatch");
    double d2 = 0.0;
    for (std::size_t i = 0; i < query.e.size(); ++i) {
      const double d = entry.e[i] - query.e[i];
      d2 += d * d;
    }
    scored.emplace_back(entry.image_id, std::sqrt(d2));
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second < b.second;
    return a.first < b.first;
  });
  if (scored.size() > k) scored.resize(k);
  return scored;
}

std::array<double, 12> moment_embedding(const RgbImage& img) {
  if (img.pixel_count() == 0) throw ValidationError("moment_embedding: empty image");
  const std::size_t n = img.pixel_count();
  double mean[3] = {0, 0, 0};
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) mean[c] += img.data[3 * i + c];
  for (int c = 0; c < 3; ++c) mean[c] /= double(n);
  double cov[9] = {0};
  for (std::size_t i = 0; i < n; ++i) {
    const double d0 = img.data[3 * i + 0] - mean[0];
    const double d1 = img.data[3 * i + 1] - mean[1];
    const double d2 = img.data[3 * i + 2] - mean[2];
    cov[0] += d0 * d0;
    cov[1] += d0 * d1;
    cov[2] += d0 * d2;
    cov[4] += d1 * d1;
    cov[5] += d1 * d2;
    cov[8] += d2 * d2;
  }
  for (double& v : cov) v /= double(n);
  cov[3] = cov[1];
  cov[6] = cov[2];
  cov[7] = cov[5];
  std::array<double, 12> out;
  for (int c = 0; c < 3; ++c) out[std::size_t(c)] = mean[c];
  for (int c = 0; c < 9; ++c) out[std::size_t(3 + c)] = cov[c];
  return out;
}

// ---------------------------------------------------------------------------
// MENC checkpoint file

namespace {

constexpr char kMagic[4] = {'M', 'E', 'N', 'C'};
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

}  // namespace

void save_encoder(const EncoderModel& m, const std::string& path) {
  const Plan plan = make_plan(m.arch);
  if (m.params.size() != plan.total)
    throw ValidationError("save_encoder: parameter vector does not match arch");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot write '" + path + "'");
  std::FILE* f = fp.get();
  if (std::fwrite(kMagic, 1, 4, f) != 4) throw IoError("write failed");
  put_u32(f, kVersion);
  put_u32(f, std::uint32_t(m.arch.input_size));
  put_u32(f, std::uint32_t(m.arch.widths.size()));
  for (int w : m.arch.widths) put_u32(f, std::uint32_t(w));
  put_u32(f, std::uint32_t(m.arch.embed_dim));
  put_u32(f, std::uint32_t(m.params.size()));
  for (double v : m.params) {
    float fv = float(v);
    std::uint32_t bits;
    std::memcpy(&bits, &fv, 4);
    put_u32(f, bits);
  }
  char buf[64];
  std::string meta;
  std::snprintf(buf, sizeof(buf), "iterations=%" PRIu64 "\n", m.meta.iterations);
  meta += buf;
  std::snprintf(buf, sizeof(buf), "final_loss=%a\n", m.meta.final_loss);
  meta += buf;
  if (!m.meta.note.empty()) meta += "note=" + m.meta.note + "\n";
  put_u32(f, std::uint32_t(meta.size()));
  if (std::fwrite(meta.data(), 1, meta.size(), f) != meta.size())
    throw IoError("write failed");
  if (std::fflush(f) != 0) throw IoError("write failed");
}

EncoderModel load_encoder(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open '" + path + "'");
  std::FILE* f = fp.get();
  char magic[4];
  if (std::fread(magic, 1, 4, f) != 4 || std::memcmp(magic, kMagic, 4) != 0)
    throw ValidationError("'" + path + "' is not a MENC encoder file");
  if (get_u32(f) != kVersion)
    throw ValidationError("unsupported MENC version in '" + path + "'");
  EncoderModel m;
  m.arch.input_size = int(get_u32(f));
  const std::uint32_t n_stages = get_u32(f);
  if (n_stages == 0 || n_stages > 16)
    throw ValidationError("MENC stage count out of range in '" + path + "'");
  m.arch.widths.resize(n_stages);
  for (auto& w : m.arch.widths) w = int(get_u32(f));
  m.arch.embed_dim = int(get_u32(f));
  const std::uint32_t count = get_u32(f);
  const Plan plan = make_plan(m.arch);
  if (count != plan.total)
    throw ValidationError("MENC parameter count mismatch in '" + path + "'");
  m.params.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t bits = get_u32(f);
    float fv;
    std::memcpy(&fv, &bits, 4);
    if (!std::isfinite(fv))
      throw ValidationError("MENC contains non-finite parameters: '" + path + "'");
    m.params[i] = double(fv);
  }
  const std::uint32_t meta_len = get_u32(f);
  std::string meta(meta_len, '\0');
  if (meta_len > 0 && std::fread(meta.data(), 1, meta_len, f) != meta_len)
    throw IoError("unexpected end of file in '" + path + "'");
  std::size_t pos = 0;
  while (pos < meta.size()) {
    std::size_t eol = meta.find('\n', pos);
    if (eol == std::string::npos) eol = meta.size();
    const std::string line = meta.substr(pos, eol - pos);
    pos = eol + 1;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "iterations")
      m.meta.iterations = std::strtoull(val.c_str(), nullptr, 10);
    else if (key == "final_loss")
      m.meta.final_loss = std::strtod(val.c_str(), nullptr);
    else if (key == "note")
      m.meta.note = val;
  }
  return m;
}

}  // namespace colorflow

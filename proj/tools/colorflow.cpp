// colorflow: example-based color transfer via per-image rectified flows
// through a shared uniform latent cube.
//
// Subcommands: train-flow, build-dataset, train-encoder, transfer, search, eval.
// Exit codes: 0 ok, 1 validation error, 2 numerical failure, 3 I/O error.

#include <CLI11.hpp>

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include "colorflow/encoder.hpp"
#include "colorflow/errors.hpp"
#include "colorflow/flow.hpp"
#include "colorflow/image.hpp"
#include "colorflow/kernels.hpp"
#include "colorflow/manifest.hpp"
#include "colorflow/otmetrics.hpp"
#include "colorflow/parallel.hpp"
#include "colorflow/rng.hpp"
#include "colorflow/transfer.hpp"

namespace fs = std::filesystem;
using namespace colorflow;

namespace {

int g_verbosity = 1;  // 0 quiet, 1 normal, 2 verbose
std::mutex g_log_mutex;

void logmsg(int level, const std::string& msg) {
  if (g_verbosity < level) return;
  std::lock_guard<std::mutex> lock(g_log_mutex);
  std::fprintf(stderr, "%s\n", msg.c_str());
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof(buf), f, args);
  va_end(args);
  return buf;
}

bool has_image_ext(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return char(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<fs::path> list_images(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: '" + dir + "'");
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && has_image_ext(entry.path()))
      out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<int> parse_widths(const std::string& csv) {
  std::vector<int> widths;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) widths.push_back(std::stoi(item));
  if (widths.empty()) throw ValidationError("--widths: no stage widths given");
  return widths;
}

// ---------------------------------------------------------------------------
// encoder training state sidecar (exact resume: double-precision params +
// Adam moments; the MENC checkpoint itself stores float32)

constexpr char kStateMagic[4] = {'M', 'E', 'N', 'S'};

void save_train_state(const EncoderTrainState& st, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path + "'");
  f.write(kStateMagic, 4);
  std::uint64_t iter = std::uint64_t(st.iter), step = std::uint64_t(st.adam_step);
  std::uint64_t count = st.params.size();
  f.write(reinterpret_cast<const char*>(&iter), 8);
  f.write(reinterpret_cast<const char*>(&step), 8);
  f.write(reinterpret_cast<const char*>(&count), 8);
  auto dump = [&](const std::vector<double>& v) {
    f.write(reinterpret_cast<const char*>(v.data()),
            std::streamsize(v.size() * sizeof(double)));
  };
  dump(st.params);
  dump(st.adam_m);
  dump(st.adam_v);
  if (!f.flush()) throw IoError("write failed: '" + path + "'");
}

EncoderTrainState load_train_state(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kStateMagic, 4) != 0)
    throw ValidationError("'" + path + "' is not a training-state file");
  std::uint64_t iter = 0, step = 0, count = 0;
  f.read(reinterpret_cast<char*>(&iter), 8);
  f.read(reinterpret_cast<char*>(&step), 8);
  f.read(reinterpret_cast<char*>(&count), 8);
  if (!f || count == 0 || count > (1ull << 32))
    throw ValidationError("corrupt training-state file: '" + path + "'");
  EncoderTrainState st;
  st.iter = int(iter);
  st.adam_step = std::int64_t(step);
  st.params.resize(count);
  st.adam_m.resize(count);
  st.adam_v.resize(count);
  auto slurp = [&](std::vector<double>& v) {
    f.read(reinterpret_cast<char*>(v.data()), std::streamsize(count * sizeof(double)));
  };
  slurp(st.params);
  slurp(st.adam_m);
  slurp(st.adam_v);
  if (!f) throw IoError("unexpected end of file: '" + path + "'");
  return st;
}

// ---------------------------------------------------------------------------

struct CommonOpts {
  std::uint64_t seed = 0;
  int threads = 0;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--seed", o.seed, "RNG seed; identical seeds give bit-identical outputs");
  cmd->add_option("--threads", o.threads, "worker threads (0 = hardware)");
}

int cmd_train_flow(const std::string& image, const std::string& out,
                   const CommonOpts& common, int hidden, int iters, double lr,
                   int batch) {
  const RgbImage img = load_image(image);
  PixelCloud cloud = image_cloud(img);
  cloud.source_id = fs::path(image).filename().string();
  logmsg(1, fmt("training flow: %s (%dx%d, %zu px, hidden=%d, iters=%d)",
                image.c_str(), img.width, img.height, cloud.size(), hidden, iters));
  FlowTrainParams params{iters, float(lr), batch, common.seed};
  const FlowWeights w = train_flow(cloud, FlowArch{hidden}, params);
  save_flow(w, out);
  logmsg(1, fmt("wrote %s (%zu params, final loss %.6f)", out.c_str(),
                w.theta.size(), double(w.meta.final_loss)));
  return 0;
}

int cmd_build_dataset(const std::string& dir, const std::string& outdir,
                      const CommonOpts& common, int hidden, int iters, double lr,
                      int batch) {
  const auto images = list_images(dir);
  if (images.empty())
    throw ValidationError("no decodable images (.png/.jpg/.jpeg) in '" + dir + "'");
  fs::create_directories(outdir);

  const FlowArch arch{hidden};
  struct Slot {
    ManifestEntry entry;
    std::string failure;
    bool ok = false;
  };
  std::vector<Slot> slots(images.size());

  parallel_items(images.size(), common.threads, [&](std::size_t i) {
    const fs::path& img_path = images[i];
    const std::string name = img_path.filename().string();
    const fs::path weights_path = fs::path(outdir) / (name + ".modf");
    const std::uint64_t seed = seed_mix(common.seed, seed_of_string(name));
    Slot& slot = slots[i];
    slot.entry.image = fs::proximate(img_path, outdir).string();
    slot.entry.weights = name + ".modf";
    slot.entry.seed = seed;
    try {
      if (fs::exists(weights_path)) {
        // resume: keep entries whose weight files validate
        try {
          const FlowWeights w = load_flow(weights_path.string());
          if (w.arch == arch) {
            slot.entry.iterations = w.meta.iterations;
            slot.entry.final_loss = w.meta.final_loss;
            slot.ok = true;
            logmsg(2, fmt("skip %s (already trained)", name.c_str()));
            return;
          }
        } catch (const Error&) {
          // invalid file: retrain below
        }
      }
      const RgbImage img = load_image(img_path.string());
      PixelCloud cloud = image_cloud(img);
      cloud.source_id = name;
      FlowTrainParams params{iters, float(lr), batch, seed};
      const FlowWeights w = train_flow(cloud, arch, params);
      save_flow(w, weights_path.string());
      slot.entry.iterations = w.meta.iterations;
      slot.entry.final_loss = w.meta.final_loss;
      slot.ok = true;
      logmsg(1, fmt("trained %s (loss %.6f)", name.c_str(), double(w.meta.final_loss)));
    } catch (const std::exception& e) {
      slot.failure = e.what();
      logmsg(1, fmt("FAILED %s: %s", name.c_str(), e.what()));
    }
  });

  Manifest m;
  m.arch = arch;
  for (auto& slot : slots) {
    if (slot.ok)
      m.entries.push_back(slot.entry);
    else
      m.failures.push_back({slot.entry.image, slot.failure});
  }
  const std::string manifest_path = (fs::path(outdir) / "manifest.txt").string();
  save_manifest(m, manifest_path);
  logmsg(1, fmt("manifest: %s (%zu entries, %zu failures)", manifest_path.c_str(),
                m.entries.size(), m.failures.size()));
  return m.failures.empty() ? 0 : 2;
}

int cmd_train_encoder(const std::string& manifest_path, const std::string& out,
                      const CommonOpts& common, EncoderTrainParams params,
                      int input_size, const std::string& widths_csv,
                      const std::string& loss_csv, const std::string& resume_path,
                      int log_every) {
  const Manifest m = load_manifest(manifest_path);
  if (m.entries.empty())
    throw ValidationError("manifest has no usable entries: '" + manifest_path + "'");
  const LoadedDataset ds = load_dataset(manifest_to_dataset(m, manifest_path));

  EncoderArch arch;
  arch.input_size = input_size;
  arch.widths = parse_widths(widths_csv);
  arch.embed_dim = int(ds.arch.param_count());

  params.seed = common.seed;
  params.threads = common.threads;

  std::ofstream csv;
  if (!loss_csv.empty()) {
    csv.open(loss_csv, std::ios::trunc);
    if (!csv) throw IoError("cannot write '" + loss_csv + "'");
    csv << "iter,loss\n";
  }
  const int total_iters = params.iters;
  params.on_progress = [&csv, log_every, total_iters](int iter, double loss) {
    if (csv.is_open() && (iter % log_every == 0 || iter == total_iters))
      csv << iter << "," << fmt("%.9g", loss) << "\n";
    if (iter % std::max(1, log_every) == 0)
      logmsg(2, fmt("iter %d loss %.6f", iter, loss));
  };

  EncoderTrainState resume;
  const EncoderTrainState* resume_ptr = nullptr;
  if (!resume_path.empty()) {
    resume = load_train_state(resume_path + ".state");
    resume_ptr = &resume;
    logmsg(1, fmt("resuming from %s at iteration %d", resume_path.c_str(), resume.iter));
  }

  auto on_checkpoint = [&](const EncoderModel& model, const EncoderTrainState& st) {
    save_encoder(model, out);
    save_train_state(st, out + ".state");
    logmsg(2, fmt("checkpoint at iteration %d", st.iter));
  };

  logmsg(1, fmt("training encoder: %zu pairs, dim(e)=%d, input %dx%d, iters %d",
                ds.size(), arch.embed_dim, input_size, input_size, params.iters));
  const EncoderModel model = train_encoder(ds, arch, params, resume_ptr, on_checkpoint);
  logmsg(1, fmt("wrote %s (final loss %.6f)", out.c_str(), model.meta.final_loss));
  return 0;
}

CloudMap affine_cloud_map(const AffineColorMap& map, float strength, float blend) {
  return [map, strength, blend](const PixelCloud& in) {
    PixelCloud out = in;
    for (std::size_t i = 0; i < in.size(); ++i) {
      const auto y = map.apply({double(in.r[i]), double(in.g[i]), double(in.b[i])});
      // strength interpolates along the map, blend mixes with the original
      double rr = in.r[i] + strength * (y[0] - in.r[i]);
      double gg = in.g[i] + strength * (y[1] - in.g[i]);
      double bb = in.b[i] + strength * (y[2] - in.b[i]);
      rr = blend * rr + (1.0 - blend) * in.r[i];
      gg = blend * gg + (1.0 - blend) * in.g[i];
      bb = blend * bb + (1.0 - blend) * in.b[i];
      out.r[i] = float(std::clamp(rr, 0.0, 1.0));
      out.g[i] = float(std::clamp(gg, 0.0, 1.0));
      out.b[i] = float(std::clamp(bb, 0.0, 1.0));
    }
    return out;
  };
}

int cmd_transfer(const std::string& content_path, const std::string& style_path,
                 const std::string& out_path, const CommonOpts& common,
                 const std::string& mode, const std::string& encoder_path,
                 TransferConfig cfg, int hidden, int iters, double lr, int batch,
                 const std::string& report_path) {
  cfg.threads = common.threads;
  const RgbImage content = load_image(content_path);
  const RgbImage style = load_image(style_path);

  RgbImage output;
  CloudMap map;

  if (mode == "mkl") {
    bool regularized = false;
    const AffineColorMap affine =
        mkl_map(image_cloud(content), image_cloud(style), &regularized);
    if (regularized)
      logmsg(1, "warning: near-singular source covariance, regularized by 1e-6 I");
    map = affine_cloud_map(affine, cfg.strength, cfg.blend);
    if (cfg.strength == 0.0f) {
      output = content;
    } else {
      output = content;
      const PixelCloud mapped = map(image_cloud(content));
      for (std::size_t i = 0; i < output.pixel_count(); ++i) {
        output.data[3 * i + 0] = mapped.r[i];
        output.data[3 * i + 1] = mapped.g[i];
        output.data[3 * i + 2] = mapped.b[i];
      }
    }
  } else if (mode == "encoder" || mode == "direct") {
    FlowWeights content_flow, style_flow;
    if (mode == "encoder") {
      if (encoder_path.empty())
        throw ValidationError("--mode encoder requires --encoder CHECKPOINT");
      const EncoderModel enc = load_encoder(encoder_path);
      PaletteEmbedding ec = encode(enc, content);
      PaletteEmbedding es = encode(enc, style);
      ec.image_id = content_path;
      es.image_id = style_path;
      content_flow = modulated_flow(ec);
      style_flow = modulated_flow(es);
      logmsg(1, fmt("modulated flows: hidden=%d", content_flow.arch.hidden));
    } else {
      logmsg(1, fmt("training flows from scratch (hidden=%d, iters=%d)", hidden, iters));
      const FlowArch arch{hidden};
      const RgbImage* imgs[2] = {&content, &style};
      FlowWeights flows[2];
      const std::uint64_t seeds[2] = {seed_mix(common.seed, 0xC0117E47),
                                      seed_mix(common.seed, 0x57717E00)};
      parallel_items(2, std::min(resolve_threads(common.threads), 2), [&](std::size_t i) {
        PixelCloud cloud = image_cloud(*imgs[i]);
        cloud.source_id = i == 0 ? content_path : style_path;
        FlowTrainParams p{iters, float(lr), batch, seeds[i]};
        flows[i] = train_flow(cloud, arch, p);
      });
      content_flow = flows[0];
      style_flow = flows[1];
    }
    TransferJob job{content, content_flow, style_flow, cfg};
    output = transfer_image(job);
    const TransferConfig map_cfg = cfg;
    map = [content_flow, style_flow, map_cfg](const PixelCloud& in) {
      return transfer_cloud(in, content_flow, style_flow, map_cfg);
    };
  } else {
    throw ValidationError("unknown --mode '" + mode + "' (encoder|direct|mkl)");
  }

  save_png(output, out_path);
  logmsg(1, fmt("wrote %s", out_path.c_str()));

  if (!report_path.empty()) {
    EvalConfig ecfg;
    ecfg.seed = common.seed;
    ecfg.threads = resolve_threads(common.threads);
    const TransportReport rep = evaluate_transfer(content, style, output, &map, ecfg);
    std::ofstream f(report_path, std::ios::trunc);
    if (!f) throw IoError("cannot write '" + report_path + "'");
    f << "method,style_distance,content_distance,aggregated,lipschitz\n";
    f << mode << ","
      << fmt("%.6f,%.6f,%.6f,%.6f", rep.style_distance, rep.content_distance,
             rep.aggregated, rep.lipschitz)
      << "\n";
    logmsg(1, fmt("report: style %.4f content %.4f aggregated %.4f lipschitz %.2f",
                  rep.style_distance, rep.content_distance, rep.aggregated,
                  rep.lipschitz));
  }
  return 0;
}

int cmd_search(const std::string& corpus_dir, const std::string& query_path,
               const CommonOpts& common, const std::string& encoder_path,
               bool moments_baseline, int k) {
  const auto images = list_images(corpus_dir);
  if (images.empty()) throw ValidationError("corpus is empty: '" + corpus_dir + "'");

  std::vector<PaletteEmbedding> db(images.size());
  PaletteEmbedding query;

  if (moments_baseline) {
    for (std::size_t i = 0; i < images.size(); ++i) {
      const auto mom = moment_embedding(load_image(images[i].string()));
      db[i].e.assign(mom.begin(), mom.end());
      db[i].image_id = images[i].filename().string();
    }
    const auto mom = moment_embedding(load_image(query_path));
    query.e.assign(mom.begin(), mom.end());
  } else {
    if (encoder_path.empty())
      throw ValidationError("search requires --encoder CHECKPOINT or --baseline moments");
    const EncoderModel enc = load_encoder(encoder_path);
    parallel_items(images.size(), common.threads, [&](std::size_t i) {
      db[i] = encode(enc, load_image(images[i].string()));
      db[i].image_id = images[i].filename().string();
    });
    query = encode(enc, load_image(query_path));
  }
  query.image_id = fs::path(query_path).filename().string();

  const auto ranked = embed_search(db, query, std::size_t(k));
  for (std::size_t i = 0; i < ranked.size(); ++i)
    std::printf("%zu\t%.6f\t%s\n", i + 1, ranked[i].second, ranked[i].first.c_str());
  return 0;
}

struct EvalRow {
  std::string content, style, output, method;
};

int cmd_eval(const std::string& pairs_path, const std::string& report_path,
             const CommonOpts& common, std::size_t samples, int projections,
             int lipschitz_pairs) {
  std::ifstream f(pairs_path);
  if (!f) throw IoError("cannot open '" + pairs_path + "'");
  const fs::path base = fs::path(pairs_path).parent_path();

  std::vector<EvalRow> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) fields.push_back(item);
    if (fields.size() != 4)
      throw ValidationError("pairs file: expected 'content,style,output,method': " + line);
    rows.push_back({(base / fields[0]).string(), (base / fields[1]).string(),
                    (base / fields[2]).string(), fields[3]});
  }

  std::vector<std::string> missing;
  for (const auto& r : rows)
    for (const std::string& p : {r.content, r.style, r.output})
      if (!fs::exists(p)) missing.push_back(p);
  if (!missing.empty()) {
    std::sort(missing.begin(), missing.end());
    missing.erase(std::unique(missing.begin(), missing.end()), missing.end());
    for (const auto& p : missing) logmsg(0, "missing file: " + p);
    throw IoError(std::to_string(missing.size()) + " referenced files are missing");
  }

  std::vector<TransportReport> reports(rows.size());
  parallel_items(rows.size(), common.threads, [&](std::size_t i) {
    const EvalRow& r = rows[i];
    EvalConfig cfg;
    cfg.style_samples = samples;
    cfg.projections = projections;
    cfg.lipschitz_pairs = lipschitz_pairs;
    cfg.seed = common.seed;
    reports[i] = evaluate_transfer(load_image(r.content), load_image(r.style),
                                   load_image(r.output), nullptr, cfg);
  });

  std::ofstream rep(report_path, std::ios::trunc);
  if (!rep) throw IoError("cannot write '" + report_path + "'");
  rep << "method,style_distance,content_distance,aggregated,lipschitz\n";

  struct Agg {
    std::vector<double> style, content, aggregated, lipschitz;
  };
  std::map<std::string, Agg> per_method;

  for (std::size_t i = 0; i < rows.size(); ++i) {
    const TransportReport& t = reports[i];
    rep << rows[i].method << ","
        << fmt("%.6f,%.6f,%.6f,%.6f", t.style_distance, t.content_distance,
               t.aggregated, t.lipschitz)
        << "\n";
    Agg& a = per_method[rows[i].method];
    a.style.push_back(t.style_distance);
    a.content.push_back(t.content_distance);
    a.aggregated.push_back(t.aggregated);
    a.lipschitz.push_back(t.lipschitz);
  }
  if (!rep.flush()) throw IoError("write failed: '" + report_path + "'");

  auto mean_sdm = [](const std::vector<double>& v) {
    const double n = double(v.size());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= n;
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double sdm = v.size() > 1 ? std::sqrt(var / (n - 1.0)) / std::sqrt(n) : 0.0;
    return std::pair<double, double>(mean, sdm);
  };

  // aggregate table (mean +/- std of mean)
  std::printf("%-14s %-19s %-19s %-19s %s\n", "method", "style", "content",
              "aggregated", "lipschitz");
  for (const auto& [method, agg] : per_method) {
    const auto s = mean_sdm(agg.style);
    const auto c = mean_sdm(agg.content);
    const auto g = mean_sdm(agg.aggregated);
    const auto l = mean_sdm(agg.lipschitz);
    std::printf("%-14s %.4f +/- %.4f   %.4f +/- %.4f   %.4f +/- %.4f   %.3f +/- %.3f\n",
                method.c_str(), s.first, s.second, c.first, c.second, g.first,
                g.second, l.first, l.second);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"colorflow: optimal-transport color transfer with rectified flows"};
  app.require_subcommand(1);
  app.fallthrough();

  bool quiet = false, verbose = false;
  app.add_flag("--quiet", quiet, "suppress progress logging");
  app.add_flag("--verbose", verbose, "extra progress logging");

  // train-flow
  auto* tf = app.add_subcommand("train-flow", "train one image's flow onto the uniform cube");
  std::string tf_image, tf_out;
  CommonOpts tf_common;
  int tf_hidden = 1024, tf_iters = 100000, tf_batch = 4096;
  double tf_lr = 5e-4;
  tf->add_option("image", tf_image, "input image")->required();
  tf->add_option("out", tf_out, "output .modf weight file")->required();
  add_common(tf, tf_common);
  tf->add_option("--hidden", tf_hidden, "hidden units (default 1024)")->check(CLI::PositiveNumber);
  tf->add_option("--iters", tf_iters, "training iterations")->check(CLI::PositiveNumber);
  tf->add_option("--lr", tf_lr, "learning rate")->check(CLI::PositiveNumber);
  tf->add_option("--batch", tf_batch, "batch size")->check(CLI::PositiveNumber);

  // build-dataset
  auto* bd = app.add_subcommand("build-dataset", "train a flow per image and write a manifest");
  std::string bd_dir, bd_out;
  CommonOpts bd_common;
  int bd_hidden = 64, bd_iters = 10000, bd_batch = 4096;
  double bd_lr = 5e-4;
  bd->add_option("dir", bd_dir, "directory of images")->required();
  bd->add_option("out", bd_out, "output directory for weights + manifest")->required();
  add_common(bd, bd_common);
  bd->add_option("--hidden", bd_hidden, "hidden units (default 64, desk scale)")->check(CLI::PositiveNumber);
  bd->add_option("--iters", bd_iters, "iterations per flow")->check(CLI::PositiveNumber);
  bd->add_option("--lr", bd_lr, "learning rate")->check(CLI::PositiveNumber);
  bd->add_option("--batch", bd_batch, "batch size")->check(CLI::PositiveNumber);

  // train-encoder
  auto* te = app.add_subcommand("train-encoder", "distill a dataset of flows into a palette encoder");
  std::string te_manifest, te_out, te_widths = "16,32,64,128", te_loss_csv, te_resume,
              te_target = "displacement";
  CommonOpts te_common;
  EncoderTrainParams te_params;
  int te_input = 64, te_log_every = 100;
  te->add_option("manifest", te_manifest, "dataset manifest")->required();
  te->add_option("out", te_out, "output .menc checkpoint")->required();
  add_common(te, te_common);
  te->add_option("--iters", te_params.iters, "training iterations (default 20000)")->check(CLI::PositiveNumber);
  te->add_option("--lr", te_params.lr, "learning rate before the drop")->check(CLI::PositiveNumber);
  te->add_option("--lr2", te_params.lr_after_drop, "learning rate after the drop")->check(CLI::PositiveNumber);
  te->add_option("--drop-at", te_params.drop_at, "iteration of the lr drop")->check(CLI::PositiveNumber);
  te->add_option("--batch-images", te_params.batch_images, "images per batch (default 8)")->check(CLI::PositiveNumber);
  te->add_option("--pixels", te_params.pixels_per_image, "pixels sampled per image")->check(CLI::PositiveNumber);
  te->add_option("--distill-steps", te_params.distill_steps, "ODE steps for targets")->check(CLI::PositiveNumber);
  te->add_option("--input-size", te_input, "encoder input resolution")->check(CLI::PositiveNumber);
  te->add_option("--widths", te_widths, "conv stage widths, comma separated");
  te->add_option("--target-mode", te_target, "displacement|velocity (default displacement)")
      ->check(CLI::IsMember({"displacement", "velocity"}));
  te->add_option("--checkpoint-every", te_params.checkpoint_every, "checkpoint interval (0 = end only)");
  te->add_option("--loss-csv", te_loss_csv, "write the loss curve here");
  te->add_option("--log-every", te_log_every, "loss-curve row interval")->check(CLI::PositiveNumber);
  te->add_option("--resume", te_resume, "checkpoint to resume from (needs its .state file)");

  // transfer
  auto* tr = app.add_subcommand("transfer", "transfer a style image's palette onto a content image");
  std::string tr_content, tr_style, tr_out, tr_mode = "direct", tr_encoder, tr_report;
  CommonOpts tr_common;
  TransferConfig tr_cfg;
  int tr_hidden = 64, tr_iters = 10000, tr_batch = 4096;
  double tr_lr = 5e-4;
  tr->add_option("content", tr_content, "content image")->required();
  tr->add_option("style", tr_style, "style image")->required();
  tr->add_option("out", tr_out, "output PNG")->required();
  add_common(tr, tr_common);
  tr->add_option("--mode", tr_mode, "encoder|direct|mkl (default direct)")
      ->check(CLI::IsMember({"encoder", "direct", "mkl"}));
  tr->add_option("--encoder", tr_encoder, "encoder checkpoint (encoder mode)");
  tr->add_option("--steps", tr_cfg.steps, "ODE steps per direction (default 8)")->check(CLI::PositiveNumber);
  tr->add_option("--strength", tr_cfg.strength, "fraction of the curve traversed")->check(CLI::Range(0.0, 1.0));
  tr->add_option("--blend", tr_cfg.blend, "mix with the original image")->check(CLI::Range(0.0, 1.0));
  tr->add_option("--tile-size", tr_cfg.tile_size, "pixels per tile (default 2^20)")->check(CLI::PositiveNumber);
  tr->add_option("--hidden", tr_hidden, "hidden units for direct mode")->check(CLI::PositiveNumber);
  tr->add_option("--iters", tr_iters, "training iterations for direct mode")->check(CLI::PositiveNumber);
  tr->add_option("--lr", tr_lr, "learning rate for direct mode")->check(CLI::PositiveNumber);
  tr->add_option("--batch", tr_batch, "batch size for direct mode")->check(CLI::PositiveNumber);
  tr->add_option("--report", tr_report, "write a TransportReport CSV here");

  // search
  auto* se = app.add_subcommand("search", "rank corpus images by palette similarity");
  std::string se_corpus, se_query, se_encoder, se_baseline;
  CommonOpts se_common;
  int se_k = 5;
  se->add_option("corpus", se_corpus, "directory of corpus images")->required();
  se->add_option("query", se_query, "query image")->required();
  add_common(se, se_common);
  se->add_option("--encoder", se_encoder, "encoder checkpoint");
  se->add_option("--baseline", se_baseline, "moments: use mean+covariance embedding")
      ->check(CLI::IsMember({"moments"}));
  se->add_option("-k,--top", se_k, "results to print (default 5)")->check(CLI::PositiveNumber);

  // eval
  auto* ev = app.add_subcommand("eval", "score transfer outputs against content/style pairs");
  std::string ev_pairs, ev_report;
  CommonOpts ev_common;
  std::size_t ev_samples = 6000;
  int ev_projections = 128, ev_lip_pairs = 10000;
  ev->add_option("pairs", ev_pairs, "CSV of content,style,output,method rows")->required();
  ev->add_option("report", ev_report, "output CSV")->required();
  add_common(ev, ev_common);
  ev->add_option("--samples", ev_samples, "pixel samples for the style metric")->check(CLI::PositiveNumber);
  ev->add_option("--projections", ev_projections, "sliced-W projections")->check(CLI::PositiveNumber);
  ev->add_option("--lipschitz-pairs", ev_lip_pairs, "probe pairs for the Lipschitz estimate")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  g_verbosity = quiet ? 0 : (verbose ? 2 : 1);

  try {
    if (*tf)
      return cmd_train_flow(tf_image, tf_out, tf_common, tf_hidden, tf_iters, tf_lr, tf_batch);
    if (*bd)
      return cmd_build_dataset(bd_dir, bd_out, bd_common, bd_hidden, bd_iters, bd_lr, bd_batch);
    if (*te) {
      te_params.velocity_target = te_target == "velocity";
      return cmd_train_encoder(te_manifest, te_out, te_common, te_params, te_input,
                               te_widths, te_loss_csv, te_resume, te_log_every);
    }
    if (*tr)
      return cmd_transfer(tr_content, tr_style, tr_out, tr_common, tr_mode, tr_encoder,
                          tr_cfg, tr_hidden, tr_iters, tr_lr, tr_batch, tr_report);
    if (*se)
      return cmd_search(se_corpus, se_query, se_common, se_encoder,
                        se_baseline == "moments", se_k);
    if (*ev)
      return cmd_eval(ev_pairs, ev_report, ev_common, ev_samples, ev_projections,
                      ev_lip_pairs);
  } catch (const ValidationError& e) {
    logmsg(0, std::string("error: ") + e.what());
    return 1;
  } catch (const NumericError& e) {
    logmsg(0, std::string("numerical failure: ") + e.what());
    return 2;
  } catch (const IoError& e) {
    logmsg(0, std::string("i/o error: ") + e.what());
    return 3;
  } catch (const std::exception& e) {
    logmsg(0, std::string("error: ") + e.what());
    return 1;
  }
  return 0;
}

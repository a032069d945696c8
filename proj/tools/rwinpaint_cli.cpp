// rwinpaint: train | eval | inpaint | gen-masks | serve
// Exit codes: 0 success, 1 runtime failure, 2 usage/config failure.
#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "rwinpaint/rwinpaint.hpp"

namespace fs = std::filesystem;
using namespace rwinpaint;

namespace {

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::vector<std::string> overrides;
  bool verbose = false;
};

AppConfig resolve(const Options& o) {
  if (o.config.empty()) throw ConfigError("--config is required");
  if (!fs::exists(o.config)) throw ConfigError("config file '" + o.config + "' does not exist");
  AppConfig app = load_config(o.config, o.overrides);
  if (o.verbose) std::fprintf(stderr, "%s", echo(app).c_str());
  return app;
}

int cmd_train(const Options& o) {
  const AppConfig app = resolve(o);
  const TrainConfig& cfg = app.train;
  if (cfg.train_dir.empty()) throw ConfigError("data.train_dir is not set");
  if (cfg.out_dir.empty()) throw ConfigError("train.out_dir is not set");
  const ImageCorpus<float> corpus(build_manifest(cfg.train_dir, "train", cfg.image_size));
  const auto fx = make_extractor(cfg.features);
  std::printf("training on %zu images (%s), %d epochs, %d pretrain\n", corpus.size(), cfg.train_dir.c_str(),
              cfg.epochs, cfg.pretrain_epochs);
  const auto res = train_loop(cfg, corpus, fx, echo(app), [&](const EpochRow& r) {
    std::printf("epoch %llu step %llu l_r=%.6f l_c=%.6f l_s=%.6f l_a_g=%.6f l_a_d=%.6f total=%.6f\n",
                static_cast<unsigned long long>(r.epoch), static_cast<unsigned long long>(r.step),
                r.mean.reconstruction, r.mean.correlation, r.mean.style, r.mean.adversarial_g, r.mean.adversarial_d,
                r.mean.total);
    std::fflush(stdout);
  });
  std::printf("done: %llu epochs, %llu steps, checkpoints in %s\n", static_cast<unsigned long long>(res.state.epoch),
              static_cast<unsigned long long>(res.state.step), cfg.out_dir.c_str());
  return kOk;
}

std::vector<Mask> load_mask_dir(const std::string& dir) {
  if (dir.empty()) throw ConfigError("eval.mask_dir is not set");
  if (!fs::is_directory(dir)) throw IoError("mask directory '" + dir + "' does not exist");
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_supported_image(e.path())) files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw EmptyCorpusError("mask directory '" + dir + "' contains no masks");
  std::vector<Mask> masks;
  for (const auto& f : files) masks.push_back(read_mask(f));
  return masks;
}

int cmd_eval(const Options& o, const std::string& method_flag) {
  AppConfig app = resolve(o);
  if (!method_flag.empty()) set_key(app, "eval.method = " + method_flag, "--method");
  const EvalConfig& ev = app.eval;
  if (ev.data_dir.empty()) throw ConfigError("eval.data_dir is not set");

  std::optional<InferenceModel> model;
  int size = app.train.image_size;
  if (ev.method == EvalMethod::model) {
    if (ev.checkpoint.empty()) throw ConfigError("eval.checkpoint is required for eval.method = model");
    model = load_inference_model(ev.checkpoint);
    size = model->image_size;
  }
  const auto masks = load_mask_dir(ev.mask_dir);
  const ImageCorpus<float> corpus(build_manifest(ev.data_dir, "test", size));
  std::vector<Tensor<float>> images;
  for (std::size_t i = 0; i < corpus.size(); ++i) images.push_back(corpus.image(i));

  Inpainter fn;
  switch (ev.method) {
    case EvalMethod::oracle: fn = oracle_inpainter(); break;
    case EvalMethod::zero_fill: fn = zero_fill_inpainter(); break;
    case EvalMethod::model:
      fn = [&](const Tensor<float>& incomplete, const Mask& m, const Tensor<float>&) {
        NoGradGuard frozen;
        const Mask ms[] = {m};
        return model->generator.forward(Var<float>::constant(incomplete), ms).composited2.value();
      };
      break;
  }
  const auto encoder = FeatureExtractor<float>::tiny(ev.fid_seed);
  const auto report = evaluate_corpus(images, masks, fn, encoder);
  std::cout << report.to_table();
  if (!ev.csv.empty()) {
    const fs::path p(ev.csv);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot write '" + ev.csv + "'");
    f << report.to_csv();
  } else {
    std::cout << "\n" << report.to_csv();
  }
  return kOk;
}

int cmd_inpaint(const std::string& image, const std::string& mask, const std::string& checkpoint,
                const std::string& out) {
  const auto model = load_inference_model(checkpoint);
  const cv::Mat img = read_raster(image, cv::IMREAD_UNCHANGED);
  const Mask m = read_mask(mask);
  if (m.height() != img.rows || m.width() != img.cols) {
    throw UsageError("mask " + std::to_string(m.width()) + "x" + std::to_string(m.height()) +
                     " does not match image " + std::to_string(img.cols) + "x" + std::to_string(img.rows));
  }
  write_raster(out, inpaint_native(model, img, m));
  std::printf("wrote %s (model %s)\n", out.c_str(), model.id.c_str());
  return kOk;
}

struct GenMaskArgs {
  std::string kind = "contiguous";
  double ratio_lo = 0.0;
  double ratio_hi = 0.4;
  int count = 10;
  int size = 64;
  std::uint64_t seed = 0;
  std::string out_dir;
};

int cmd_gen_masks(const GenMaskArgs& a) {
  MaskConfig mc;
  mc.kind = parse_mask_kind(a.kind);
  mc.ratio_lo = a.ratio_lo;
  mc.ratio_hi = a.ratio_hi;
  if (a.ratio_lo < 0 || a.ratio_lo > a.ratio_hi || a.ratio_hi > kMaxMaskRatio)
    throw UsageError("need 0 <= --ratio-lo <= --ratio-hi <= 0.6");
  if (a.count < 0 || a.size < 1) throw UsageError("--count must be >= 0 and --size >= 1");
  if (a.out_dir.empty()) throw UsageError("--out-dir is required");
  fs::create_directories(a.out_dir);
  std::mt19937_64 rng(a.seed);
  for (int i = 0; i < a.count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "mask_%04d.png", i);
    write_mask(fs::path(a.out_dir) / name, gen_mask(a.size, a.size, mc, rng));
  }
  std::printf("wrote %d %s masks to %s\n", a.count, a.kind.c_str(), a.out_dir.c_str());
  return kOk;
}

std::atomic<bool> g_stop{false};

int cmd_serve(const Options& o, const std::string& checkpoint, int port) {
  AppConfig app = o.config.empty() ? AppConfig{} : resolve(o);
  if (o.config.empty()) {
    for (const auto& ov : o.overrides) set_key(app, ov, "override");
    validate(app);
  }
  if (!checkpoint.empty()) app.serve.checkpoint = checkpoint;
  if (port >= 0) app.serve.port = port;
  InpaintService svc(app.serve);
  if (!app.serve.checkpoint.empty()) std::printf("loaded model %s\n", svc.load_model(app.serve.checkpoint).c_str());
  HttpServer http(svc, app.serve);
  std::signal(SIGINT, [](int) { g_stop = true; });
  std::signal(SIGTERM, [](int) { g_stop = true; });
  const int bound = http.start();
  std::printf("listening on http://%s:%d\n", app.serve.host.c_str(), bound);
  std::fflush(stdout);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  http.stop();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Region-wise inpainting: training, evaluation, inference and serving"};
  app.footer("\n" + schema_help());
  app.require_subcommand(1);
  Options opt;
  app.add_flag("-v,--verbose", opt.verbose, "print the resolved configuration to stderr");

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("-c,--config", opt.config, "config file")->required();
    sub->add_option("-o,--override", opt.overrides, "dotted key=value, repeatable");
  };

  auto* train = app.add_subcommand("train", "train a model from a config");
  add_config(train);

  std::string method;
  auto* eval = app.add_subcommand("eval", "bucketed metrics over a corpus and mask set");
  add_config(eval);
  eval->add_option("--method", method, "override eval.method (model|oracle|zero_fill)");
  bool oracle = false;
  eval->add_flag("--oracle", oracle, "shorthand for --method oracle");

  std::string image, mask, checkpoint, out;
  auto* inpaint = app.add_subcommand("inpaint", "fill the missing region of one image");
  inpaint->add_option("--image", image, "input image")->required();
  inpaint->add_option("--mask", mask, "mask image (255 existing, 0 missing)")->required();
  inpaint->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
  inpaint->add_option("--out", out, "output image path")->required();

  GenMaskArgs gm;
  auto* gen = app.add_subcommand("gen-masks", "write random irregular masks");
  gen->add_option("--kind", gm.kind, "contiguous|discontiguous")->capture_default_str();
  gen->add_option("--ratio-lo", gm.ratio_lo, "minimum missing ratio")->capture_default_str();
  gen->add_option("--ratio-hi", gm.ratio_hi, "maximum missing ratio (<= 0.6)")->capture_default_str();
  gen->add_option("--count", gm.count, "number of masks")->capture_default_str();
  gen->add_option("--size", gm.size, "mask side in pixels")->capture_default_str();
  gen->add_option("--seed", gm.seed, "generator seed")->capture_default_str();
  gen->add_option("--out-dir", gm.out_dir, "output directory")->required();

  std::string serve_ckpt;
  int serve_port = -1;
  auto* serve = app.add_subcommand("serve", "HTTP inference service");
  serve->add_option("-c,--config", opt.config, "config file");
  serve->add_option("-o,--override", opt.overrides, "dotted key=value, repeatable");
  serve->add_option("--checkpoint", serve_ckpt, "checkpoint to load at startup");
  serve->add_option("--port", serve_port, "listen port (overrides serve.port)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*train) return cmd_train(opt);
    if (*eval) return cmd_eval(opt, oracle ? "oracle" : method);
    if (*inpaint) return cmd_inpaint(image, mask, checkpoint, out);
    if (*gen) return cmd_gen_masks(gm);
    if (*serve) return cmd_serve(opt, serve_ckpt, serve_port);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kUsage;
  } catch (const VersionError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kUsage;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntime;
  }
  return kUsage;
}

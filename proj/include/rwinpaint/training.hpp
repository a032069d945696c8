#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "rwinpaint/archive.hpp"
#include "rwinpaint/data.hpp"
#include "rwinpaint/features.hpp"
#include "rwinpaint/losses.hpp"
#include "rwinpaint/mask.hpp"
#include "rwinpaint/optim.hpp"
#include "rwinpaint/regionwise.hpp"

namespace rwinpaint {

enum class PhaseUnit { epochs, steps };
enum class CorrelationOn { composited, predicted };

struct MaskSampling {
  double contiguous_prob = 0.5;
  double ratio_lo = 0.0;
  double ratio_hi = 0.4;
};

struct FeatureConfig {
  BackboneKind backbone = BackboneKind::tiny;
  std::string weights;       // VGG archive; falls back to the environment variable
  std::uint64_t seed = 1234; // tiny backbone only
};

struct TrainConfig {
  std::string train_dir;
  int image_size = 64;
  int batch_size = 8;
  int epochs = 29;
  int pretrain_epochs = 20;
  PhaseUnit phase_unit = PhaseUnit::epochs;
  std::uint64_t pretrain_steps = 0;
  AdamConfig gen_opt;
  AdamConfig disc_opt;
  LossWeights loss;
  CorrelationOn correlation_on = CorrelationOn::composited;
  MaskSampling masks;
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  FeatureConfig features;
  std::uint64_t seed = 1;
  int checkpoint_every = 1;  // epochs; 0 keeps only the initial and latest checkpoints
  std::string out_dir;
  std::string resume;
};

inline FeatureExtractor<float> make_extractor(const FeatureConfig& f) {
  if (f.backbone == BackboneKind::vgg16) return FeatureExtractor<float>::vgg16_from_config(f.weights);
  return FeatureExtractor<float>::tiny(f.seed);
}

struct TrainState {
  std::uint64_t epoch = 0;  // completed epochs
  std::uint64_t step = 0;   // completed optimisation steps
  Generator<float> generator;
  Adam<float> gen_opt;
  Discriminator<float> discriminator;
  Adam<float> disc_opt;
  std::mt19937_64 rng;
  LossReport running;        // sums over the current epoch
  std::uint64_t running_count = 0;
};

inline TrainState init_state(const TrainConfig& cfg) {
  if (cfg.pretrain_epochs > cfg.epochs && cfg.phase_unit == PhaseUnit::epochs) {
    throw ConfigError("train.pretrain_epochs (" + std::to_string(cfg.pretrain_epochs) + ") exceeds train.epochs (" +
                      std::to_string(cfg.epochs) + ")");
  }
  if (!(cfg.gen_opt.lr > 0) || !(cfg.disc_opt.lr > 0)) throw ConfigError("learning rate must be > 0");
  TrainState s;
  s.generator = Generator<float>(cfg.generator);
  s.gen_opt = Adam<float>(s.generator.parameters(), cfg.gen_opt);
  s.discriminator = Discriminator<float>(cfg.discriminator);
  s.disc_opt = Adam<float>(s.discriminator.parameters(), cfg.disc_opt);
  s.rng.seed(cfg.seed);
  return s;
}

inline bool in_pretrain(const TrainState& s, const TrainConfig& cfg) {
  if (cfg.phase_unit == PhaseUnit::steps) return s.step < cfg.pretrain_steps;
  return s.epoch < static_cast<std::uint64_t>(cfg.pretrain_epochs);
}

inline Mask sample_training_mask(int h, int w, const MaskSampling& ms, std::mt19937_64& rng) {
  std::bernoulli_distribution pick(ms.contiguous_prob);
  MaskConfig mc;
  mc.kind = pick(rng) ? MaskKind::contiguous : MaskKind::discontiguous;
  mc.ratio_lo = ms.ratio_lo;
  mc.ratio_hi = ms.ratio_hi;
  return gen_mask(h, w, mc, rng);
}

// One iteration of the alternating scheme. Pretrain: update the generator
// with L_r + l1 L_c + l2 L_s. Afterwards: refresh spectral norms, update the
// generator with the full objective, then the discriminator on detached fakes.
inline LossReport train_step(const Tensor<float>& batch, TrainState& s, const TrainConfig& cfg,
                             const FeatureExtractor<float>& fx) {
  if (batch.n() == 0) throw DimensionError("train_step: empty batch");
  std::vector<Mask> masks;
  masks.reserve(batch.n());
  for (int n = 0; n < batch.n(); ++n) masks.push_back(sample_training_mask(batch.h(), batch.w(), cfg.masks, s.rng));
  const std::span<const Mask> mspan(masks);

  auto truth = Var<float>::constant(batch);
  auto incomplete = Var<float>::constant(apply_mask(batch, mspan));
  const bool pretrain = in_pretrain(s, cfg);
  if (!pretrain) s.discriminator.refresh_spectral(1);

  const auto out = s.generator.forward(incomplete, mspan);
  LossTerms<float> terms;
  terms.reconstruction = reconstruction_loss(out.predicted1, out.predicted2, truth);
  terms.correlation = correlation_loss(
      cfg.correlation_on == CorrelationOn::composited ? out.composited1 : out.predicted1, truth, fx);
  terms.style = style_loss(out.composited2, truth, fx);

  LossWeights w = cfg.loss;
  PatchScorer<float> scorer = [&](const Var<float>& x, std::span<const Mask> m) {
    return s.discriminator.forward(x, m);
  };
  if (!pretrain) terms.adversarial_g = adversarial_generator_loss(scorer, out.predicted1, out.predicted2, mspan);
  else w.adversarial = 0.0;

  LossReport r;
  r.reconstruction = terms.reconstruction.item();
  r.correlation = terms.correlation.item();
  r.style = terms.style.item();
  r.adversarial_g = terms.adversarial_g ? terms.adversarial_g->item() : 0.0;
  auto total = total_loss(terms, w);
  r.total = total.item();

  s.gen_opt.zero_grad();
  s.disc_opt.zero_grad();
  backward(total);
  s.gen_opt.step();

  if (!pretrain) {
    // Whatever reached D through the generator objective is discarded.
    s.disc_opt.zero_grad();
    auto loss_d = adversarial_discriminator_loss(scorer, out.predicted1, out.predicted2, truth, mspan, w.alpha);
    r.adversarial_d = loss_d.item();
    require_finite("adversarial_d", r.adversarial_d);
    backward(loss_d);
    s.disc_opt.step();
  }
  s.gen_opt.zero_grad();
  s.disc_opt.zero_grad();

  ++s.step;
  s.running.reconstruction += r.reconstruction;
  s.running.correlation += r.correlation;
  s.running.style += r.style;
  s.running.adversarial_g += r.adversarial_g;
  s.running.adversarial_d += r.adversarial_d;
  s.running.total += r.total;
  ++s.running_count;
  return r;
}

// ---- checkpoints ---------------------------------------------------------

inline constexpr const char* kCheckpointFormat = "rwinpaint-checkpoint";

inline void put_model_config(Archive& a, const GeneratorConfig& g, const DiscriminatorConfig& d, int image_size) {
  a.put("model/image_size", static_cast<std::uint64_t>(image_size));
  a.put("model/gen/base_width", static_cast<std::uint64_t>(g.base_width));
  a.put("model/gen/levels", static_cast<std::uint64_t>(g.levels));
  a.put("model/gen/skip_links", static_cast<std::uint64_t>(g.skip_links));
  a.put("model/gen/regionwise_decoder", static_cast<std::uint64_t>(g.regionwise_decoder));
  a.put("model/gen/kernel", static_cast<std::uint64_t>(g.kernel));
  a.put("model/gen/activation", static_cast<std::uint64_t>(g.activation));
  a.put("model/gen/seed", g.seed);
  a.put("model/disc/levels", static_cast<std::uint64_t>(d.levels));
  a.put("model/disc/base_width", static_cast<std::uint64_t>(d.base_width));
  a.put("model/disc/spectral_norm", static_cast<std::uint64_t>(d.spectral_norm));
  a.put("model/disc/leaky_slope", d.leaky_slope);
  a.put("model/disc/init_power_iterations", static_cast<std::uint64_t>(d.init_power_iterations));
  a.put("model/disc/seed", d.seed);
}

inline GeneratorConfig get_generator_config(const Archive& a) {
  GeneratorConfig g;
  g.base_width = static_cast<int>(a.get<std::uint64_t>("model/gen/base_width"));
  g.levels = static_cast<int>(a.get<std::uint64_t>("model/gen/levels"));
  g.skip_links = a.get<std::uint64_t>("model/gen/skip_links") != 0;
  g.regionwise_decoder = a.get<std::uint64_t>("model/gen/regionwise_decoder") != 0;
  g.kernel = static_cast<int>(a.get<std::uint64_t>("model/gen/kernel"));
  g.activation = static_cast<Activation>(a.get<std::uint64_t>("model/gen/activation"));
  g.seed = a.get<std::uint64_t>("model/gen/seed");
  return g;
}

inline DiscriminatorConfig get_discriminator_config(const Archive& a) {
  DiscriminatorConfig d;
  d.levels = static_cast<int>(a.get<std::uint64_t>("model/disc/levels"));
  d.base_width = static_cast<int>(a.get<std::uint64_t>("model/disc/base_width"));
  d.spectral_norm = a.get<std::uint64_t>("model/disc/spectral_norm") != 0;
  d.leaky_slope = a.get<double>("model/disc/leaky_slope");
  d.init_power_iterations = static_cast<int>(a.get<std::uint64_t>("model/disc/init_power_iterations"));
  d.seed = a.get<std::uint64_t>("model/disc/seed");
  return d;
}

inline void put_parameters(Archive& a, const std::string& prefix, const ParameterSet<float>& ps) {
  for (const auto& [name, v] : ps) a.put(prefix + name, v.value());
}

// Copies stored tensors into live parameters; names and shapes must match.
inline void restore_parameters(const Archive& a, const std::string& prefix, ParameterSet<float>& ps) {
  for (auto& [name, v] : ps) {
    const std::string key = prefix + name;
    if (!a.contains(key)) throw ShapeMismatchError("checkpoint has no tensor for layer '" + key + "'");
    const auto& t = a.get<Tensor<float>>(key);
    if (!(t.shape() == v.shape())) {
      throw ShapeMismatchError("layer '" + key + "': checkpoint shape " + t.shape().str() + " vs model shape " +
                               v.shape().str());
    }
    v.mutable_value() = t;
  }
  std::size_t stored = 0;
  for (const auto& [key, value] : a.entries()) stored += key.rfind(prefix, 0) == 0;
  if (stored != ps.size()) {
    throw ShapeMismatchError("checkpoint section '" + prefix + "' holds " + std::to_string(stored) +
                             " tensors, model expects " + std::to_string(ps.size()));
  }
}

inline Tensor<float> vector_tensor(const Buffer<float>& v) {
  return Tensor<float>(Shape{1, 1, 1, static_cast<int>(v.size())}, v);
}

inline Archive checkpoint_archive(const TrainState& s, const TrainConfig& cfg, const std::string& config_echo = "") {
  Archive a;
  a.put("meta/format", std::string(kCheckpointFormat));
  a.put("meta/config", config_echo);
  put_model_config(a, s.generator.config(), s.discriminator.config(), cfg.image_size);
  a.put("state/epoch", s.epoch);
  a.put("state/step", s.step);
  std::ostringstream rng;
  rng << s.rng;
  a.put("state/rng", rng.str());
  a.put("state/running/reconstruction", s.running.reconstruction);
  a.put("state/running/correlation", s.running.correlation);
  a.put("state/running/style", s.running.style);
  a.put("state/running/adversarial_g", s.running.adversarial_g);
  a.put("state/running/adversarial_d", s.running.adversarial_d);
  a.put("state/running/total", s.running.total);
  a.put("state/running/count", s.running_count);
  put_parameters(a, "gen/", s.generator.parameters());
  put_parameters(a, "disc/", s.discriminator.parameters());
  s.gen_opt.save(a, "gen_adam/");
  s.disc_opt.save(a, "disc_adam/");
  const auto& layers = s.discriminator.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    a.put("disc_sn/l" + std::to_string(i) + "/u", vector_tensor(layers[i].u));
    a.put("disc_sn/l" + std::to_string(i) + "/v", vector_tensor(layers[i].v));
  }
  return a;
}

inline void save_checkpoint(const TrainState& s, const TrainConfig& cfg, const std::filesystem::path& path,
                            const std::string& config_echo = "") {
  checkpoint_archive(s, cfg, config_echo).save(path);
}

inline void require_checkpoint(const Archive& a, const std::string& origin) {
  if (!a.contains("meta/format") || a.get<std::string>("meta/format") != kCheckpointFormat) {
    throw CorruptFileError(origin + ": not a rwinpaint checkpoint");
  }
}

// Overwrites `s` (built from some config) with the checkpoint contents.
inline void restore_checkpoint(TrainState& s, const Archive& a) {
  require_checkpoint(a, "checkpoint");
  auto gp = s.generator.parameters();
  restore_parameters(a, "gen/", gp);
  auto dp = s.discriminator.parameters();
  restore_parameters(a, "disc/", dp);
  s.gen_opt.load(a, "gen_adam/");
  s.disc_opt.load(a, "disc_adam/");
  auto& layers = s.discriminator.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string k = "disc_sn/l" + std::to_string(i) + "/";
    const auto& u = a.get<Tensor<float>>(k + "u");
    const auto& v = a.get<Tensor<float>>(k + "v");
    if (u.size() != layers[i].u.size() || v.size() != layers[i].v.size()) {
      throw ShapeMismatchError("spectral-norm vectors for discriminator layer l" + std::to_string(i) + " differ");
    }
    layers[i].u = u.storage();
    layers[i].v = v.storage();
  }
  s.epoch = a.get<std::uint64_t>("state/epoch");
  s.step = a.get<std::uint64_t>("state/step");
  std::istringstream rng(a.get<std::string>("state/rng"));
  rng >> s.rng;
  if (!rng) throw CorruptFileError("checkpoint RNG state unreadable");
  s.running.reconstruction = a.get<double>("state/running/reconstruction");
  s.running.correlation = a.get<double>("state/running/correlation");
  s.running.style = a.get<double>("state/running/style");
  s.running.adversarial_g = a.get<double>("state/running/adversarial_g");
  s.running.adversarial_d = a.get<double>("state/running/adversarial_d");
  s.running.total = a.get<double>("state/running/total");
  s.running_count = a.get<std::uint64_t>("state/running/count");
}

inline void restore_checkpoint(TrainState& s, const std::filesystem::path& path) {
  restore_checkpoint(s, Archive::load(path));
}

// Self-describing load: networks are rebuilt from the stored model config.
inline TrainState load_checkpoint(const std::filesystem::path& path, TrainConfig cfg = {}) {
  const Archive a = Archive::load(path);
  require_checkpoint(a, path.string());
  cfg.generator = get_generator_config(a);
  cfg.discriminator = get_discriminator_config(a);
  cfg.image_size = static_cast<int>(a.get<std::uint64_t>("model/image_size"));
  cfg.pretrain_epochs = 0;
  TrainState s = init_state(cfg);
  restore_checkpoint(s, a);
  return s;
}

// Generator-only view used by inference and evaluation.
struct InferenceModel {
  Generator<float> generator;
  int image_size = 64;
  std::string id;
};

inline InferenceModel load_inference_model(const std::filesystem::path& path) {
  const Archive a = Archive::load(path);
  require_checkpoint(a, path.string());
  InferenceModel m;
  m.generator = Generator<float>(get_generator_config(a));
  m.image_size = static_cast<int>(a.get<std::uint64_t>("model/image_size"));
  auto ps = m.generator.parameters();
  restore_parameters(a, "gen/", ps);
  const auto bytes = a.to_bytes();
  // The trailing 4 bytes are the archive's own crc; hashing them too would
  // give the same residue for every file.
  const auto crc = ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size() - 4));
  std::ostringstream id;
  id << path.stem().string() << "-" << std::hex << std::setw(8) << std::setfill('0') << crc;
  m.id = id.str();
  return m;
}

// ---- loop ------------------------------------------------------------------

struct EpochRow {
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
  LossReport mean;
};

inline constexpr const char* kLogHeader = "epoch,step,l_r,l_c,l_s,l_a_g,l_a_d,total";

inline std::string format_row(const EpochRow& r) {
  std::ostringstream o;
  o << std::setprecision(9) << r.epoch << ',' << r.step << ',' << r.mean.reconstruction << ',' << r.mean.correlation
    << ',' << r.mean.style << ',' << r.mean.adversarial_g << ',' << r.mean.adversarial_d << ',' << r.mean.total;
  return o.str();
}

struct TrainResult {
  TrainState state;
  std::vector<EpochRow> log;
};

inline std::filesystem::path epoch_checkpoint_path(const std::filesystem::path& dir, std::uint64_t epoch) {
  std::ostringstream name;
  name << "epoch_" << std::setw(4) << std::setfill('0') << epoch << ".ckpt";
  return dir / name.str();
}

// Runs epochs [state.epoch, cfg.epochs). With cfg.out_dir set, writes
// epoch_0000.ckpt (fresh runs), epoch_NNNN.ckpt at the cadence,
// latest.ckpt after every epoch, and appends rows to train_log.csv.
inline TrainResult train_loop(const TrainConfig& cfg, const ImageCorpus<float>& corpus,
                              const FeatureExtractor<float>& fx, const std::string& config_echo = "",
                              const std::function<void(const EpochRow&)>& on_epoch = {}) {
  namespace fs = std::filesystem;
  TrainResult res{init_state(cfg), {}};
  TrainState& s = res.state;
  const bool resuming = !cfg.resume.empty();
  if (resuming) restore_checkpoint(s, fs::path(cfg.resume));

  fs::path log_path;
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    log_path = fs::path(cfg.out_dir) / "train_log.csv";
    if (!resuming || !fs::exists(log_path)) {
      std::ofstream f(log_path, std::ios::trunc);
      if (!f) throw IoError("cannot write '" + log_path.string() + "'");
      f << kLogHeader << "\n";
    }
    if (!resuming) save_checkpoint(s, cfg, epoch_checkpoint_path(cfg.out_dir, 0), config_echo);
  }

  while (s.epoch < static_cast<std::uint64_t>(cfg.epochs)) {
    s.running = LossReport{};
    s.running_count = 0;
    for (const auto& idx : epoch_batches(corpus.size(), cfg.batch_size, cfg.seed, s.epoch)) {
      train_step(corpus.gather(idx), s, cfg, fx);
    }
    ++s.epoch;
    EpochRow row{s.epoch, s.step, {}};
    const double k = s.running_count ? 1.0 / static_cast<double>(s.running_count) : 0.0;
    row.mean = {s.running.reconstruction * k, s.running.correlation * k, s.running.style * k,
                s.running.adversarial_g * k,  s.running.adversarial_d * k, s.running.total * k};
    res.log.push_back(row);
    if (on_epoch) on_epoch(row);
    if (!cfg.out_dir.empty()) {
      std::ofstream f(log_path, std::ios::app);
      if (!f) throw IoError("cannot append to '" + log_path.string() + "'");
      f << format_row(row) << "\n";
      if (cfg.checkpoint_every > 0 && s.epoch % static_cast<std::uint64_t>(cfg.checkpoint_every) == 0) {
        save_checkpoint(s, cfg, epoch_checkpoint_path(cfg.out_dir, s.epoch), config_echo);
      }
      save_checkpoint(s, cfg, fs::path(cfg.out_dir) / "latest.ckpt", config_echo);
    }
  }
  return res;
}

}  // namespace rwinpaint

#pragma once

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "rwinpaint/errors.hpp"
#include "rwinpaint/mask.hpp"
#include "rwinpaint/training.hpp"

namespace rwinpaint {

// Flat `key = value` documents, '#' comments, `version = 1` required.

enum class EvalMethod { model, oracle, zero_fill };

struct EvalConfig {
  std::string data_dir;
  std::string mask_dir;
  std::string checkpoint;
  EvalMethod method = EvalMethod::model;
  std::string csv;           // report destination; empty -> stdout only
  std::uint64_t fid_seed = 4321;
};

struct ServeConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string checkpoint;    // optional model to load at startup
  int max_concurrent = 4;
  std::size_t max_payload_mb = 16;
};

struct AppConfig {
  TrainConfig train;
  EvalConfig eval;
  ServeConfig serve;
};

inline constexpr int kConfigVersion = 1;

namespace detail {

inline std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

template <typename N>
N parse_number(const std::string& key, const std::string& v) {
  N out{};
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) {
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as a " +
                      (std::is_integral_v<N> ? "integer" : "number"));
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

template <typename E>
E parse_choice(const std::string& key, const std::string& v, std::initializer_list<std::pair<const char*, E>> opts) {
  std::string names;
  for (const auto& [n, e] : opts) {
    if (v == n) return e;
    names += names.empty() ? n : std::string("|") + n;
  }
  throw ConfigError("config key '" + key + "': '" + v + "' is not one of " + names);
}

template <typename E>
std::string choice_name(E e, std::initializer_list<std::pair<const char*, E>> opts) {
  for (const auto& [n, x] : opts)
    if (x == e) return n;
  return "?";
}

inline std::string num(double v) {
  std::ostringstream o;
  o << std::setprecision(17) << v;
  return o.str();
}

inline std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace detail

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(AppConfig&, const std::string&)> set;
  std::function<std::string(const AppConfig&)> get;
};

// The schema. Every key the parser accepts is listed here exactly once.
inline const std::vector<ConfigKey>& config_schema() {
  using namespace detail;
  static const auto phase_opts = {std::pair{"epochs", PhaseUnit::epochs}, std::pair{"steps", PhaseUnit::steps}};
  static const auto corr_opts = {std::pair{"composited", CorrelationOn::composited},
                                 std::pair{"predicted", CorrelationOn::predicted}};
  static const auto backbone_opts = {std::pair{"tiny", BackboneKind::tiny}, std::pair{"vgg16", BackboneKind::vgg16}};
  static const auto method_opts = {std::pair{"model", EvalMethod::model}, std::pair{"oracle", EvalMethod::oracle},
                                   std::pair{"zero_fill", EvalMethod::zero_fill}};

#define RW_INT(key, field, help)                                                                   \
  ConfigKey {                                                                                      \
    key, help, [](AppConfig& c, const std::string& v) {                                            \
      c.field = parse_number<std::decay_t<decltype(c.field)>>(key, v);                             \
    },                                                                                             \
        [](const AppConfig& c) { return std::to_string(c.field); }                                 \
  }
#define RW_REAL(key, field, help)                                                                  \
  ConfigKey {                                                                                      \
    key, help, [](AppConfig& c, const std::string& v) { c.field = parse_number<double>(key, v); }, \
        [](const AppConfig& c) { return num(c.field); }                                            \
  }
#define RW_BOOL(key, field, help)                                                                  \
  ConfigKey {                                                                                      \
    key, help, [](AppConfig& c, const std::string& v) { c.field = parse_bool(key, v); },           \
        [](const AppConfig& c) { return std::string(c.field ? "true" : "false"); }                 \
  }
#define RW_STR(key, field, help)                                                                   \
  ConfigKey {                                                                                      \
    key, help, [](AppConfig& c, const std::string& v) { c.field = v; },                            \
        [](const AppConfig& c) { return c.field; }                                                 \
  }
#define RW_CHOICE(key, field, opts, help)                                                          \
  ConfigKey {                                                                                      \
    key, help, [](AppConfig& c, const std::string& v) { c.field = parse_choice(key, v, opts); },   \
        [](const AppConfig& c) { return choice_name(c.field, opts); }                              \
  }

  static const std::vector<ConfigKey> keys = {
      ConfigKey{"version", "config format version (must be 1)",
                [](AppConfig&, const std::string& v) {
                  if (parse_number<int>("version", v) != kConfigVersion)
                    throw VersionError("config version " + v + " is not supported (expected " +
                                       std::to_string(kConfigVersion) + ")");
                },
                [](const AppConfig&) { return std::to_string(kConfigVersion); }},
      RW_STR("data.train_dir", train.train_dir, "directory of training images"),
      RW_INT("data.image_size", train.image_size, "square side images are resized to"),
      RW_INT("train.batch_size", train.batch_size, "images per optimisation step"),
      RW_INT("train.epochs", train.epochs, "total epochs"),
      RW_INT("train.pretrain_epochs", train.pretrain_epochs, "epochs before the adversarial term switches on"),
      RW_CHOICE("train.phase_unit", train.phase_unit, phase_opts, "pretrain length measured in epochs|steps"),
      RW_INT("train.pretrain_steps", train.pretrain_steps, "pretrain length when phase_unit = steps"),
      RW_CHOICE("train.correlation_on", train.correlation_on, corr_opts,
                "correlation loss input: composited|predicted first-stage output"),
      RW_INT("train.seed", train.seed, "seed for batch order and mask sampling"),
      RW_INT("train.checkpoint_every", train.checkpoint_every, "epochs between numbered checkpoints (0 = none)"),
      RW_STR("train.out_dir", train.out_dir, "directory for checkpoints and train_log.csv"),
      RW_STR("train.resume", train.resume, "checkpoint to resume from"),
      RW_REAL("optim.gen.lr", train.gen_opt.lr, "generator learning rate"),
      RW_REAL("optim.gen.beta1", train.gen_opt.beta1, "generator Adam beta1"),
      RW_REAL("optim.gen.beta2", train.gen_opt.beta2, "generator Adam beta2"),
      RW_REAL("optim.disc.lr", train.disc_opt.lr, "discriminator learning rate"),
      RW_REAL("optim.disc.beta1", train.disc_opt.beta1, "discriminator Adam beta1"),
      RW_REAL("optim.disc.beta2", train.disc_opt.beta2, "discriminator Adam beta2"),
      RW_REAL("loss.lambda_correlation", train.loss.correlation, "weight of the correlation loss"),
      RW_REAL("loss.lambda_style", train.loss.style, "weight of the style loss"),
      RW_REAL("loss.lambda_adversarial", train.loss.adversarial, "weight of the adversarial loss after pretrain"),
      RW_REAL("loss.alpha", train.loss.alpha, "weight of the real-image term in the adversarial loss"),
      RW_REAL("masks.contiguous_prob", train.masks.contiguous_prob, "probability a training mask is contiguous"),
      RW_REAL("masks.ratio_lo", train.masks.ratio_lo, "lower bound of the training missing ratio"),
      RW_REAL("masks.ratio_hi", train.masks.ratio_hi, "upper bound of the training missing ratio (<= 0.6)"),
      RW_INT("model.gen.base_width", train.generator.base_width, "generator channels at full resolution"),
      RW_INT("model.gen.levels", train.generator.levels, "generator resolution levels"),
      RW_BOOL("model.gen.skip_links", train.generator.skip_links, "encoder-decoder skip links"),
      RW_BOOL("model.gen.regionwise_decoder", train.generator.regionwise_decoder,
              "region-wise convolutions in the first-stage decoder"),
      RW_INT("model.gen.seed", train.generator.seed, "generator init seed"),
      RW_INT("model.disc.levels", train.discriminator.levels, "discriminator stride-2 stages"),
      RW_INT("model.disc.base_width", train.discriminator.base_width, "discriminator first-stage channels"),
      RW_BOOL("model.disc.spectral_norm", train.discriminator.spectral_norm, "spectral normalisation"),
      RW_INT("model.disc.seed", train.discriminator.seed, "discriminator init seed"),
      RW_CHOICE("features.backbone", train.features.backbone, backbone_opts, "loss feature extractor: tiny|vgg16"),
      RW_STR("features.weights", train.features.weights,
             "VGG16 weights archive (falls back to $RWINPAINT_VGG16_WEIGHTS)"),
      RW_INT("features.seed", train.features.seed, "tiny backbone init seed"),
      RW_STR("eval.data_dir", eval.data_dir, "directory of evaluation images"),
      RW_STR("eval.mask_dir", eval.mask_dir, "directory of evaluation masks"),
      RW_STR("eval.checkpoint", eval.checkpoint, "checkpoint evaluated when method = model"),
      RW_CHOICE("eval.method", eval.method, method_opts, "inpainter: model|oracle|zero_fill"),
      RW_STR("eval.csv", eval.csv, "CSV report path"),
      RW_INT("eval.fid_seed", eval.fid_seed, "seed of the frozen FID encoder"),
      RW_STR("serve.host", serve.host, "listen address"),
      RW_INT("serve.port", serve.port, "listen port (0 = pick a free one)"),
      RW_STR("serve.checkpoint", serve.checkpoint, "checkpoint loaded at startup"),
      RW_INT("serve.max_concurrent", serve.max_concurrent, "inpaint requests processed at once"),
      RW_INT("serve.max_payload_mb", serve.max_payload_mb, "request size cap in MiB"),
  };
#undef RW_INT
#undef RW_REAL
#undef RW_BOOL
#undef RW_STR
#undef RW_CHOICE
  return keys;
}

inline const ConfigKey& find_key(const std::string& name) {
  const auto& keys = config_schema();
  for (const auto& k : keys)
    if (k.name == name) return k;
  const ConfigKey* best = nullptr;
  std::size_t best_d = std::string::npos;
  for (const auto& k : keys) {
    const auto d = detail::edit_distance(name, k.name);
    if (d < best_d) best_d = d, best = &k;
  }
  std::string msg = "unknown config key '" + name + "'";
  if (best && best_d <= std::max<std::size_t>(3, name.size() / 3)) msg += " (did you mean '" + best->name + "'?)";
  throw ConfigError(msg);
}

inline void set_key(AppConfig& c, const std::string& assignment, const std::string& where) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError(where + ": expected key = value, got '" + assignment + "'");
  const auto key = detail::trim(assignment.substr(0, eq));
  const auto value = detail::trim(assignment.substr(eq + 1));
  try {
    find_key(key).set(c, value);
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

inline void validate(const AppConfig& c) {
  const auto& t = c.train;
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (t.image_size < 16) fail("data.image_size must be >= 16");
  if (t.batch_size < 1) fail("train.batch_size must be >= 1");
  if (t.epochs < 0) fail("train.epochs must be >= 0");
  if (t.pretrain_epochs < 0) fail("train.pretrain_epochs must be >= 0");
  if (t.phase_unit == PhaseUnit::epochs && t.pretrain_epochs > t.epochs)
    fail("train.pretrain_epochs (" + std::to_string(t.pretrain_epochs) + ") exceeds train.epochs (" +
         std::to_string(t.epochs) + ")");
  if (!(t.gen_opt.lr > 0) || !(t.disc_opt.lr > 0)) fail("learning rates must be > 0");
  for (const auto* o : {&t.gen_opt, &t.disc_opt})
    if (o->beta1 < 0 || o->beta1 >= 1 || o->beta2 < 0 || o->beta2 >= 1) fail("Adam betas must lie in [0, 1)");
  if (t.masks.ratio_lo < 0 || t.masks.ratio_lo > t.masks.ratio_hi || t.masks.ratio_hi > kMaxMaskRatio)
    fail("mask ratios need 0 <= masks.ratio_lo <= masks.ratio_hi <= 0.6");
  if (t.masks.contiguous_prob < 0 || t.masks.contiguous_prob > 1) fail("masks.contiguous_prob must lie in [0, 1]");
  if (t.generator.levels < 1 || t.generator.base_width < 1) fail("generator levels and width must be >= 1");
  if (t.image_size % (1 << (t.generator.levels - 1)) != 0)
    fail("data.image_size must be divisible by 2^(model.gen.levels - 1)");
  if (t.discriminator.levels < 1 || t.image_size % (1 << t.discriminator.levels) != 0)
    fail("data.image_size must be divisible by 2^model.disc.levels");
  if (t.checkpoint_every < 0) fail("train.checkpoint_every must be >= 0");
  if (c.serve.max_concurrent < 1) fail("serve.max_concurrent must be >= 1");
  if (c.serve.max_payload_mb < 1) fail("serve.max_payload_mb must be >= 1");
  if (c.serve.port < 0 || c.serve.port > 65535) fail("serve.port out of range");
}

inline AppConfig parse_config(const std::string& text, const std::string& origin = "<config>") {
  AppConfig c;
  std::istringstream in(text);
  bool versioned = false;
  int lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (detail::trim(line.substr(0, line.find('='))) == "version") versioned = true;
    set_key(c, line, where);
  }
  if (!versioned) throw ConfigError(origin + ": missing 'version = " + std::to_string(kConfigVersion) + "'");
  return c;
}

inline AppConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::stringstream buf;
  buf << f.rdbuf();
  AppConfig c = parse_config(buf.str(), path.string());
  for (const auto& o : overrides) set_key(c, o, "override");
  validate(c);
  return c;
}

// Canonical dump; parse_config(echo(c)) == c.
inline std::string echo(const AppConfig& c) {
  std::ostringstream o;
  for (const auto& k : config_schema()) o << k.name << " = " << k.get(c) << "\n";
  return o.str();
}

inline std::string schema_help() {
  std::ostringstream o;
  const AppConfig defaults;
  o << "Config keys (file: one `key = value` per line, '#' comments):\n";
  for (const auto& k : config_schema()) {
    o << "  " << k.name;
    o << std::string(k.name.size() < 30 ? 30 - k.name.size() : 1, ' ') << k.help << " [default: " << k.get(defaults)
      << "]\n";
  }
  return o.str();
}

}  // namespace rwinpaint

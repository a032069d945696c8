#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "rwinpaint/errors.hpp"
#include "rwinpaint/image_io.hpp"
#include "rwinpaint/tensor.hpp"

namespace rwinpaint {

inline bool is_supported_image(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

struct CorpusManifest {
  std::string split;
  std::vector<std::string> files;  // absolute or root-relative, lexicographic
  int image_size = 64;
  std::size_t skipped = 0;         // unsupported files seen while scanning

  std::size_t size() const { return files.size(); }

  // FNV-1a over the ordered list; stable across runs and platforms.
  std::uint64_t checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& f : files) {
      for (unsigned char c : f) h = (h ^ c) * 0x100000001b3ULL;
      h = (h ^ 0xff) * 0x100000001b3ULL;
    }
    return h;
  }
};

// Lists images under root (or root/split when that subdirectory exists),
// sorted lexicographically. Subdirectories are not descended into.
inline CorpusManifest build_manifest(const std::filesystem::path& root, const std::string& split = "",
                                     int image_size = 64) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw IoError("corpus directory '" + root.string() + "' does not exist");
  fs::path dir = root;
  if (!split.empty() && fs::is_directory(root / split)) dir = root / split;
  CorpusManifest m;
  m.split = split.empty() ? "all" : split;
  m.image_size = image_size;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    if (is_supported_image(e.path())) {
      m.files.push_back(e.path().string());
    } else {
      ++m.skipped;
    }
  }
  std::sort(m.files.begin(), m.files.end());
  m.files.erase(std::unique(m.files.begin(), m.files.end()), m.files.end());
  if (m.files.empty()) throw EmptyCorpusError("no images found in '" + dir.string() + "'");
  return m;
}

inline void save_manifest(const CorpusManifest& m, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write manifest '" + path.string() + "'");
  f << "# rwinpaint-manifest v1 split=" << m.split << " size=" << m.image_size << " checksum=" << std::hex
    << m.checksum() << std::dec << "\n";
  for (const auto& file : m.files) f << file << "\n";
}

inline CorpusManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read manifest '" + path.string() + "'");
  std::string header;
  std::getline(f, header);
  if (header.rfind("# rwinpaint-manifest v1", 0) != 0) throw CorruptFileError(path.string() + ": not a manifest");
  CorpusManifest m;
  std::uint64_t stored = 0;
  std::istringstream hs(header.substr(23));
  for (std::string tok; hs >> tok;) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) continue;
    const std::string k = tok.substr(0, eq), v = tok.substr(eq + 1);
    if (k == "split") m.split = v;
    if (k == "size") m.image_size = std::stoi(v);
    if (k == "checksum") stored = std::stoull(v, nullptr, 16);
  }
  for (std::string line; std::getline(f, line);)
    if (!line.empty()) m.files.push_back(line);
  if (m.checksum() != stored) throw CorruptFileError(path.string() + ": manifest checksum mismatch");
  if (m.files.empty()) throw EmptyCorpusError(path.string() + ": manifest lists no images");
  return m;
}

// Index batches for one epoch: seeded shuffle, final partial batch kept.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t items, std::size_t batch_size,
                                                           std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  std::vector<std::size_t> order(items);
  for (std::size_t i = 0; i < items; ++i) order[i] = i;
  std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * (epoch + 1)));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < items; i += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(items, i + batch_size)));
  }
  return out;
}

// Decoded, normalised corpus held in memory (desk-scale datasets).
template <typename T = float>
class ImageCorpus {
 public:
  explicit ImageCorpus(const CorpusManifest& m) : manifest_(m) {
    images_.reserve(m.files.size());
    for (const auto& f : m.files) images_.push_back(load_and_normalize<T>(f, m.image_size));
  }
  explicit ImageCorpus(std::vector<Tensor<T>> images) : images_(std::move(images)) {
    if (images_.empty()) throw EmptyCorpusError("corpus holds no images");
    manifest_.split = "memory";
    manifest_.image_size = images_.front().h();
  }

  std::size_t size() const { return images_.size(); }
  const Tensor<T>& image(std::size_t i) const { return images_[i]; }
  const CorpusManifest& manifest() const { return manifest_; }

  Tensor<T> gather(const std::vector<std::size_t>& idx) const {
    std::vector<Tensor<T>> picked;
    picked.reserve(idx.size());
    for (std::size_t i : idx) picked.push_back(images_.at(i));
    return stack_samples(std::span<const Tensor<T>>(picked));
  }

 private:
  CorpusManifest manifest_;
  std::vector<Tensor<T>> images_;
};

// Batches of decoded images for one epoch.
template <typename T>
std::vector<Tensor<T>> batch_iter(const ImageCorpus<T>& corpus, std::size_t batch_size, std::uint64_t seed,
                                  std::uint64_t epoch = 0) {
  std::vector<Tensor<T>> out;
  for (const auto& idx : epoch_batches(corpus.size(), batch_size, seed, epoch)) out.push_back(corpus.gather(idx));
  return out;
}

}  // namespace rwinpaint

#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "rwinpaint/errors.hpp"
#include "rwinpaint/tensor.hpp"

namespace rwinpaint {

static_assert(std::endian::native == std::endian::little, "archive format assumes a little-endian host");

// Versioned, checksummed key-value container used for checkpoints and
// backbone weights.
//
// Layout (little endian):
//   "RWINPARC"  u32 version  u64 entry_count
//   per entry:  u32 key_len  key  u8 tag  payload
//   u32 crc32 of every preceding byte
//
// Tags: 1 string (u64 len + bytes), 2 u64, 3 f64,
//       4 f32 tensor, 5 f64 tensor (4 x i32 shape + raw data).
class Archive {
 public:
  using Entry = std::variant<std::string, std::uint64_t, double, Tensor<float>, Tensor<double>>;
  static constexpr char kMagic[8] = {'R', 'W', 'I', 'N', 'P', 'A', 'R', 'C'};
  static constexpr std::uint32_t kVersion = 1;

  void put(const std::string& key, Entry value) { entries_[key] = std::move(value); }
  bool contains(const std::string& key) const { return entries_.count(key) != 0; }
  const std::map<std::string, Entry>& entries() const { return entries_; }

  template <typename V>
  const V& get(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw CorruptFileError("archive entry '" + key + "' missing");
    if (const V* v = std::get_if<V>(&it->second)) return *v;
    throw CorruptFileError("archive entry '" + key + "' has unexpected type");
  }

  std::vector<char> to_bytes() const {
    std::vector<char> out;
    append(out, kMagic, sizeof(kMagic));
    append_pod(out, kVersion);
    append_pod(out, static_cast<std::uint64_t>(entries_.size()));
    for (const auto& [key, value] : entries_) {
      append_pod(out, static_cast<std::uint32_t>(key.size()));
      append(out, key.data(), key.size());
      std::visit([&](const auto& v) { write_entry(out, v); }, value);
    }
    const auto crc = static_cast<std::uint32_t>(
        ::crc32(0L, reinterpret_cast<const Bytef*>(out.data()), static_cast<uInt>(out.size())));
    append_pod(out, crc);
    return out;
  }

  static Archive from_bytes(const std::vector<char>& bytes, const std::string& origin = "<memory>") {
    if (bytes.size() < sizeof(kMagic) + 4 + 8 + 4) throw CorruptFileError(origin + ": truncated archive");
    if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) throw CorruptFileError(origin + ": bad magic");
    std::uint32_t stored_crc;
    std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
    const auto crc = static_cast<std::uint32_t>(
        ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size() - 4)));
    Reader r{bytes, sizeof(kMagic), bytes.size() - 4, origin};
    const auto version = r.pod<std::uint32_t>();
    if (crc != stored_crc) throw CorruptFileError(origin + ": checksum mismatch");
    if (version != kVersion) {
      throw VersionError(origin + ": archive version " + std::to_string(version) + ", expected " +
                         std::to_string(kVersion));
    }
    Archive a;
    const auto count = r.pod<std::uint64_t>();
    for (std::uint64_t i = 0; i < count; ++i) {
      const auto key_len = r.pod<std::uint32_t>();
      std::string key = r.string(key_len);
      const auto tag = r.pod<std::uint8_t>();
      switch (tag) {
        case 1: a.entries_[key] = r.string(r.pod<std::uint64_t>()); break;
        case 2: a.entries_[key] = r.pod<std::uint64_t>(); break;
        case 3: a.entries_[key] = r.pod<double>(); break;
        case 4: a.entries_[key] = r.tensor<float>(); break;
        case 5: a.entries_[key] = r.tensor<double>(); break;
        default: throw CorruptFileError(origin + ": unknown entry tag " + std::to_string(tag));
      }
    }
    if (r.pos != r.end) throw CorruptFileError(origin + ": trailing bytes");
    return a;
  }

  void save(const std::filesystem::path& path) const {
    const auto bytes = to_bytes();
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
      if (!f) throw IoError("cannot open " + tmp + " for writing");
      f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
      if (!f) throw IoError("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
  }

  static Archive load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return from_bytes(bytes, path.string());
  }

 private:
  struct Reader {
    const std::vector<char>& bytes;
    std::size_t pos;
    std::size_t end;
    const std::string& origin;

    void need(std::size_t n) const {
      if (n > end - pos) throw CorruptFileError(origin + ": truncated archive");
    }
    template <typename P>
    P pod() {
      need(sizeof(P));
      P v;
      std::memcpy(&v, bytes.data() + pos, sizeof(P));
      pos += sizeof(P);
      return v;
    }
    std::string string(std::uint64_t n) {
      need(n);
      std::string s(bytes.data() + pos, n);
      pos += n;
      return s;
    }
    template <typename T>
    Tensor<T> tensor() {
      Shape s{pod<std::int32_t>(), pod<std::int32_t>(), pod<std::int32_t>(), pod<std::int32_t>()};
      if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) throw CorruptFileError(origin + ": negative tensor extent");
      const std::size_t n = s.size();
      need(n * sizeof(T));
      std::vector<T> data(n);
      std::memcpy(data.data(), bytes.data() + pos, n * sizeof(T));
      pos += n * sizeof(T);
      return Tensor<T>(s, std::move(data));
    }
  };

  static void append(std::vector<char>& out, const void* p, std::size_t n) {
    const char* c = static_cast<const char*>(p);
    out.insert(out.end(), c, c + n);
  }
  template <typename P>
  static void append_pod(std::vector<char>& out, const P& v) {
    append(out, &v, sizeof(P));
  }
  static void write_entry(std::vector<char>& out, const std::string& s) {
    append_pod(out, std::uint8_t{1});
    append_pod(out, static_cast<std::uint64_t>(s.size()));
    append(out, s.data(), s.size());
  }
  static void write_entry(std::vector<char>& out, std::uint64_t v) {
    append_pod(out, std::uint8_t{2});
    append_pod(out, v);
  }
  static void write_entry(std::vector<char>& out, double v) {
    append_pod(out, std::uint8_t{3});
    append_pod(out, v);
  }
  template <typename T>
  static void write_entry(std::vector<char>& out, const Tensor<T>& t) {
    append_pod(out, std::uint8_t{sizeof(T) == 4 ? std::uint8_t{4} : std::uint8_t{5}});
    const Shape s = t.shape();
    for (std::int32_t e : {s.n, s.c, s.h, s.w}) append_pod(out, e);
    append(out, t.data(), t.size() * sizeof(T));
  }

  std::map<std::string, Entry> entries_;
};

}  // namespace rwinpaint

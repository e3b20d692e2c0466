#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace epicodec {

// Dense rank-4 layout used everywhere: (batch, height, width, channels).
struct Shape {
  int b = 0, h = 0, w = 0, c = 0;

  int64_t numel() const {
    return int64_t(b) * h * w * c;
  }
  bool operator==(const Shape&) const = default;
  std::string str() const {
    return "(" + std::to_string(b) + "," + std::to_string(h) + "," +
           std::to_string(w) + "," + std::to_string(c) + ")";
  }
};

struct ConfigError : std::runtime_error {
  std::string field_path;
  ConfigError(std::string path, const std::string& msg)
      : std::runtime_error("config field '" + path + "': " + msg),
        field_path(std::move(path)) {}
};

struct BitstreamError : std::runtime_error {
  enum class Kind { BadMagic, BadVersion, Truncated, TableMismatch };
  Kind kind;
  BitstreamError(Kind k, const std::string& msg)
      : std::runtime_error("bitstream: " + msg), kind(k) {}
};

struct HashMismatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainAborted : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// xoshiro256** seeded through splitmix64. The four state words are the
// complete resume state; checkpoints store them verbatim.
class Rng {
 public:
  explicit Rng(uint64_t seed) { reseed(seed); }
  Rng(const std::array<uint64_t, 4>& state) : s_(state) {}

  void reseed(uint64_t seed) {
    uint64_t x = seed;
    for (auto& w : s_) {
      x += 0x9e3779b97f4a7c15ull;
      uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
      w = z ^ (z >> 31);
    }
  }

  uint64_t next() {
    auto rotl = [](uint64_t v, int k) { return (v << k) | (v >> (64 - k)); };
    uint64_t result = rotl(s_[1] * 5, 7) * 9;
    uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // uniform in [0,1)
  double uniform() { return double(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  uint64_t uniform_int(uint64_t n) { return next() % n; }

  const std::array<uint64_t, 4>& state() const { return s_; }
  void set_state(const std::array<uint64_t, 4>& st) { s_ = st; }

 private:
  std::array<uint64_t, 4> s_{};
};

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const uint8_t*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

inline std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// --- little-endian binary io ------------------------------------------------

struct ByteWriter {
  std::vector<uint8_t> bytes;
  void u8(uint8_t v) { bytes.push_back(v); }
  void u16(uint16_t v) {
    for (int i = 0; i < 2; ++i) bytes.push_back(uint8_t(v >> (8 * i)));
  }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(uint8_t(v >> (8 * i)));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(uint8_t(v >> (8 * i)));
  }
  void f32(float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    u32(u);
  }
  void f64(double v) {
    uint64_t u;
    std::memcpy(&u, &v, 8);
    u64(u);
  }
  void raw(const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  void str(const std::string& s) {
    u16(uint16_t(s.size()));
    raw(s.data(), s.size());
  }
};

struct ByteReader {
  const uint8_t* p;
  size_t n;
  size_t pos = 0;
  ByteReader(const void* data, size_t size) : p(static_cast<const uint8_t*>(data)), n(size) {}

  void need(size_t k) const {
    if (pos + k > n) throw BitstreamError(BitstreamError::Kind::Truncated, "truncated stream");
  }
  uint8_t u8() {
    need(1);
    return p[pos++];
  }
  uint16_t u16() {
    need(2);
    uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= uint16_t(p[pos++]) << (8 * i);
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(p[pos++]) << (8 * i);
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(p[pos++]) << (8 * i);
    return v;
  }
  float f32() {
    uint32_t u = u32();
    float v;
    std::memcpy(&v, &u, 4);
    return v;
  }
  double f64() {
    uint64_t u = u64();
    double v;
    std::memcpy(&v, &u, 8);
    return v;
  }
  void raw(void* dst, size_t k) {
    need(k);
    std::memcpy(dst, p + pos, k);
    pos += k;
  }
  std::string str() {
    uint16_t len = u16();
    need(len);
    std::string s(reinterpret_cast<const char*>(p + pos), len);
    pos += len;
    return s;
  }
  size_t remaining() const { return n - pos; }
};

inline void write_file(const std::filesystem::path& path, const std::vector<uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

inline std::vector<uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw std::runtime_error("cannot open: " + path.string());
  auto size = f.tellg();
  f.seekg(0);
  std::vector<uint8_t> bytes(static_cast<size_t>(size), 0);
  f.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!f) throw std::runtime_error("read failed: " + path.string());
  return bytes;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  auto b = read_file(path);
  return std::string(b.begin(), b.end());
}

inline void write_text_file(const std::filesystem::path& path, const std::string& s) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path.string());
  f << s;
}

// Worker count: hardware concurrency capped by EPICODEC_THREADS.
inline int worker_threads() {
  int hw = int(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  if (const char* env = std::getenv("EPICODEC_THREADS")) {
    int cap = std::atoi(env);
    if (cap >= 1 && cap < hw) hw = cap;
  }
  return hw > 64 ? 64 : hw;
}

// Deterministic parallel map: workers write into disjoint index slots, any
// reduction over the results stays with the caller in index order.
inline void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
  int workers = worker_threads();
  if (workers <= 1 || n <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<int64_t> next{0};
  for (int t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        int64_t i = next.fetch_add(1);
        if (i >= n) return;
        fn(i);
      }
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace epicodec

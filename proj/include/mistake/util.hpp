#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace mistake::util {

/// SplitMix64 generator. Self-contained so that every seeded computation in
/// the pipeline is bit-reproducible across platforms and standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1).
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t n);

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  /// In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      using std::swap;
      swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

std::uint64_t fnv1a64(std::string_view s);
std::uint64_t hash_mix(std::uint64_t a, std::uint64_t b);
std::string hex64(std::uint64_t v);

/// Reads lines from a plain or gzip-compressed file (picked by .gz suffix).
class LineReader {
 public:
  explicit LineReader(const std::string& path);
  ~LineReader();
  LineReader(const LineReader&) = delete;
  LineReader& operator=(const LineReader&) = delete;

  /// Fetches the next line without its terminator. Returns false at EOF.
  bool next(std::string& line);

 private:
  struct Impl;
  Impl* impl_;
};

std::string read_file(const std::string& path);

/// Writes through a .partial temp file and renames into place, so an
/// interrupted run never leaves a half-written output at the final path.
void write_file_atomic(const std::string& path, std::string_view content);

std::uint64_t hash_file(const std::string& path);

/// Fixed-point decimal with trailing zeros kept ("%.*f"), locale-independent.
std::string format_fixed(double v, int decimals);

/// Lowercases ASCII letters only.
std::string to_lower(std::string_view s);

}  // namespace mistake::util

#include "mistake/util.hpp"

#include <zlib.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mistake::util {

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
  const std::uint64_t threshold = (0 - n) % n;
  for (;;) {
    std::uint64_t r = next_u64();
    if (r >= threshold) return r % n;
  }
}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t hash_mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct LineReader::Impl {
  bool gz = false;
  gzFile gzf = nullptr;
  std::ifstream plain;
  std::string pending;
  bool eof = false;
};

LineReader::LineReader(const std::string& path) : impl_(new Impl) {
  impl_->gz = path.size() > 3 && path.substr(path.size() - 3) == ".gz";
  if (impl_->gz) {
    impl_->gzf = gzopen(path.c_str(), "rb");
    if (!impl_->gzf) throw std::runtime_error("cannot open " + path);
  } else {
    impl_->plain.open(path, std::ios::binary);
    if (!impl_->plain) throw std::runtime_error("cannot open " + path);
  }
}

LineReader::~LineReader() {
  if (impl_->gzf) gzclose(impl_->gzf);
  delete impl_;
}

bool LineReader::next(std::string& line) {
  line.clear();
  if (impl_->gz) {
    if (impl_->eof) return false;
    char buf[4096];
    bool got_any = false;
    for (;;) {
      if (gzgets(impl_->gzf, buf, sizeof(buf)) == nullptr) {
        impl_->eof = true;
        return got_any;
      }
      got_any = true;
      line += buf;
      if (!line.empty() && line.back() == '\n') {
        line.pop_back();
        break;
      }
    }
  } else {
    if (!std::getline(impl_->plain, line)) return false;
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::string& path, std::string_view content) {
  const std::string tmp = path + ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::uint64_t hash_file(const std::string& path) { return fnv1a64(read_file(path)); }

std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

}  // namespace mistake::util

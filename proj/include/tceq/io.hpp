#pragma once

// File plumbing: atomic writes (temp + rename, so interrupted runs never
// leave partial payloads), deterministic CSV formatting, and a small
// FNV-1a hash for config fingerprints.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tceq::io {

inline void atomic_write(const std::filesystem::path& path, const std::string& payload) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("atomic_write: cannot open " + tmp.string());
    os << payload;
    if (!os) throw std::runtime_error("atomic_write: short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_file: cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(is), {});
}

// Shortest-roundtrip-ish numeric formatting: %.17g is deterministic and
// reparses exactly.
inline std::string num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

class Csv {
 public:
  explicit Csv(const std::vector<std::string>& header) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (i) body_ += ',';
      body_ += header[i];
    }
    body_ += '\n';
  }

  void row(const std::vector<double>& values) {
    char buf[40];
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i) body_ += ',';
      std::snprintf(buf, sizeof buf, "%.12g", values[i]);
      body_ += buf;
    }
    body_ += '\n';
  }

  void raw_row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) body_ += ',';
      body_ += cells[i];
    }
    body_ += '\n';
  }

  const std::string& str() const { return body_; }
  void write(const std::filesystem::path& path) const { atomic_write(path, body_); }

 private:
  std::string body_;
};

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace tceq::io

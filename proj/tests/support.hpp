#pragma once

#include "craf/common.hpp"
#include "craf/corpus.hpp"
#include "craf/rng.hpp"

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

namespace test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("craf_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  out << content;
}

inline craf::Matrix random_matrix(int rows, int cols, craf::Rng& rng, double scale = 1.0) {
  craf::Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  return m;
}

inline craf::Vector random_vector(int n, craf::Rng& rng, double scale = 1.0) {
  craf::Vector v(n);
  for (int i = 0; i < n; ++i) v(i) = scale * rng.normal();
  return v;
}

/// Random probability vector with entries bounded away from zero.
inline craf::Vector random_simplex(int n, craf::Rng& rng) {
  craf::Vector v(n);
  for (int i = 0; i < n; ++i) v(i) = 0.05 + rng.uniform();
  return v / v.sum();
}

/// Collects warnings while alive.
struct WarningCapture {
  std::vector<std::string> messages;
  craf::WarningHandler previous;
  WarningCapture() {
    previous = craf::set_warning_handler([this](const std::string& m) { messages.push_back(m); });
  }
  ~WarningCapture() { craf::set_warning_handler(previous); }
};

/// Small labeled corpus with `per_source` documents in each of `k` sources.
inline craf::Corpus small_corpus(int k, int per_source, std::uint64_t seed, int topics = 2) {
  craf::SynthSpec s;
  s.num_sources = k;
  s.num_topics = topics;
  s.docs_per_source = per_source;
  s.vocab_size = 300;
  s.min_length = 8;
  s.max_length = 14;
  s.seed = seed;
  return craf::synthesize_corpus(s);
}

}  // namespace test

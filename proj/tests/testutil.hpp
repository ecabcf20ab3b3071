#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <string>

#include "gradfaith/phantom.hpp"
#include "gradfaith/rng.hpp"
#include "gradfaith/verify.hpp"

namespace testutil {

inline std::filesystem::path temp_path(const std::string& stem) {
  static std::atomic<int> counter{0};
  return std::filesystem::temp_directory_path() /
         (stem + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
}

// RAII temp directory for multi-file scenarios.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& stem) : path(temp_path(stem)) {
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

// Phantom config small enough for fast unit tests.
inline gradfaith::PhantomConfig tiny_phantom(int per_class = 4) {
  gradfaith::PhantomConfig cfg;
  cfg.size = 32;
  cfg.per_class = per_class;
  cfg.benign_radius_min = 1.0;
  cfg.benign_radius_max = 1.6;
  cfg.malignant_radius_min = 2.0;
  cfg.malignant_radius_max = 2.8;
  return cfg;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace testutil

#pragma once

// Shared test helpers: scratch directories and random covariate tables.

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "fsm/data.hpp"
#include "fsm/rng.hpp"

namespace testsupport {

// Unique scratch directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<unsigned> counter{0};
    dir_ = std::filesystem::temp_directory_path() /
           ("fsm_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(dir_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(dir_, ec);
  }
  const std::filesystem::path& path() const { return dir_; }

 private:
  std::filesystem::path dir_;
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

// The twelve-unit age example used across the engine tests.
inline fsm::CovariateTable ages_table() {
  Eigen::MatrixXd v(12, 1);
  v << 24, 30, 34, 36, 40, 41, 45, 46, 50, 54, 56, 60;
  return fsm::make_covariate_table(std::move(v), {"age"});
}

inline fsm::CovariateTable random_table(int n, int k, fsm::RngStream& rng) {
  Eigen::MatrixXd v(n, k);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) v(i, j) = rng.normal();
  return fsm::make_covariate_table(std::move(v));
}

}  // namespace testsupport

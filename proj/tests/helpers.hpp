#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <Eigen/Core>
#include <doctest.h>

#include "neurodec/error.hpp"

// Runs `expr` and checks that it throws neurodec::Error with the given code.
#define CHECK_THROWS_CODE(expr, expected_code)                                  \
  do {                                                                          \
    bool thrown_ = false;                                                       \
    try {                                                                       \
      (void)(expr);                                                             \
    } catch (const neurodec::Error& e_) {                                       \
      thrown_ = true;                                                           \
      CHECK_MESSAGE(e_.code() == (expected_code), "got ", e_.what());           \
    }                                                                           \
    CHECK_MESSAGE(thrown_, "expected neurodec::Error from " #expr);             \
  } while (0)

namespace testing {

inline Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = n(rng);
  return m;
}

inline double rel_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double scale = std::max(b.norm(), 1e-300);
  return (a - b).norm() / scale;
}

// Fresh scratch directory under the build tree's temp location.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("neurodec_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing

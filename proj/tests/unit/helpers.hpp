#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <doctest.h>

#include "muvfs/random.hpp"
#include "muvfs/tensor.hpp"

namespace testutil {

inline void check_close(const std::vector<double>& got, const std::vector<double>& want, double tol) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) <= tol);
}

// Central differences of a scalar function of one tensor.
template <class F>
std::vector<double> numeric_grad(F&& f, const muvfs::Tensor& x, double h = 1e-5) {
  std::vector<double> base = x.to_vector(), out(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto plus = base, minus = base;
    plus[i] += h, minus[i] -= h;
    out[i] = (f(muvfs::Tensor(x.shape(), plus)).item() - f(muvfs::Tensor(x.shape(), minus)).item()) / (2 * h);
  }
  return out;
}

inline double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) num += (a[i] - b[i]) * (a[i] - b[i]), na += a[i] * a[i], nb += b[i] * b[i];
  return std::sqrt(num) / std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
}

// A scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() / ("muvfs_unit_" + tag);
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

}  // namespace testutil

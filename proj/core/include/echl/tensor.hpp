#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <vector>

#include "echl/common.hpp"

namespace echl {

// Dense row-major 2-D tensor of f64. All training math runs in f64 so
// finite-difference gradient checks have headroom. Scalars are 1x1.
struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;
  bool requires_grad = false;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  static Tensor scalar(double v) {
    Tensor t(1, 1);
    t.data[0] = v;
    return t;
  }
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows_init) {
    Tensor t(rows_init.size(), rows_init.begin()->size());
    std::size_t i = 0;
    for (const auto& r : rows_init) {
      if (r.size() != t.cols) throw engine_error("ragged initializer");
      for (double v : r) t.data[i++] = v;
    }
    return t;
  }

  std::size_t numel() const { return rows * cols; }
  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  double* row_ptr(std::size_t r) { return data.data() + r * cols; }
  const double* row_ptr(std::size_t r) const { return data.data() + r * cols; }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
  bool is_scalar() const { return numel() == 1; }
};

inline void check_finite(const Tensor& t, const char* where) {
  for (double v : t.data) {
    if (!std::isfinite(v)) {
      throw engine_error(std::string("non-finite value produced by ") + where);
    }
  }
}

}  // namespace echl

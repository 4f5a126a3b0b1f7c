#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace unlab {

// Dense row-major 2D tensor of doubles. Scalars are 1x1, vectors 1xN.
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int r, int c, double fill = 0.0) : rows(r), cols(c), v(size_t(r) * size_t(c), fill) {}

  static Tensor scalar(double x) {
    Tensor t(1, 1);
    t.v[0] = x;
    return t;
  }
  static Tensor row(const std::vector<double>& x) {
    Tensor t(1, int(x.size()));
    t.v = x;
    return t;
  }

  double& at(int r, int c) { return v[size_t(r) * cols + c]; }
  double at(int r, int c) const { return v[size_t(r) * cols + c]; }
  double* row_ptr(int r) { return v.data() + size_t(r) * cols; }
  const double* row_ptr(int r) const { return v.data() + size_t(r) * cols; }

  size_t size() const { return v.size(); }
  std::vector<int> shape() const { return {rows, cols}; }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

  void check_finite(const std::string& where) const {
    for (double x : v) {
      if (!std::isfinite(x))
        throw std::runtime_error("non-finite value in tensor (" + where + ")");
    }
  }
};

}  // namespace unlab

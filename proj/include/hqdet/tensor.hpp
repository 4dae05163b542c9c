#pragma once

#include <cassert>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace hqdet {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using CMatMap = Eigen::Map<const Mat>;

// Dense row-major tensor of doubles. Rank is dynamic; most of the code uses
// rank 1 ([n]), rank 2 ([rows, cols]) and rank 3 ([channels, h, w]).
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape), 0.0) {}
  Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    assert(static_cast<int>(data.size()) == numel_of(shape));
  }

  static int numel_of(const std::vector<int>& s) {
    int n = 1;
    for (int d : s) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  int numel() const { return static_cast<int>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[i]; }

  double& operator[](int i) { return data[i]; }
  double operator[](int i) const { return data[i]; }

  // rank-2 access
  double& at2(int r, int c) { return data[r * shape[1] + c]; }
  double at2(int r, int c) const { return data[r * shape[1] + c]; }
  // rank-3 access [c,h,w]
  double& at3(int c, int y, int x) { return data[(c * shape[1] + y) * shape[2] + x]; }
  double at3(int c, int y, int x) const { return data[(c * shape[1] + y) * shape[2] + x]; }

  MatMap mat() {
    assert(rank() == 2);
    return MatMap(data.data(), shape[0], shape[1]);
  }
  CMatMap mat() const {
    assert(rank() == 2);
    return CMatMap(data.data(), shape[0], shape[1]);
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
    return s + "]";
  }
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace hqdet

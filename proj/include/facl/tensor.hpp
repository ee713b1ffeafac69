#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace facl {

enum class Precision { f32, f64 };

/// Global storage precision. In f32 mode every stored value is quantized
/// through float while per-element arithmetic still accumulates in double;
/// f64 is the verification mode used by the gradient checks.
inline Precision& precision() {
  static Precision p = Precision::f64;
  return p;
}

inline double stored(double v) {
  return precision() == Precision::f32 ? static_cast<double>(static_cast<float>(v)) : v;
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

/// Dense row-major tensor.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> s, double fill = 0.0) : shape(std::move(s)) {
    data.assign(count(shape), fill);
  }

  static std::size_t count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t e : s) {
      if (e == 0) throw std::invalid_argument("Tensor: zero extent");
      n *= e;
    }
    return n;
  }

  static Tensor from(std::vector<std::size_t> s, std::vector<double> values) {
    Tensor t;
    t.shape = std::move(s);
    if (count(t.shape) != values.size()) throw std::invalid_argument("Tensor::from: size mismatch");
    t.data = std::move(values);
    return t;
  }

  std::size_t numel() const { return data.size(); }
  std::size_t ndim() const { return shape.size(); }
  std::size_t size(std::size_t i) const { return shape.at(i); }

  double& at(std::size_t i) { return data[i]; }
  double at(std::size_t i) const { return data[i]; }

  double& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  /// Snap all values to the active storage precision.
  void quantize() {
    if (precision() == Precision::f32)
      for (double& v : data) v = static_cast<double>(static_cast<float>(v));
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "x" : "") + std::to_string(shape[i]);
    return s + "]";
  }
};

inline void check_finite(const Tensor& t, const char* where) {
  if (!t.all_finite()) throw std::runtime_error(std::string("non-finite values in ") + where);
}

}  // namespace facl

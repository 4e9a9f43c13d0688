#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tempotokens/errors.hpp"

namespace tempo {

/// Dense row-major tensor of doubles.
class Tensor {
public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(element_count(shape_), 0.0) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (element_count(shape_) != data_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape product " +
                       std::to_string(element_count(shape_)));
    }
  }

  static Tensor vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }

  const std::vector<std::size_t> &shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double> &values() noexcept { return data_; }
  const std::vector<double> &values() const noexcept { return data_; }

  double &operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double &at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }
  double &at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  // Contiguous slice along the leading axis.
  std::span<double> row(std::size_t i) {
    const std::size_t stride = size() / shape_.at(0);
    return std::span<double>(data_).subspan(i * stride, stride);
  }
  std::span<const double> row(std::size_t i) const {
    const std::size_t stride = size() / shape_.at(0);
    return std::span<const double>(data_).subspan(i * stride, stride);
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  void require_finite(const char *what) const {
    if (!all_finite()) {
      throw ValidationError(std::string(what) + ": non-finite value");
    }
  }

  friend bool operator==(const Tensor &, const Tensor &) = default;

  static std::size_t element_count(const std::vector<std::size_t> &shape) {
    for (std::size_t d : shape) {
      if (d == 0) {
        throw ShapeError("tensor dimensions must be positive");
      }
    }
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
  }

private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

/// Affine map y = W x + b, weight stored out x in.
struct LinearLayer {
  Tensor weight;
  Tensor bias;

  LinearLayer() = default;
  LinearLayer(Tensor w, Tensor b) : weight(std::move(w)), bias(std::move(b)) {
    if (weight.rank() != 2 || bias.rank() != 1 ||
        bias.dim(0) != weight.dim(0)) {
      throw ShapeError("linear layer weight/bias dimensions inconsistent");
    }
  }

  static LinearLayer zeros(std::size_t in, std::size_t out) {
    return LinearLayer(Tensor({out, in}), Tensor({out}));
  }

  std::size_t in_dim() const { return weight.dim(1); }
  std::size_t out_dim() const { return weight.dim(0); }

  friend bool operator==(const LinearLayer &, const LinearLayer &) = default;
};

// ---------------------------------------------------------------------------
// Small span kernels shared by the forward and backward passes.

/// out = W x (+ out when accumulate), W is rows x cols row-major.
inline void gemv(std::span<const double> w, std::size_t rows, std::size_t cols,
                 std::span<const double> x, std::span<double> out,
                 bool accumulate = false) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double *wr = w.data() + r * cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      acc += wr[c] * x[c];
    }
    out[r] = accumulate ? out[r] + acc : acc;
  }
}

/// out += W^T y
inline void gemv_t_acc(std::span<const double> w, std::size_t rows,
                       std::size_t cols, std::span<const double> y,
                       std::span<double> out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double *wr = w.data() + r * cols;
    const double yr = y[r];
    if (yr == 0.0) {
      continue;
    }
    for (std::size_t c = 0; c < cols; ++c) {
      out[c] += wr[c] * yr;
    }
  }
}

/// W += y x^T
inline void outer_acc(std::span<double> w, std::span<const double> y,
                      std::span<const double> x) {
  const std::size_t cols = x.size();
  for (std::size_t r = 0; r < y.size(); ++r) {
    const double yr = y[r];
    if (yr == 0.0) {
      continue;
    }
    double *wr = w.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) {
      wr[c] += yr * x[c];
    }
  }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    acc += a[i] * b[i];
  }
  return acc;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// ---------------------------------------------------------------------------

/// Applies the layer along the last axis of x.
inline Tensor linear_forward(const Tensor &x, const LinearLayer &layer) {
  if (x.rank() == 0 || x.shape().back() != layer.in_dim()) {
    throw ShapeError("linear_forward: input last dim " +
                     (x.rank() ? std::to_string(x.shape().back())
                               : std::string("<none>")) +
                     " != layer input " + std::to_string(layer.in_dim()));
  }
  std::vector<std::size_t> out_shape = x.shape();
  out_shape.back() = layer.out_dim();
  Tensor y(out_shape);
  const std::size_t rows = x.size() / layer.in_dim();
  const std::size_t in = layer.in_dim();
  const std::size_t out = layer.out_dim();
  for (std::size_t r = 0; r < rows; ++r) {
    auto dst = y.data().subspan(r * out, out);
    std::copy(layer.bias.values().begin(), layer.bias.values().end(),
              dst.begin());
    gemv(layer.weight.data(), out, in, x.data().subspan(r * in, in), dst,
         true);
  }
  return y;
}

inline double gelu(double x) {
  return 0.5 * x * std::erfc(-x / std::numbers::sqrt2);
}

inline double gelu_derivative(double x) {
  constexpr double inv_sqrt_2pi = 0.3989422804014327;
  const double cdf = 0.5 * std::erfc(-x / std::numbers::sqrt2);
  return cdf + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

/// Exact-erf GELU, elementwise.
inline Tensor gelu(const Tensor &x) {
  Tensor y = x;
  for (double &v : y.values()) {
    v = gelu(v);
  }
  return y;
}

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

/// Max-subtracted softmax.
inline std::vector<double> softmax(std::span<const double> v) {
  if (v.empty()) {
    throw DomainError("softmax of an empty vector");
  }
  const double m = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double z = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - m);
    z += out[i];
  }
  for (double &o : out) {
    o /= z;
  }
  return out;
}

inline Tensor softmax(const Tensor &v) {
  if (v.rank() > 1) {
    throw ShapeError("softmax expects a vector");
  }
  if (v.empty()) {
    throw DomainError("softmax of an empty vector");
  }
  return Tensor::vector(softmax(v.data()));
}

// ---------------------------------------------------------------------------

/// xoshiro256** seeded through splitmix64. Normals come from the Box-Muller
/// transform on 53-bit uniforms, so streams are identical on every platform
/// (std::normal_distribution is implementation-defined and is not used).
class Rng {
public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto &s : state_) {
      s = splitmix64(sm);
    }
  }

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() noexcept {
    const std::uint64_t result = std::rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = std::rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0, 1).
  double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) noexcept {
    return lo + (hi - lo) * uniform();
  }

  /// Uniform integer in [0, n), n > 0, rejection-sampled.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) {
      throw DomainError("Rng::below(0)");
    }
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  Tensor normal_tensor(std::vector<std::size_t> shape, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (double &v : t.values()) {
      v = stddev * normal();
    }
    return t;
  }

  /// Independent child stream, derived deterministically from this one.
  Rng fork() { return Rng(next_u64()); }

private:
  static std::uint64_t splitmix64(std::uint64_t &x) noexcept {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t state_[4]{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// FNV-1a over the raw bytes of the values; used to fingerprint parameters.
inline std::uint64_t fnv1a(std::span<const double> values,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (double v : values) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof(double));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

// ---------------------------------------------------------------------------

struct ValueGrad {
  double value = 0.0;
  std::vector<double> grad;
};

/// Compares the analytic gradient returned by f against central differences.
/// Returns max_i |analytic_i - numeric_i| / max(1, |analytic_i|).
inline double
grad_check(const std::function<ValueGrad(std::span<const double>)> &f,
           std::span<const double> params, double eps) {
  if (!(eps > 0.0)) {
    throw DomainError("grad_check: eps must be positive");
  }
  std::vector<double> x(params.begin(), params.end());
  const ValueGrad base = f(x);
  if (!std::isfinite(base.value)) {
    throw NumericError("grad_check: non-finite function value");
  }
  if (base.grad.size() != x.size()) {
    throw ShapeError("grad_check: gradient length does not match params");
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double fp = f(x).value;
    x[i] = saved - eps;
    const double fm = f(x).value;
    x[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("grad_check: non-finite function value");
    }
    const double numeric = (fp - fm) / (2.0 * eps);
    const double analytic = base.grad[i];
    const double err =
        std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
    worst = std::max(worst, err);
  }
  return worst;
}

} // namespace tempo

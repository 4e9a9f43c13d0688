#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "tempotokens/errors.hpp"

namespace tempo {

/// Strictly increasing list of frame indices.
class PeakSet {
public:
  PeakSet() = default;

  /// Throws ValidationError unless `indices` is strictly increasing.
  explicit PeakSet(std::vector<std::size_t> indices)
      : indices_(std::move(indices)) {
    for (std::size_t i = 1; i < indices_.size(); ++i) {
      if (indices_[i] <= indices_[i - 1]) {
        throw ValidationError("peak set must be strictly increasing");
      }
    }
  }

  PeakSet(std::initializer_list<std::size_t> indices)
      : PeakSet(std::vector<std::size_t>(indices)) {}

  /// Sorts and deduplicates.
  static PeakSet from_unsorted(std::vector<std::size_t> indices) {
    std::sort(indices.begin(), indices.end());
    indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
    return PeakSet(std::move(indices));
  }

  const std::vector<std::size_t> &indices() const noexcept { return indices_; }
  std::size_t size() const noexcept { return indices_.size(); }
  bool empty() const noexcept { return indices_.empty(); }
  auto begin() const noexcept { return indices_.begin(); }
  auto end() const noexcept { return indices_.end(); }
  std::size_t operator[](std::size_t i) const { return indices_[i]; }

  bool contains(std::size_t index) const {
    return std::binary_search(indices_.begin(), indices_.end(), index);
  }

  /// True when some member lies within `tolerance` of `index`.
  bool has_within(std::size_t index, std::size_t tolerance) const {
    const std::size_t lo = index >= tolerance ? index - tolerance : 0;
    auto it = std::lower_bound(indices_.begin(), indices_.end(), lo);
    return it != indices_.end() && *it <= index + tolerance;
  }

  /// Adds `offset` to every index.
  PeakSet shifted(std::size_t offset) const {
    std::vector<std::size_t> out = indices_;
    for (auto &i : out) {
      i += offset;
    }
    return PeakSet(std::move(out));
  }

  friend bool operator==(const PeakSet &, const PeakSet &) = default;

private:
  std::vector<std::size_t> indices_;
};

/// Adaptive peak picking shared by the audio-flux and motion curves.
struct PeakParams {
  double threshold_k = 1.5;      // multiples of the moving MAD above the median
  std::size_t smoothing = 5;     // moving median/MAD window, centered
  std::size_t neighborhood = 2;  // local-maximum half-width
  double min_prominence = 0.1;   // height over the median, fraction of the curve range
  double floor = 1e-9;           // curves with a smaller range have no peaks

  void validate() const {
    if (!(threshold_k > 0.0)) {
      throw DomainError("threshold_k must be positive");
    }
    if (smoothing == 0) {
      throw DomainError("smoothing window must be at least 1");
    }
    if (min_prominence < 0.0 || floor < 0.0) {
      throw DomainError("prominence and floor must be nonnegative");
    }
  }
};

namespace detail {

inline double median_of(std::vector<double> &scratch) {
  const std::size_t n = scratch.size();
  const auto mid = scratch.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(scratch.begin(), mid, scratch.end());
  if (n % 2 == 1) {
    return *mid;
  }
  const double upper = *mid;
  const double lower = *std::max_element(scratch.begin(), mid);
  return 0.5 * (lower + upper);
}

} // namespace detail

/// Indices t where curve[t] exceeds the moving median by threshold_k moving
/// MADs and by min_prominence of the curve range, and is the first maximum
/// within +-neighborhood.
inline std::vector<std::size_t> pick_peaks(std::span<const double> curve,
                                           const PeakParams &params = {}) {
  params.validate();
  std::vector<std::size_t> peaks;
  const std::size_t n = curve.size();
  if (n == 0) {
    return peaks;
  }
  const auto [lo_it, hi_it] = std::minmax_element(curve.begin(), curve.end());
  const double range = *hi_it - *lo_it;
  if (!(range > params.floor)) {
    return peaks;
  }
  const std::size_t half = params.smoothing / 2;
  std::vector<double> scratch;
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t a = t >= half ? t - half : 0;
    const std::size_t b = std::min(n, t + (params.smoothing - half));
    scratch.assign(curve.begin() + static_cast<std::ptrdiff_t>(a),
                   curve.begin() + static_cast<std::ptrdiff_t>(b));
    const double med = detail::median_of(scratch);
    for (std::size_t i = a; i < b; ++i) {
      scratch[i - a] = std::abs(curve[i] - med);
    }
    const double mad = detail::median_of(scratch);
    const double x = curve[t];
    if (!(x > med + params.threshold_k * mad)) {
      continue;
    }
    if (x - med < params.min_prominence * range) {
      continue;
    }
    const std::size_t na = t >= params.neighborhood ? t - params.neighborhood : 0;
    const std::size_t nb = std::min(n - 1, t + params.neighborhood);
    bool is_max = true;
    for (std::size_t i = na; i <= nb && is_max; ++i) {
      if (i < t ? curve[i] >= x : curve[i] > x) {
        is_max = false;
      }
    }
    if (is_max) {
      peaks.push_back(t);
    }
  }
  return peaks;
}

} // namespace tempo

#pragma once

// Flat parameter vectors and counter-based random streams.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace ssamlab {

/// All optimizable parameters of a problem, as one contiguous 64-bit vector.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::size_t dim, double fill = 0.0) : data_(dim, fill) {}
  ParamVector(std::initializer_list<double> values) : data_(values) {}
  explicit ParamVector(std::vector<double> values) : data_(std::move(values)) {}

  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }
  operator std::span<double>() noexcept { return data_; }
  operator std::span<const double>() const noexcept { return data_; }

  const std::vector<double>& values() const noexcept { return data_; }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  std::vector<double> data_;
};

inline double dot(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

inline double norm2(std::span<const double> x) { return std::sqrt(dot(x, x)); }

inline double distance(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return std::sqrt(s);
}

/// y += a * x
inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

inline void scale(double a, std::span<double> x) {
  for (double& v : x) v *= a;
}

inline void copy(std::span<const double> src, std::span<double> dst) {
  std::copy(src.begin(), src.end(), dst.begin());
}

inline ParamVector operator+(const ParamVector& a, const ParamVector& b) {
  ParamVector r = a;
  axpy(1.0, b, r);
  return r;
}

inline ParamVector operator-(const ParamVector& a, const ParamVector& b) {
  ParamVector r = a;
  axpy(-1.0, b, r);
  return r;
}

inline ParamVector operator*(double s, const ParamVector& a) {
  ParamVector r = a;
  scale(s, r);
  return r;
}

namespace detail {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Counter-based random stream keyed by (master_seed, stream_id).
///
/// Draw i is a pure function of the key and i, so a stream can be rebuilt at
/// any point and runs never depend on scheduling order. Also satisfies
/// UniformRandomBitGenerator for use with <algorithm> shuffles.
class RngStream {
 public:
  using result_type = std::uint64_t;

  RngStream(std::uint64_t master_seed, std::uint64_t stream_id)
      : master_(master_seed),
        stream_(stream_id),
        k1_(detail::mix64(master_seed ^ detail::mix64(stream_id + detail::kGolden))),
        k2_(detail::mix64(stream_id ^ detail::mix64(master_seed + 0x632BE59BD9B4E019ULL))) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return ~result_type{0}; }

  result_type operator()() noexcept { return next_u64(); }

  std::uint64_t next_u64() noexcept {
    const std::uint64_t c = counter_++;
    return detail::mix64(detail::mix64(k1_ + c * detail::kGolden) ^ k2_);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept {
    // Lemire's multiply-shift; bias is < n / 2^64 and irrelevant here.
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// Standard normal draw (Box-Muller, pairs cached).
  double gaussian() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  std::uint64_t master_seed() const noexcept { return master_; }
  std::uint64_t stream_id() const noexcept { return stream_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t master_;
  std::uint64_t stream_;
  std::uint64_t k1_;
  std::uint64_t k2_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline RngStream derive_stream(std::uint64_t master_seed, std::uint64_t stream_id) {
  return RngStream(master_seed, stream_id);
}

/// Combine several grid coordinates into one stream id.
inline std::uint64_t stream_key(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x243F6A8885A308D3ULL;
  for (std::uint64_t p : parts) h = detail::mix64(h ^ (p + detail::kGolden + (h << 6) + (h >> 2)));
  return h;
}

/// Adds i.i.d. N(0, std^2) to every entry of x; no draws are consumed when std == 0.
inline void add_gaussian(RngStream& stream, double std, std::span<double> x) {
  if (std == 0.0) return;
  for (double& v : x) v += std * stream.gaussian();
}

inline ParamVector gaussian_vector(RngStream& stream, std::size_t dim, double std) {
  if (dim == 0) throw std::invalid_argument("gaussian_vector: dim must be >= 1");
  if (!(std >= 0.0)) throw std::invalid_argument("gaussian_vector: std must be >= 0");
  ParamVector v(dim, 0.0);
  add_gaussian(stream, std, v);
  return v;
}

}  // namespace ssamlab

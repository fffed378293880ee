#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace storm {

/// Dense [frames x tokens_per_frame x channels] array of doubles, row-major.
///
/// Frame-major layout means the flat buffer is already in sweep-scan order
/// (left-to-right, top-to-bottom inside a frame, then frame to frame), so
/// flattening to a token sequence never reorders memory.
class TokenTensor {
 public:
  TokenTensor() = default;
  /// Zero-filled tensor. Throws ShapeError if any dimension is zero.
  TokenTensor(std::size_t frames, std::size_t tokens_per_frame, std::size_t channels);
  /// Takes ownership of `values`. Throws ShapeError on a length mismatch and
  /// NumericError if any value is not finite.
  TokenTensor(std::size_t frames, std::size_t tokens_per_frame, std::size_t channels,
              std::vector<double> values);

  std::size_t frames() const { return frames_; }
  std::size_t tokens_per_frame() const { return tokens_; }
  std::size_t channels() const { return channels_; }
  std::size_t size() const { return values_.size(); }
  std::size_t frame_stride() const { return tokens_ * channels_; }

  double& operator()(std::size_t t, std::size_t n, std::size_t d) {
    return values_[(t * tokens_ + n) * channels_ + d];
  }
  double operator()(std::size_t t, std::size_t n, std::size_t d) const {
    return values_[(t * tokens_ + n) * channels_ + d];
  }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<double> frame(std::size_t t);
  std::span<const double> frame(std::size_t t) const;
  std::span<const double> token(std::size_t t, std::size_t n) const;

  /// Moves the buffer out, leaving the tensor empty.
  std::vector<double> release() && { return std::move(values_); }

  bool same_shape(const TokenTensor& other) const {
    return frames_ == other.frames_ && tokens_ == other.tokens_ && channels_ == other.channels_;
  }
  friend bool operator==(const TokenTensor&, const TokenTensor&) = default;

 private:
  std::size_t frames_ = 0;
  std::size_t tokens_ = 0;
  std::size_t channels_ = 0;
  std::vector<double> values_;
};

/// A [length x width] sequence of row vectors; the scan input/output carrier.
struct Sequence {
  std::size_t length = 0;
  std::size_t width = 0;
  std::vector<double> values;

  Sequence() = default;
  Sequence(std::size_t len, std::size_t w) : length(len), width(w), values(len * w, 0.0) {}
  Sequence(std::size_t len, std::size_t w, std::vector<double> v);

  std::span<double> row(std::size_t i) { return {values.data() + i * width, width}; }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * width, width}; }

  friend bool operator==(const Sequence&, const Sequence&) = default;
};

/// y = weight * x + bias with weight stored row-major [out_dim x in_dim].
struct AffineMap {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::vector<double> weight;
  std::vector<double> bias;

  static AffineMap zeros(std::size_t in_dim, std::size_t out_dim);
  static AffineMap identity(std::size_t dim);

  /// Throws ShapeError if the buffers disagree with the declared dimensions,
  /// NumericError on non-finite entries.
  void validate() const;

  double w(std::size_t row, std::size_t col) const { return weight[row * in_dim + col]; }
};

struct NormParams {
  std::size_t dim = 0;
  std::vector<double> gamma;
  std::vector<double> beta;
  double eps = 1e-5;

  /// gamma = 1, beta = 0.
  static NormParams unit(std::size_t dim, double eps = 1e-5);
  void validate() const;
};

/// Counter-based SplitMix64 generator. Draw i of seed s is mix(s + (i+1)*golden),
/// so streams are reproducible bit-for-bit on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of mantissa.
  double next_unit();
  /// Uniform in [lo, hi).
  double uniform(double lo, double hi);

  /// Independent child stream; does not advance this generator.
  Rng split(std::uint64_t stream) const;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64_mix(std::uint64_t z);

std::vector<double> affine_apply(const AffineMap& map, std::span<const double> x);
/// Writes into `y` (length out_dim) without allocating.
void affine_apply_into(const AffineMap& map, std::span<const double> x, std::span<double> y);

std::vector<double> layer_norm(std::span<const double> x, const NormParams& params);
void layer_norm_into(std::span<const double> x, const NormParams& params, std::span<double> y);

/// `count` values uniform in [-scale, scale]. Throws ConfigError if scale <= 0.
std::vector<double> rng_fill(Rng& rng, std::size_t count, double scale);
TokenTensor random_tensor(Rng& rng, std::size_t frames, std::size_t tokens, std::size_t channels,
                          double scale);
AffineMap random_affine(Rng& rng, std::size_t in_dim, std::size_t out_dim, double scale);

bool all_finite(std::span<const double> values);
double max_abs(std::span<const double> values);
double max_abs_diff(std::span<const double> a, std::span<const double> b);

}  // namespace storm

#include "storm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "storm/errors.hpp"

namespace storm {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::string dims(std::size_t a, std::size_t b, std::size_t c) {
  return "[" + std::to_string(a) + "x" + std::to_string(b) + "x" + std::to_string(c) + "]";
}

}  // namespace

TokenTensor::TokenTensor(std::size_t frames, std::size_t tokens_per_frame, std::size_t channels)
    : frames_(frames), tokens_(tokens_per_frame), channels_(channels) {
  if (frames == 0 || tokens_per_frame == 0 || channels == 0) {
    throw ShapeError("TokenTensor dimensions must be >= 1, got " +
                     dims(frames, tokens_per_frame, channels));
  }
  values_.assign(frames * tokens_per_frame * channels, 0.0);
}

TokenTensor::TokenTensor(std::size_t frames, std::size_t tokens_per_frame, std::size_t channels,
                         std::vector<double> values)
    : frames_(frames), tokens_(tokens_per_frame), channels_(channels), values_(std::move(values)) {
  if (frames == 0 || tokens_per_frame == 0 || channels == 0) {
    throw ShapeError("TokenTensor dimensions must be >= 1, got " +
                     dims(frames, tokens_per_frame, channels));
  }
  if (values_.size() != frames * tokens_per_frame * channels) {
    throw ShapeError("TokenTensor " + dims(frames, tokens_per_frame, channels) + " given " +
                     std::to_string(values_.size()) + " values");
  }
  if (!all_finite(values_)) throw NumericError("TokenTensor contains non-finite values");
}

std::span<double> TokenTensor::frame(std::size_t t) {
  return {values_.data() + t * frame_stride(), frame_stride()};
}

std::span<const double> TokenTensor::frame(std::size_t t) const {
  return {values_.data() + t * frame_stride(), frame_stride()};
}

std::span<const double> TokenTensor::token(std::size_t t, std::size_t n) const {
  return {values_.data() + (t * tokens_ + n) * channels_, channels_};
}

Sequence::Sequence(std::size_t len, std::size_t w, std::vector<double> v)
    : length(len), width(w), values(std::move(v)) {
  if (values.size() != len * w) {
    throw ShapeError("Sequence [" + std::to_string(len) + "x" + std::to_string(w) + "] given " +
                     std::to_string(values.size()) + " values");
  }
}

AffineMap AffineMap::zeros(std::size_t in_dim, std::size_t out_dim) {
  return {in_dim, out_dim, std::vector<double>(in_dim * out_dim, 0.0),
          std::vector<double>(out_dim, 0.0)};
}

AffineMap AffineMap::identity(std::size_t dim) {
  auto map = zeros(dim, dim);
  for (std::size_t i = 0; i < dim; ++i) map.weight[i * dim + i] = 1.0;
  return map;
}

void AffineMap::validate() const {
  if (in_dim == 0 || out_dim == 0) throw ShapeError("AffineMap dimensions must be >= 1");
  if (weight.size() != in_dim * out_dim || bias.size() != out_dim) {
    throw ShapeError("AffineMap buffers do not match " + std::to_string(out_dim) + "x" +
                     std::to_string(in_dim));
  }
  if (!all_finite(weight) || !all_finite(bias)) throw NumericError("AffineMap has non-finite entries");
}

NormParams NormParams::unit(std::size_t dim, double eps) {
  return {dim, std::vector<double>(dim, 1.0), std::vector<double>(dim, 0.0), eps};
}

void NormParams::validate() const {
  if (gamma.size() != dim || beta.size() != dim) throw ShapeError("NormParams size mismatch");
  if (!(eps > 0.0)) throw ConfigError("NormParams eps must be > 0");
}

std::uint64_t splitmix64_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t Rng::next_u64() {
  ++counter_;
  return splitmix64_mix(seed_ + counter_ * kGolden);
}

double Rng::next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

Rng Rng::split(std::uint64_t stream) const {
  return Rng(splitmix64_mix(seed_ ^ splitmix64_mix(stream + kGolden)));
}

void affine_apply_into(const AffineMap& map, std::span<const double> x, std::span<double> y) {
  if (x.size() != map.in_dim || y.size() != map.out_dim) {
    throw ShapeError("affine_apply: map is " + std::to_string(map.out_dim) + "x" +
                     std::to_string(map.in_dim) + ", input has " + std::to_string(x.size()));
  }
  const double* w = map.weight.data();
  for (std::size_t o = 0; o < map.out_dim; ++o, w += map.in_dim) {
    double acc = 0.0;
    for (std::size_t i = 0; i < map.in_dim; ++i) acc += w[i] * x[i];
    y[o] = acc + map.bias[o];
  }
}

std::vector<double> affine_apply(const AffineMap& map, std::span<const double> x) {
  std::vector<double> y(map.out_dim);
  affine_apply_into(map, x, y);
  return y;
}

void layer_norm_into(std::span<const double> x, const NormParams& params, std::span<double> y) {
  const std::size_t n = x.size();
  if (n == 0 || n != params.dim || y.size() != n) {
    throw ShapeError("layer_norm: expected dim " + std::to_string(params.dim) + ", got " +
                     std::to_string(n));
  }
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const double inv = 1.0 / std::sqrt(var + params.eps);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = params.gamma[i] * (x[i] - mean) * inv + params.beta[i];
  }
}

std::vector<double> layer_norm(std::span<const double> x, const NormParams& params) {
  std::vector<double> y(x.size());
  layer_norm_into(x, params, y);
  return y;
}

std::vector<double> rng_fill(Rng& rng, std::size_t count, double scale) {
  if (!(scale > 0.0)) throw ConfigError("rng_fill: scale must be > 0");
  std::vector<double> out(count);
  for (auto& v : out) v = scale * (2.0 * rng.next_unit() - 1.0);
  return out;
}

TokenTensor random_tensor(Rng& rng, std::size_t frames, std::size_t tokens, std::size_t channels,
                          double scale) {
  return {frames, tokens, channels, rng_fill(rng, frames * tokens * channels, scale)};
}

AffineMap random_affine(Rng& rng, std::size_t in_dim, std::size_t out_dim, double scale) {
  AffineMap map;
  map.in_dim = in_dim;
  map.out_dim = out_dim;
  map.weight = rng_fill(rng, in_dim * out_dim, scale);
  map.bias = rng_fill(rng, out_dim, scale);
  return map;
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

double max_abs(std::span<const double> values) {
  double m = 0.0;
  for (double v : values) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("max_abs_diff: size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace storm

#pragma once

#include <cstddef>
#include <string>

#include "storm/tensor.hpp"

namespace storm {

/// Token reduction settings. A factor of 1 switches that stage off.
///
/// spatial_pool_p is the areal factor: a sqrt(p) x sqrt(p) window with the same
/// stride on each frame's token grid, so N' = N / p. Stages always run in the
/// order spatial pool -> temporal pool -> temporal sample.
struct CompressionSpec {
  std::size_t temporal_pool_k = 1;
  std::size_t spatial_pool_p = 1;
  std::size_t temporal_sample_s = 1;

  /// Factor checks only (>= 1, p a perfect square).
  void validate() const;
  /// Also checks divisibility against a concrete shape.
  void validate_for(std::size_t frames, std::size_t grid_rows, std::size_t grid_cols) const;
  std::size_t spatial_window() const;

  friend bool operator==(const CompressionSpec&, const CompressionSpec&) = default;
};

struct CompressedShape {
  std::size_t frames = 0;
  std::size_t tokens_per_frame = 0;
};

struct BudgetReport {
  std::size_t frames_in = 0;
  std::size_t tokens_per_frame_in = 0;
  std::size_t frames_out = 0;
  std::size_t tokens_out = 0;  // per frame after spatial pooling
  std::size_t total_tokens = 0;
  double ratio_percent = 0.0;  // exact, not rounded
  std::size_t budget = 0;
  bool within_budget = false;
};

/// Averages each run of k consecutive frames. Throws ConfigError unless k | T.
TokenTensor temporal_pool(const TokenTensor& x, std::size_t k);
/// Per-frame 2-D average pooling on a [rows x cols] token grid.
TokenTensor spatial_pool(const TokenTensor& x, std::size_t grid_rows, std::size_t grid_cols,
                         std::size_t p);
/// Keeps frames 0, s, 2s, ... (ceil(T/s) frames), copied unchanged.
TokenTensor temporal_sample(const TokenTensor& x, std::size_t s);

/// 100 / (k * p * s), unrounded.
double compression_ratio(const CompressionSpec& spec);
/// Half-away-from-zero rounding to two decimals, applied only when reporting.
double round_percent(double percent);
std::string format_percent(double percent);

/// Output shape of apply_compression for a [frames x rows*cols] input.
CompressedShape compressed_shape(std::size_t frames, std::size_t grid_rows, std::size_t grid_cols,
                                 const CompressionSpec& spec);

/// Token counts after compression against a budget. With only N known, spatial
/// pooling requires p | N; pass the grid to also check the window tiles it.
BudgetReport token_budget_check(std::size_t frames, std::size_t tokens_per_frame,
                                const CompressionSpec& spec, std::size_t budget);
BudgetReport token_budget_check(std::size_t frames, std::size_t grid_rows, std::size_t grid_cols,
                                const CompressionSpec& spec, std::size_t budget);

TokenTensor apply_compression(const TokenTensor& x, std::size_t grid_rows, std::size_t grid_cols,
                              const CompressionSpec& spec);

}  // namespace storm

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "storm/tensor.hpp"

namespace storm {

/// Parameters of a selective (input-dependent) diagonal state-space scan.
///
/// Each of the D channels owns H state lanes. The continuous decay is
/// A = -exp(a_log), strictly negative, so every discretized transition
/// exp(delta * A) lies in (0, 1) for delta > 0.
struct SelectiveScanWeights {
  std::size_t channels = 0;
  std::size_t state_dim = 0;
  std::vector<double> a_log;  // [channels x state_dim]
  AffineMap w_delta;          // D -> D
  AffineMap w_b;              // D -> H
  AffineMap w_c;              // D -> H

  static SelectiveScanWeights zeros(std::size_t channels, std::size_t state_dim);
  /// Affine maps uniform in [-scale, scale]; a_log uniform in [log 0.5, log 1.5].
  static SelectiveScanWeights random(Rng& rng, std::size_t channels, std::size_t state_dim,
                                     double scale = 0.1);

  void validate() const;
  double decay(std::size_t d, std::size_t h) const;  // A[d,h]
};

/// Hidden state h, [channels x state_dim] row-major.
struct ScanState {
  std::size_t channels = 0;
  std::size_t state_dim = 0;
  std::vector<double> h;

  ScanState() = default;
  ScanState(std::size_t d, std::size_t n) : channels(d), state_dim(n), h(d * n, 0.0) {}

  friend bool operator==(const ScanState&, const ScanState&) = default;
};

/// Discretized per-step parameters for one input token.
struct SelectiveParams {
  std::vector<double> delta;  // [D], softplus output, > 0
  std::vector<double> a_bar;  // [D x H]
  std::vector<double> b_bar;  // [D x H]
  std::vector<double> c;      // [H], shared by all channels
};

enum class ScanDirection { forward, reverse };

struct ScanResult {
  Sequence y;
  ScanState h_final;
};

/// Gradients of L = sum_t <grad_y_t, y_t>.
struct ScanGrad {
  Sequence grad_x;
  SelectiveScanWeights grad_weights;  // same layout as the primal weights
  ScanState grad_h0;
};

double softplus(double z);
double sigmoid(double z);

SelectiveParams selective_params(std::span<const double> x_t, const SelectiveScanWeights& weights);

/// One recurrence step. Returns y_t and overwrites `state` with h_t.
std::vector<double> ssm_step(ScanState& state, std::span<const double> x_t,
                             const SelectiveScanWeights& weights);
/// Step with explicitly supplied discretized parameters.
std::vector<double> ssm_step(ScanState& state, std::span<const double> x_t,
                             const SelectiveParams& params);

/// Iterated ssm_step. The reverse direction walks the sequence back to front;
/// outputs stay aligned to the original indices and h_final is the state
/// after consuming index 0.
ScanResult scan_sequential(const Sequence& x, const SelectiveScanWeights& weights,
                           const ScanState& h0,
                           ScanDirection direction = ScanDirection::forward);

struct ParallelScanOptions {
  /// Worker threads sharing the channel blocks. The combine tree is fixed, so
  /// results are bitwise identical for any worker count.
  unsigned workers = 1;
  /// Channels per block.
  std::size_t channel_block = 8;
  /// Steps combined per chunk; state is carried between chunks, so scratch
  /// memory is O(time_chunk * block * H) regardless of length.
  std::size_t time_chunk = 256;
};

/// Same result as scan_sequential, computed as a prefix combine of the affine
/// step maps h -> a*h + b under (a2,b2) o (a1,b1) = (a2*a1, a2*b1 + b2), using a
/// balanced pairwise-contraction tree.
ScanResult scan_parallel(const Sequence& x, const SelectiveScanWeights& weights,
                         const ScanState& h0, ScanDirection direction = ScanDirection::forward,
                         const ParallelScanOptions& options = {});

/// Reverse-mode gradients with respect to x, every weight field, and h0.
ScanGrad scan_backward(const Sequence& x, const SelectiveScanWeights& weights,
                       const ScanState& h0, const Sequence& grad_y,
                       ScanDirection direction = ScanDirection::forward);

/// Visits every scalar parameter of the weights in declaration order
/// (a_log, w_delta, w_b, w_c; weight before bias). Used by save/load and the
/// gradient checker.
template <typename Weights, typename Fn>
void for_each_parameter(Weights& weights, Fn&& fn) {
  for (auto& v : weights.a_log) fn(v);
  for (auto* map : {&weights.w_delta, &weights.w_b, &weights.w_c}) {
    for (auto& v : map->weight) fn(v);
    for (auto& v : map->bias) fn(v);
  }
}

}  // namespace storm

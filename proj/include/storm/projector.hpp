#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "storm/ssm_scan.hpp"
#include "storm/tensor.hpp"

namespace storm {

enum class DirectionMode : std::uint32_t { bidirectional = 0, unidirectional = 1 };

struct ProjectorConfig {
  std::size_t raw_tokens_per_frame = 64;  // tokens per frame from the image encoder
  std::size_t downsample_ratio = 4;       // raw tokens merged into one output token
  std::size_t input_channels = 64;        // channel width of the raw tokens
  std::size_t channels = 64;
  std::size_t layers = 2;
  std::size_t state_dim = 16;
  std::size_t grid_rows = 4;
  std::size_t grid_cols = 4;
  DirectionMode direction_mode = DirectionMode::bidirectional;

  std::size_t tokens_per_frame() const { return raw_tokens_per_frame / downsample_ratio; }
  /// Throws ConfigError when r does not divide the raw count or the grid does not tile N.
  void validate() const;

  friend bool operator==(const ProjectorConfig&, const ProjectorConfig&) = default;
};

struct MixerLayerWeights {
  NormParams norm;
  SelectiveScanWeights forward;
  std::optional<SelectiveScanWeights> backward;  // present only in bidirectional mode
  AffineMap gate;                                 // D -> D
  AffineMap output;                               // D -> D
};

struct ProjectorWeights {
  AffineMap downsample;  // (r * input_channels) -> channels
  std::vector<MixerLayerWeights> layers;

  /// Uniform(+-scale) affine maps, a_log uniform in [log 0.5, log 1.5], unit norms.
  static ProjectorWeights random(const ProjectorConfig& config, std::uint64_t seed,
                                 double scale = 0.1);
  /// Random downsample map, every mixer branch zeroed (scan, gate and output maps).
  static ProjectorWeights zero_mixers(const ProjectorConfig& config, std::uint64_t seed);

  /// Throws ShapeError/ConfigError if any shape disagrees with `config`.
  void validate(const ProjectorConfig& config) const;
};

/// Carried per-layer scan state for frame-at-a-time causal projection.
struct ProjectorStream {
  std::vector<ScanState> layer_states;
  std::size_t frames_seen = 0;

  static ProjectorStream start(const ProjectorConfig& config);
};

/// Merges each run of r consecutive raw tokens (channel concatenation) and maps
/// it through the downsample affine map. Input [raw_tokens x input_channels],
/// output [raw_tokens / r x channels], both row-major.
std::vector<double> downsample_frame(std::span<const double> raw_frame,
                                     const ProjectorWeights& weights,
                                     const ProjectorConfig& config);
/// Applies downsample_frame to every frame and stacks the results.
TokenTensor downsample_video(const TokenTensor& raw, const ProjectorWeights& weights,
                             const ProjectorConfig& config);

/// Sweep order: index = t*N + row*cols + col. With frame-major storage this is
/// a relabelling of the same buffer.
Sequence flatten_sweep(const TokenTensor& x, std::size_t grid_rows, std::size_t grid_cols);
Sequence flatten_sweep(TokenTensor&& x, std::size_t grid_rows, std::size_t grid_cols);
TokenTensor unflatten_sweep(Sequence&& seq, std::size_t frames, std::size_t grid_rows,
                            std::size_t grid_cols);
std::size_t sweep_index(std::size_t frame, std::size_t row, std::size_t col, std::size_t grid_rows,
                        std::size_t grid_cols);

double silu(double z);

/// Gated bidirectional (or causal) selective-scan mixer over a token sequence:
/// u = norm(seq); y = scan_fwd(u) [+ scan_bwd(u) reversed]; out = W_o(y * silu(W_g u)).
Sequence mamba_mixer(const Sequence& seq, const MixerLayerWeights& layer, DirectionMode mode,
                     const ParallelScanOptions& options = {});

/// X^(l) = X^(l-1) + mixer_l(X^(l-1)) for every layer, in sweep order.
TokenTensor projector_forward(const TokenTensor& x, const ProjectorWeights& weights,
                              const ProjectorConfig& config,
                              const ParallelScanOptions& options = {});
/// Single residual layer; projector_forward applied with one layer.
TokenTensor projector_layer(const TokenTensor& x, const MixerLayerWeights& layer,
                            const ProjectorConfig& config,
                            const ParallelScanOptions& options = {});

/// Projects one new frame [N x D] carrying scan state across calls. Only valid
/// for unidirectional configs (ModeError otherwise). Cost does not depend on
/// how many frames were seen before.
std::vector<double> projector_stream_step(std::span<const double> frame,
                                          const ProjectorWeights& weights,
                                          const ProjectorConfig& config, ProjectorStream& stream);

/// S[t_out][t_in] = ||delta Y at frame t_out|| / probe_scale, where the input
/// frame t_in of `base` is moved by a fixed random direction of norm probe_scale.
std::vector<std::vector<double>> sensitivity_matrix(const ProjectorWeights& weights,
                                                    const ProjectorConfig& config,
                                                    const TokenTensor& base, double probe_scale,
                                                    std::uint64_t seed);
/// Same, on a random base tensor of T frames drawn from `seed`.
std::vector<std::vector<double>> sensitivity_matrix(const ProjectorWeights& weights,
                                                    const ProjectorConfig& config,
                                                    std::size_t frames, double probe_scale,
                                                    std::uint64_t seed);

/// Binary container: "STRM", u32 version, u64 config fields, u32 direction,
/// then every weight as a little-endian f64 in declaration order.
void save_weights(const std::filesystem::path& path, const ProjectorConfig& config,
                  const ProjectorWeights& weights);
std::pair<ProjectorConfig, ProjectorWeights> load_weights(const std::filesystem::path& path);

inline constexpr std::uint32_t kWeightsFormatVersion = 1;

}  // namespace storm

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "storm/compression.hpp"
#include "storm/projector.hpp"
#include "storm/tensor.hpp"

namespace storm {

/// Frames of pixels, layout [frame][y][x][color].
struct Video {
  std::size_t frames = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t colors = 0;
  std::vector<double> pixels;

  std::size_t frame_size() const { return height * width * colors; }
  friend bool operator==(const Video&, const Video&) = default;
};

struct SynthVideoSpec {
  std::size_t frames = 8;
  std::size_t height_patches = 8;
  std::size_t width_patches = 8;
  std::size_t patch_size = 4;
  std::size_t colors = 3;
  std::optional<std::size_t> needle_frame;
  double needle_amplitude = 1.0;

  void validate() const;
};

/// Low-amplitude uniform noise; each frame drawn from its own split stream. A
/// needle adds needle_amplitude times a +-1 checkerboard of half-patch cells to
/// one frame.
Video synth_video(const SynthVideoSpec& spec, std::uint64_t seed);

/// Frozen stand-in for the image encoder: each patch is summarized by the mean
/// of its four quadrants per color, then mapped by a fixed random projection.
struct VisionStub {
  std::size_t patch_size = 4;
  std::size_t colors = 3;
  AffineMap projection;  // 4*colors -> token channels

  static VisionStub random(std::size_t patch_size, std::size_t colors, std::size_t channels,
                           std::uint64_t seed);
};

/// [frames x patches x channels], patches in raster order.
TokenTensor vision_stub_encode(const Video& video, const VisionStub& stub);

/// Toy prefill-only LLM: input projection, then layers of single-head softmax
/// self-attention (no positional terms) and an affine feed-forward, both residual.
struct LlmLayerWeights {
  AffineMap query, key, value, feed_forward;
};

struct LlmWeights {
  AffineMap input;  // token channels -> llm_dim
  std::vector<LlmLayerWeights> layers;

  static LlmWeights random(std::size_t token_channels, std::size_t llm_dim, std::size_t layers,
                           std::uint64_t seed, double scale = 0.1);
};

/// Runs the attention stack over M tokens and returns the mean of the final
/// token states. Cost grows as M^2 * llm_dim per layer.
std::vector<double> attention_stage(const Sequence& tokens, const LlmWeights& weights);

struct PipelineConfig {
  ProjectorConfig projector;
  CompressionSpec compression;
  std::size_t patch_rows = 8;  // raw patch grid; rows*cols = raw tokens per frame
  std::size_t patch_cols = 8;
  std::size_t patch_size = 4;
  std::size_t colors = 3;
  std::size_t llm_dim = 64;
  std::size_t llm_layers = 2;
  std::size_t frames = 32;
  std::size_t budget = 8192;
  std::size_t repetitions = 3;
  std::size_t warmup = 1;
  std::uint64_t seed = 42;

  void validate() const;
  /// Timing-free shape checks, including compression divisibility for `frames`.
  void validate_shapes() const;
  SynthVideoSpec video_spec() const;
};

struct BoundaryCounts {
  std::size_t raw_frames = 0, raw_tokens = 0;              // image-encoder output
  std::size_t projected_frames = 0, projected_tokens = 0;  // after downsample + projector
  std::size_t compressed_frames = 0, compressed_tokens = 0;
  std::size_t llm_tokens = 0;

  friend bool operator==(const BoundaryCounts&, const BoundaryCounts&) = default;
};

struct StageTimes {
  std::int64_t vision_ns = 0;
  std::int64_t projector_ns = 0;
  std::int64_t compression_ns = 0;
  std::int64_t llm_ns = 0;
};

struct PipelineReport {
  std::size_t frames = 0;
  double ratio_percent = 100.0;
  StageTimes median;          // median over timed repetitions, per stage
  std::int64_t overall_ns = 0;  // sum of the stage medians
  BoundaryCounts counts;
  std::size_t tokens_in = 0;   // visual tokens before compression
  std::size_t tokens_out = 0;  // visual tokens handed to the LLM stage
  double llm_share = 0.0;      // llm_ns / overall_ns
  double total_cv = 0.0;       // coefficient of variation of per-repetition totals
  bool noisy = false;
  bool within_budget = true;
  double output_checksum = 0.0;  // sum of the LLM stage output; timing-free
};

/// Fails fast (before any timing) on invalid config or compression mismatch.
PipelineReport run_pipeline(const PipelineConfig& config, const Video& video);
/// Uses synth_video(config.video_spec(), config.seed).
PipelineReport run_pipeline(const PipelineConfig& config);

struct ScalingFit {
  std::vector<std::pair<double, double>> points;  // (T, time)
  double loglog_slope = 0.0;
  double r_squared = 0.0;
};

/// Least-squares line through (log x, log y). Needs >= 2 points with positive values.
ScalingFit fit_loglog(std::vector<std::pair<double, double>> points);

struct ProfileFailure {
  std::size_t frames = 0;
  CompressionSpec compression;
  std::string message;
};

struct ProfileResult {
  std::vector<PipelineReport> reports;  // frames-major, spec-minor order
  std::vector<ProfileFailure> failures;
  ScalingFit llm_fit;        // uncompressed column
  ScalingFit projector_fit;  // uncompressed column
};

/// Runs every (frames, spec) point sequentially. Fits use the all-off spec when
/// it is in the grid, else the first spec.
ProfileResult latency_profile(const PipelineConfig& base, const std::vector<std::size_t>& frames,
                              const std::vector<CompressionSpec>& specs);

}  // namespace storm

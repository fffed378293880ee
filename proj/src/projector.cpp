#include "storm/projector.hpp"

#include <cmath>
#include <string>

#include "storm/errors.hpp"

namespace storm {

namespace {

MixerLayerWeights random_layer(Rng& rng, const ProjectorConfig& config, double scale) {
  const std::size_t d = config.channels;
  MixerLayerWeights layer;
  layer.norm = NormParams::unit(d);
  layer.forward = SelectiveScanWeights::random(rng, d, config.state_dim, scale);
  if (config.direction_mode == DirectionMode::bidirectional) {
    layer.backward = SelectiveScanWeights::random(rng, d, config.state_dim, scale);
  }
  layer.gate = random_affine(rng, d, d, scale);
  layer.output = random_affine(rng, d, d, scale);
  return layer;
}

void require_map(const AffineMap& map, std::size_t in, std::size_t out, const std::string& name) {
  map.validate();
  if (map.in_dim != in || map.out_dim != out) {
    throw ShapeError(name + ": expected " + std::to_string(in) + " -> " + std::to_string(out) +
                     ", got " + std::to_string(map.in_dim) + " -> " + std::to_string(map.out_dim));
  }
}

void require_scan(const SelectiveScanWeights& w, const ProjectorConfig& config,
                  const std::string& name) {
  w.validate();
  if (w.channels != config.channels || w.state_dim != config.state_dim) {
    throw ShapeError(name + ": scan weights do not match channels/state_dim");
  }
}

Sequence normalize_rows(const Sequence& seq, const NormParams& norm) {
  Sequence u(seq.length, seq.width);
  for (std::size_t i = 0; i < seq.length; ++i) layer_norm_into(seq.row(i), norm, u.row(i));
  return u;
}

// out_i = W_o (y_i * silu(W_g u_i)); overwrites y in place and returns it.
Sequence gated_output(Sequence y, const Sequence& u, const MixerLayerWeights& layer) {
  std::vector<double> gate(layer.gate.out_dim);
  std::vector<double> mixed(y.width);
  for (std::size_t i = 0; i < y.length; ++i) {
    affine_apply_into(layer.gate, u.row(i), gate);
    auto yi = y.row(i);
    for (std::size_t d = 0; d < y.width; ++d) mixed[d] = yi[d] * silu(gate[d]);
    affine_apply_into(layer.output, mixed, yi);
  }
  return y;
}

}  // namespace

void ProjectorConfig::validate() const {
  if (raw_tokens_per_frame == 0 || downsample_ratio == 0 || input_channels == 0 ||
      channels == 0 || state_dim == 0) {
    throw ConfigError("ProjectorConfig: counts must be >= 1");
  }
  if (raw_tokens_per_frame % downsample_ratio != 0) {
    throw ConfigError("ProjectorConfig: downsample ratio " + std::to_string(downsample_ratio) +
                      " does not divide " + std::to_string(raw_tokens_per_frame) + " raw tokens");
  }
  if (grid_rows * grid_cols != tokens_per_frame()) {
    throw ConfigError("ProjectorConfig: grid " + std::to_string(grid_rows) + "x" +
                      std::to_string(grid_cols) + " does not tile " +
                      std::to_string(tokens_per_frame()) + " tokens");
  }
}

ProjectorWeights ProjectorWeights::random(const ProjectorConfig& config, std::uint64_t seed,
                                          double scale) {
  config.validate();
  Rng rng(seed);
  ProjectorWeights w;
  w.downsample = random_affine(rng, config.downsample_ratio * config.input_channels,
                               config.channels, scale);
  for (std::size_t l = 0; l < config.layers; ++l) w.layers.push_back(random_layer(rng, config, scale));
  return w;
}

ProjectorWeights ProjectorWeights::zero_mixers(const ProjectorConfig& config, std::uint64_t seed) {
  auto w = random(config, seed);
  for (auto& layer : w.layers) {
    layer.forward = SelectiveScanWeights::zeros(config.channels, config.state_dim);
    if (layer.backward) {
      layer.backward = SelectiveScanWeights::zeros(config.channels, config.state_dim);
    }
    layer.gate = AffineMap::zeros(config.channels, config.channels);
    layer.output = AffineMap::zeros(config.channels, config.channels);
  }
  return w;
}

void ProjectorWeights::validate(const ProjectorConfig& config) const {
  config.validate();
  require_map(downsample, config.downsample_ratio * config.input_channels, config.channels,
              "downsample");
  if (layers.size() != config.layers) {
    throw ShapeError("ProjectorWeights: " + std::to_string(layers.size()) + " layers, config says " +
                     std::to_string(config.layers));
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    const std::string name = "layer " + std::to_string(l);
    layer.norm.validate();
    if (layer.norm.dim != config.channels) throw ShapeError(name + ": norm dim mismatch");
    require_scan(layer.forward, config, name + " forward");
    const bool bidirectional = config.direction_mode == DirectionMode::bidirectional;
    if (bidirectional != layer.backward.has_value()) {
      throw ShapeError(name + ": backward scan weights must be present exactly in bidirectional mode");
    }
    if (layer.backward) require_scan(*layer.backward, config, name + " backward");
    require_map(layer.gate, config.channels, config.channels, name + " gate");
    require_map(layer.output, config.channels, config.channels, name + " output");
  }
}

ProjectorStream ProjectorStream::start(const ProjectorConfig& config) {
  if (config.direction_mode != DirectionMode::unidirectional) {
    throw ModeError("streaming requires a unidirectional projector");
  }
  return {std::vector<ScanState>(config.layers, ScanState(config.channels, config.state_dim)), 0};
}

std::vector<double> downsample_frame(std::span<const double> raw_frame,
                                     const ProjectorWeights& weights,
                                     const ProjectorConfig& config) {
  config.validate();
  const std::size_t group = config.downsample_ratio * config.input_channels;
  if (raw_frame.size() != config.raw_tokens_per_frame * config.input_channels) {
    throw ShapeError("downsample_frame: expected " + std::to_string(config.raw_tokens_per_frame) +
                     "x" + std::to_string(config.input_channels) + " raw values, got " +
                     std::to_string(raw_frame.size()));
  }
  const std::size_t n = config.tokens_per_frame();
  std::vector<double> out(n * config.channels);
  // r consecutive raw tokens are contiguous in memory, so each group already
  // is the channel concatenation.
  for (std::size_t i = 0; i < n; ++i) {
    affine_apply_into(weights.downsample, raw_frame.subspan(i * group, group),
                      std::span<double>(out).subspan(i * config.channels, config.channels));
  }
  return out;
}

TokenTensor downsample_video(const TokenTensor& raw, const ProjectorWeights& weights,
                             const ProjectorConfig& config) {
  if (raw.tokens_per_frame() != config.raw_tokens_per_frame ||
      raw.channels() != config.input_channels) {
    throw ShapeError("downsample_video: raw tensor does not match the projector config");
  }
  TokenTensor out(raw.frames(), config.tokens_per_frame(), config.channels);
  for (std::size_t t = 0; t < raw.frames(); ++t) {
    const auto frame = downsample_frame(raw.frame(t), weights, config);
    std::copy(frame.begin(), frame.end(), out.frame(t).begin());
  }
  return out;
}

std::size_t sweep_index(std::size_t frame, std::size_t row, std::size_t col, std::size_t grid_rows,
                        std::size_t grid_cols) {
  return frame * grid_rows * grid_cols + row * grid_cols + col;
}

Sequence flatten_sweep(const TokenTensor& x, std::size_t grid_rows, std::size_t grid_cols) {
  return flatten_sweep(TokenTensor(x), grid_rows, grid_cols);
}

Sequence flatten_sweep(TokenTensor&& x, std::size_t grid_rows, std::size_t grid_cols) {
  if (grid_rows * grid_cols != x.tokens_per_frame()) {
    throw ShapeError("flatten_sweep: grid " + std::to_string(grid_rows) + "x" +
                     std::to_string(grid_cols) + " does not match " +
                     std::to_string(x.tokens_per_frame()) + " tokens per frame");
  }
  const std::size_t len = x.frames() * x.tokens_per_frame();
  const std::size_t width = x.channels();
  return {len, width, std::move(x).release()};
}

TokenTensor unflatten_sweep(Sequence&& seq, std::size_t frames, std::size_t grid_rows,
                            std::size_t grid_cols) {
  if (frames * grid_rows * grid_cols != seq.length) {
    throw ShapeError("unflatten_sweep: sequence length does not match frames x grid");
  }
  return {frames, grid_rows * grid_cols, seq.width, std::move(seq.values)};
}

double silu(double z) { return z * sigmoid(z); }

Sequence mamba_mixer(const Sequence& seq, const MixerLayerWeights& layer, DirectionMode mode,
                     const ParallelScanOptions& options) {
  if (seq.length == 0) throw ShapeError("mamba_mixer: empty sequence");
  if (seq.width != layer.norm.dim) throw ShapeError("mamba_mixer: width does not match layer");
  const Sequence u = normalize_rows(seq, layer.norm);
  const ScanState zero(layer.forward.channels, layer.forward.state_dim);
  Sequence y = scan_parallel(u, layer.forward, zero, ScanDirection::forward, options).y;
  if (mode == DirectionMode::bidirectional) {
    if (!layer.backward) throw ModeError("mamba_mixer: bidirectional mode needs backward weights");
    const auto yb = scan_parallel(u, *layer.backward, zero, ScanDirection::reverse, options).y;
    for (std::size_t i = 0; i < y.values.size(); ++i) y.values[i] += yb.values[i];
  }
  return gated_output(std::move(y), u, layer);
}

TokenTensor projector_layer(const TokenTensor& x, const MixerLayerWeights& layer,
                            const ProjectorConfig& config, const ParallelScanOptions& options) {
  const auto seq = flatten_sweep(x, config.grid_rows, config.grid_cols);
  const auto branch = mamba_mixer(seq, layer, config.direction_mode, options);
  TokenTensor out = x;
  auto values = out.values();
  for (std::size_t i = 0; i < values.size(); ++i) values[i] += branch.values[i];
  return out;
}

TokenTensor projector_forward(const TokenTensor& x, const ProjectorWeights& weights,
                              const ProjectorConfig& config, const ParallelScanOptions& options) {
  weights.validate(config);
  if (x.tokens_per_frame() != config.tokens_per_frame() || x.channels() != config.channels) {
    throw ShapeError("projector_forward: input [" + std::to_string(x.frames()) + "x" +
                     std::to_string(x.tokens_per_frame()) + "x" + std::to_string(x.channels()) +
                     "] does not match config");
  }
  TokenTensor current = x;
  for (const auto& layer : weights.layers) current = projector_layer(current, layer, config, options);
  return current;
}

std::vector<double> projector_stream_step(std::span<const double> frame,
                                          const ProjectorWeights& weights,
                                          const ProjectorConfig& config, ProjectorStream& stream) {
  if (config.direction_mode != DirectionMode::unidirectional) {
    throw ModeError("projector_stream_step: streaming requires a unidirectional projector");
  }
  const std::size_t n = config.tokens_per_frame();
  if (frame.size() != n * config.channels) throw ShapeError("projector_stream_step: frame shape");
  if (stream.layer_states.size() != weights.layers.size()) {
    throw ShapeError("projector_stream_step: stream was started for a different config");
  }
  Sequence x(n, config.channels, std::vector<double>(frame.begin(), frame.end()));
  for (std::size_t l = 0; l < weights.layers.size(); ++l) {
    const auto& layer = weights.layers[l];
    const Sequence u = normalize_rows(x, layer.norm);
    auto scanned = scan_sequential(u, layer.forward, stream.layer_states[l]);
    stream.layer_states[l] = std::move(scanned.h_final);
    const auto branch = gated_output(std::move(scanned.y), u, layer);
    for (std::size_t i = 0; i < x.values.size(); ++i) x.values[i] += branch.values[i];
  }
  ++stream.frames_seen;
  return std::move(x.values);
}

std::vector<std::vector<double>> sensitivity_matrix(const ProjectorWeights& weights,
                                                    const ProjectorConfig& config,
                                                    const TokenTensor& base, double probe_scale,
                                                    std::uint64_t seed) {
  if (!(probe_scale > 0.0)) throw ConfigError("sensitivity_matrix: probe_scale must be > 0");
  const std::size_t frames = base.frames();
  const auto reference = projector_forward(base, weights, config);
  Rng rng(seed);
  std::vector<std::vector<double>> s(frames, std::vector<double>(frames, 0.0));
  for (std::size_t t_in = 0; t_in < frames; ++t_in) {
    auto direction = rng_fill(rng, base.frame_stride(), 1.0);
    double norm = 0.0;
    for (double v : direction) norm += v * v;
    norm = std::sqrt(norm);
    TokenTensor probed = base;
    auto target = probed.frame(t_in);
    for (std::size_t i = 0; i < target.size(); ++i) target[i] += probe_scale * direction[i] / norm;
    const auto response = projector_forward(probed, weights, config);
    for (std::size_t t_out = 0; t_out < frames; ++t_out) {
      const auto a = response.frame(t_out);
      const auto b = reference.frame(t_out);
      double acc = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
      s[t_out][t_in] = std::sqrt(acc) / probe_scale;
    }
  }
  return s;
}

std::vector<std::vector<double>> sensitivity_matrix(const ProjectorWeights& weights,
                                                    const ProjectorConfig& config,
                                                    std::size_t frames, double probe_scale,
                                                    std::uint64_t seed) {
  if (frames < 2) throw ConfigError("sensitivity_matrix: need at least 2 frames");
  Rng rng(seed);
  const auto base = random_tensor(rng, frames, config.tokens_per_frame(), config.channels, 1.0);
  return sensitivity_matrix(weights, config, base, probe_scale, rng.split(1).next_u64());
}

}  // namespace storm

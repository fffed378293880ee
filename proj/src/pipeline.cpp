#include "storm/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "storm/errors.hpp"
#include "storm/tolerances.hpp"

namespace storm {

namespace {

using Clock = std::chrono::steady_clock;

std::int64_t elapsed_ns(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(b - a).count();
}

std::int64_t median_of(std::vector<std::int64_t> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : (v[m - 1] + v[m]) / 2;
}

double coefficient_of_variation(const std::vector<std::int64_t>& v) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  if (mean <= 0.0) return 0.0;
  double var = 0.0;
  for (auto x : v) var += (static_cast<double>(x) - mean) * (static_cast<double>(x) - mean);
  return std::sqrt(var / n) / mean;
}

// Distinct, reproducible seeds for each pipeline component.
std::uint64_t component_seed(std::uint64_t seed, std::uint64_t component) {
  return Rng(seed).split(component).next_u64();
}

}  // namespace

void SynthVideoSpec::validate() const {
  if (frames == 0 || height_patches == 0 || width_patches == 0 || patch_size < 2 || colors == 0) {
    throw ConfigError("SynthVideoSpec: counts must be >= 1 and patch_size >= 2");
  }
  if (patch_size % 2 != 0) throw ConfigError("SynthVideoSpec: patch_size must be even");
  if (needle_frame && *needle_frame >= frames) {
    throw ConfigError("SynthVideoSpec: needle_frame " + std::to_string(*needle_frame) +
                      " is outside " + std::to_string(frames) + " frames");
  }
  if (!std::isfinite(needle_amplitude)) throw ConfigError("SynthVideoSpec: non-finite amplitude");
}

Video synth_video(const SynthVideoSpec& spec, std::uint64_t seed) {
  spec.validate();
  Video v{spec.frames, spec.height_patches * spec.patch_size, spec.width_patches * spec.patch_size,
          spec.colors, {}};
  v.pixels.resize(v.frames * v.frame_size());
  const Rng root(seed);
  for (std::size_t t = 0; t < v.frames; ++t) {
    Rng rng = root.split(t);
    const auto noise = rng_fill(rng, v.frame_size(), 0.05);
    std::copy(noise.begin(), noise.end(), v.pixels.begin() + static_cast<std::ptrdiff_t>(t * v.frame_size()));
  }
  if (spec.needle_frame) {
    double* frame = v.pixels.data() + *spec.needle_frame * v.frame_size();
    // Checkerboard of half-patch cells, so it survives quadrant averaging.
    const std::size_t cell = spec.patch_size / 2;
    for (std::size_t y = 0; y < v.height; ++y) {
      for (std::size_t x = 0; x < v.width; ++x) {
        const double sign = (x / cell + y / cell) % 2 == 0 ? 1.0 : -1.0;
        for (std::size_t c = 0; c < v.colors; ++c) {
          frame[(y * v.width + x) * v.colors + c] += spec.needle_amplitude * sign;
        }
      }
    }
  }
  return v;
}

VisionStub VisionStub::random(std::size_t patch_size, std::size_t colors, std::size_t channels,
                              std::uint64_t seed) {
  Rng rng(seed);
  return {patch_size, colors, random_affine(rng, 4 * colors, channels, 0.5)};
}

TokenTensor vision_stub_encode(const Video& video, const VisionStub& stub) {
  const std::size_t ps = stub.patch_size;
  if (ps < 2 || ps % 2 != 0 || video.height % ps != 0 || video.width % ps != 0 ||
      video.colors != stub.colors || video.pixels.size() != video.frames * video.frame_size()) {
    throw ShapeError("vision_stub_encode: video does not tile into patches for this stub");
  }
  const std::size_t rows = video.height / ps, cols = video.width / ps, half = ps / 2;
  const std::size_t features = 4 * stub.colors;
  TokenTensor out(video.frames, rows * cols, stub.projection.out_dim);
  std::vector<double> feat(features);
  const double inv = 1.0 / static_cast<double>(half * half);
  for (std::size_t t = 0; t < video.frames; ++t) {
    const double* frame = video.pixels.data() + t * video.frame_size();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        std::fill(feat.begin(), feat.end(), 0.0);
        for (std::size_t y = 0; y < ps; ++y) {
          for (std::size_t x = 0; x < ps; ++x) {
            const std::size_t quadrant = (y / half) * 2 + (x / half);
            const double* px = frame + ((r * ps + y) * video.width + (c * ps + x)) * video.colors;
            for (std::size_t k = 0; k < stub.colors; ++k) feat[quadrant * stub.colors + k] += px[k];
          }
        }
        for (auto& f : feat) f *= inv;
        auto token = out.frame(t).subspan((r * cols + c) * out.channels(), out.channels());
        affine_apply_into(stub.projection, feat, token);
      }
    }
  }
  return out;
}

LlmWeights LlmWeights::random(std::size_t token_channels, std::size_t llm_dim, std::size_t layers,
                              std::uint64_t seed, double scale) {
  Rng rng(seed);
  LlmWeights w;
  w.input = random_affine(rng, token_channels, llm_dim, scale);
  for (std::size_t l = 0; l < layers; ++l) {
    LlmLayerWeights layer;
    layer.query = random_affine(rng, llm_dim, llm_dim, scale);
    layer.key = random_affine(rng, llm_dim, llm_dim, scale);
    layer.value = random_affine(rng, llm_dim, llm_dim, scale);
    layer.feed_forward = random_affine(rng, llm_dim, llm_dim, scale);
    w.layers.push_back(std::move(layer));
  }
  return w;
}

std::vector<double> attention_stage(const Sequence& tokens, const LlmWeights& weights) {
  if (tokens.length == 0) throw ShapeError("attention_stage: no tokens");
  weights.input.validate();
  const std::size_t m = tokens.length, e = weights.input.out_dim;
  Sequence x(m, e);
  for (std::size_t i = 0; i < m; ++i) affine_apply_into(weights.input, tokens.row(i), x.row(i));

  Sequence q(m, e), k(m, e), v(m, e), z(m, e);
  std::vector<double> scores(m), ff(e);
  const double scale = 1.0 / std::sqrt(static_cast<double>(e));
  for (const auto& layer : weights.layers) {
    for (std::size_t i = 0; i < m; ++i) {
      affine_apply_into(layer.query, x.row(i), q.row(i));
      affine_apply_into(layer.key, x.row(i), k.row(i));
      affine_apply_into(layer.value, x.row(i), v.row(i));
    }
    for (std::size_t i = 0; i < m; ++i) {
      const double* qi = q.values.data() + i * e;
      double peak = -INFINITY;
      for (std::size_t j = 0; j < m; ++j) {
        const double* kj = k.values.data() + j * e;
        double dot = 0.0;
        for (std::size_t c = 0; c < e; ++c) dot += qi[c] * kj[c];
        scores[j] = dot * scale;
        peak = std::max(peak, scores[j]);
      }
      double norm = 0.0;
      for (auto& s : scores) {
        s = std::exp(s - peak);
        norm += s;
      }
      double* zi = z.values.data() + i * e;
      std::fill(zi, zi + e, 0.0);
      for (std::size_t j = 0; j < m; ++j) {
        const double p = scores[j];
        const double* vj = v.values.data() + j * e;
        for (std::size_t c = 0; c < e; ++c) zi[c] += p * vj[c];
      }
      const double* xi = x.values.data() + i * e;
      for (std::size_t c = 0; c < e; ++c) zi[c] = xi[c] + zi[c] / norm;
    }
    for (std::size_t i = 0; i < m; ++i) {
      affine_apply_into(layer.feed_forward, z.row(i), ff);
      auto xi = x.row(i);
      const auto zi = z.row(i);
      for (std::size_t c = 0; c < e; ++c) xi[c] = zi[c] + ff[c];
    }
  }
  std::vector<double> pooled(e, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t c = 0; c < e; ++c) pooled[c] += x.values[i * e + c];
  }
  for (auto& p : pooled) p /= static_cast<double>(m);
  return pooled;
}

void PipelineConfig::validate_shapes() const {
  projector.validate();
  if (patch_rows * patch_cols != projector.raw_tokens_per_frame) {
    throw ConfigError("PipelineConfig: patch grid " + std::to_string(patch_rows) + "x" +
                      std::to_string(patch_cols) + " does not give " +
                      std::to_string(projector.raw_tokens_per_frame) + " raw tokens");
  }
  if (frames == 0 || llm_dim == 0) throw ConfigError("PipelineConfig: frames and llm_dim must be >= 1");
  video_spec().validate();
  compression.validate_for(frames, projector.grid_rows, projector.grid_cols);
}

void PipelineConfig::validate() const {
  if (repetitions < 3) throw ConfigError("PipelineConfig: repetitions must be >= 3");
  if (warmup < 1) throw ConfigError("PipelineConfig: warmup must be >= 1");
  validate_shapes();
}

SynthVideoSpec PipelineConfig::video_spec() const {
  SynthVideoSpec spec;
  spec.frames = frames;
  spec.height_patches = patch_rows;
  spec.width_patches = patch_cols;
  spec.patch_size = patch_size;
  spec.colors = colors;
  return spec;
}

PipelineReport run_pipeline(const PipelineConfig& config, const Video& video) {
  config.validate();
  if (video.frames != config.frames || video.height != config.patch_rows * config.patch_size ||
      video.width != config.patch_cols * config.patch_size || video.colors != config.colors) {
    throw ShapeError("run_pipeline: video does not match the pipeline config");
  }
  const auto& pc = config.projector;
  const auto stub = VisionStub::random(config.patch_size, config.colors, pc.input_channels,
                                       component_seed(config.seed, 1));
  const auto projector = ProjectorWeights::random(pc, component_seed(config.seed, 2));
  const auto llm = LlmWeights::random(pc.channels, config.llm_dim, config.llm_layers,
                                      component_seed(config.seed, 3));
  const auto shape = compressed_shape(config.frames, pc.grid_rows, pc.grid_cols, config.compression);

  PipelineReport report;
  report.frames = config.frames;
  report.ratio_percent = compression_ratio(config.compression);
  report.counts = {config.frames, pc.raw_tokens_per_frame, config.frames, pc.tokens_per_frame(),
                   shape.frames, shape.tokens_per_frame, shape.frames * shape.tokens_per_frame};
  report.tokens_in = config.frames * pc.tokens_per_frame();
  report.tokens_out = report.counts.llm_tokens;
  report.within_budget = report.tokens_out <= config.budget;

  std::vector<std::int64_t> vision, proj, comp, llm_t, total;
  for (std::size_t rep = 0; rep < config.warmup + config.repetitions; ++rep) {
    const auto t0 = Clock::now();
    const auto raw = vision_stub_encode(video, stub);
    const auto t1 = Clock::now();
    const auto projected = projector_forward(downsample_video(raw, projector, pc), projector, pc);
    const auto t2 = Clock::now();
    auto compressed = apply_compression(projected, pc.grid_rows, pc.grid_cols, config.compression);
    const auto t3 = Clock::now();
    const std::size_t frames_out = compressed.frames(), tokens_out = compressed.tokens_per_frame();
    const Sequence flat(frames_out * tokens_out, compressed.channels(), std::move(compressed).release());
    const auto pooled = attention_stage(flat, llm);
    const auto t4 = Clock::now();

    if (frames_out != shape.frames || tokens_out != shape.tokens_per_frame) {
      throw ShapeError("run_pipeline: compressed shape disagrees with the shape law");
    }
    report.output_checksum = std::accumulate(pooled.begin(), pooled.end(), 0.0);
    if (rep < config.warmup) continue;
    vision.push_back(elapsed_ns(t0, t1));
    proj.push_back(elapsed_ns(t1, t2));
    comp.push_back(elapsed_ns(t2, t3));
    llm_t.push_back(elapsed_ns(t3, t4));
    total.push_back(elapsed_ns(t0, t4));
  }
  report.median = {median_of(vision), median_of(proj), median_of(comp), median_of(llm_t)};
  report.overall_ns = report.median.vision_ns + report.median.projector_ns +
                      report.median.compression_ns + report.median.llm_ns;
  report.llm_share = report.overall_ns > 0 ? static_cast<double>(report.median.llm_ns) /
                                                 static_cast<double>(report.overall_ns)
                                           : 0.0;
  report.total_cv = coefficient_of_variation(total);
  report.noisy = report.total_cv > tol::kNoisyCv;
  return report;
}

PipelineReport run_pipeline(const PipelineConfig& config) {
  config.validate();
  return run_pipeline(config, synth_video(config.video_spec(), config.seed));
}

ScalingFit fit_loglog(std::vector<std::pair<double, double>> points) {
  if (points.size() < 2) throw ConfigError("fit_loglog: need at least 2 points");
  ScalingFit fit;
  fit.points = std::move(points);
  const double n = static_cast<double>(fit.points.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (const auto& [x, y] : fit.points) {
    if (!(x > 0.0) || !(y > 0.0)) throw NumericError("fit_loglog: values must be positive");
    const double lx = std::log(x), ly = std::log(y);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    syy += ly * ly;
  }
  const double cov = sxy - sx * sy / n;
  const double varx = sxx - sx * sx / n;
  const double vary = syy - sy * sy / n;
  if (varx <= 0.0) throw NumericError("fit_loglog: x values are all equal");
  fit.loglog_slope = cov / varx;
  fit.r_squared = vary > 0.0 ? (cov * cov) / (varx * vary) : 1.0;
  return fit;
}

ProfileResult latency_profile(const PipelineConfig& base, const std::vector<std::size_t>& frames,
                              const std::vector<CompressionSpec>& specs) {
  if (frames.empty() || specs.empty()) throw ConfigError("latency_profile: empty grid");
  const auto off = std::find(specs.begin(), specs.end(), CompressionSpec{});
  const CompressionSpec fit_spec = off != specs.end() ? *off : specs.front();

  ProfileResult result;
  std::vector<std::pair<double, double>> llm_points, projector_points;
  for (const auto t : frames) {
    for (const auto& spec : specs) {
      PipelineConfig config = base;
      config.frames = t;
      config.compression = spec;
      try {
        auto report = run_pipeline(config);
        if (spec == fit_spec) {
          llm_points.emplace_back(static_cast<double>(t), static_cast<double>(report.median.llm_ns));
          projector_points.emplace_back(static_cast<double>(t),
                                        static_cast<double>(report.median.projector_ns));
        }
        result.reports.push_back(std::move(report));
      } catch (const Error& e) {
        result.failures.push_back({t, spec, e.what()});
      }
    }
  }
  if (llm_points.size() >= 2) {
    result.llm_fit = fit_loglog(std::move(llm_points));
    result.projector_fit = fit_loglog(std::move(projector_points));
  }
  return result;
}

}  // namespace storm

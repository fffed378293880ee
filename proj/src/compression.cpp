#include "storm/compression.hpp"

#include <cmath>
#include <cstdio>

#include "storm/errors.hpp"

namespace storm {

namespace {

std::size_t exact_sqrt(std::size_t p) {
  auto r = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(p))));
  while (r * r > p) --r;
  while ((r + 1) * (r + 1) <= p) ++r;
  return r;
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace

void CompressionSpec::validate() const {
  if (temporal_pool_k == 0 || spatial_pool_p == 0 || temporal_sample_s == 0) {
    throw ConfigError("CompressionSpec: factors must be >= 1");
  }
  const auto w = exact_sqrt(spatial_pool_p);
  if (w * w != spatial_pool_p) {
    throw ConfigError("CompressionSpec: spatial pool factor " + std::to_string(spatial_pool_p) +
                      " is not a perfect square");
  }
}

std::size_t CompressionSpec::spatial_window() const { return exact_sqrt(spatial_pool_p); }

void CompressionSpec::validate_for(std::size_t frames, std::size_t grid_rows,
                                   std::size_t grid_cols) const {
  validate();
  if (frames % temporal_pool_k != 0) {
    throw ConfigError("temporal pool factor " + std::to_string(temporal_pool_k) +
                      " does not divide " + std::to_string(frames) + " frames");
  }
  const auto w = spatial_window();
  if (grid_rows % w != 0 || grid_cols % w != 0) {
    throw ConfigError("spatial window " + std::to_string(w) + " does not tile the " +
                      std::to_string(grid_rows) + "x" + std::to_string(grid_cols) + " grid");
  }
}

TokenTensor temporal_pool(const TokenTensor& x, std::size_t k) {
  if (k == 0) throw ConfigError("temporal_pool: k must be >= 1");
  if (x.frames() % k != 0) {
    throw ConfigError("temporal_pool: k=" + std::to_string(k) + " does not divide T=" +
                      std::to_string(x.frames()));
  }
  if (k == 1) return x;
  const std::size_t out_frames = x.frames() / k;
  TokenTensor out(out_frames, x.tokens_per_frame(), x.channels());
  const double inv = 1.0 / static_cast<double>(k);
  for (std::size_t j = 0; j < out_frames; ++j) {
    auto dst = out.frame(j);
    for (std::size_t i = 0; i < k; ++i) {
      const auto src = x.frame(j * k + i);
      for (std::size_t e = 0; e < dst.size(); ++e) dst[e] += src[e];
    }
    for (auto& v : dst) v *= inv;
  }
  return out;
}

TokenTensor spatial_pool(const TokenTensor& x, std::size_t grid_rows, std::size_t grid_cols,
                         std::size_t p) {
  CompressionSpec spec{1, p, 1};
  spec.validate();
  if (grid_rows * grid_cols != x.tokens_per_frame()) {
    throw ShapeError("spatial_pool: grid does not match tokens per frame");
  }
  spec.validate_for(x.frames(), grid_rows, grid_cols);
  if (p == 1) return x;
  const std::size_t w = spec.spatial_window();
  const std::size_t out_rows = grid_rows / w, out_cols = grid_cols / w;
  const std::size_t dch = x.channels();
  TokenTensor out(x.frames(), out_rows * out_cols, dch);
  const double inv = 1.0 / static_cast<double>(p);
  for (std::size_t t = 0; t < x.frames(); ++t) {
    for (std::size_t r = 0; r < out_rows; ++r) {
      for (std::size_t c = 0; c < out_cols; ++c) {
        const std::size_t n_out = r * out_cols + c;
        for (std::size_t dr = 0; dr < w; ++dr) {
          for (std::size_t dc = 0; dc < w; ++dc) {
            const auto src = x.token(t, (r * w + dr) * grid_cols + (c * w + dc));
            for (std::size_t d = 0; d < dch; ++d) out(t, n_out, d) += src[d];
          }
        }
        for (std::size_t d = 0; d < dch; ++d) out(t, n_out, d) *= inv;
      }
    }
  }
  return out;
}

TokenTensor temporal_sample(const TokenTensor& x, std::size_t s) {
  if (s == 0) throw ConfigError("temporal_sample: s must be >= 1");
  if (s == 1) return x;
  const std::size_t out_frames = ceil_div(x.frames(), s);
  TokenTensor out(out_frames, x.tokens_per_frame(), x.channels());
  for (std::size_t j = 0; j < out_frames; ++j) {
    const auto src = x.frame(j * s);
    std::copy(src.begin(), src.end(), out.frame(j).begin());
  }
  return out;
}

double compression_ratio(const CompressionSpec& spec) {
  spec.validate();
  return 100.0 / static_cast<double>(spec.temporal_pool_k * spec.spatial_pool_p *
                                     spec.temporal_sample_s);
}

double round_percent(double percent) { return std::round(percent * 100.0) / 100.0; }

std::string format_percent(double percent) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", round_percent(percent));
  return buf;
}

CompressedShape compressed_shape(std::size_t frames, std::size_t grid_rows, std::size_t grid_cols,
                                 const CompressionSpec& spec) {
  spec.validate_for(frames, grid_rows, grid_cols);
  return {ceil_div(frames / spec.temporal_pool_k, spec.temporal_sample_s),
          grid_rows * grid_cols / spec.spatial_pool_p};
}

namespace {

BudgetReport make_report(std::size_t frames, std::size_t tokens, const CompressedShape& shape,
                         std::size_t budget) {
  BudgetReport r;
  r.frames_in = frames;
  r.tokens_per_frame_in = tokens;
  r.frames_out = shape.frames;
  r.tokens_out = shape.tokens_per_frame;
  r.total_tokens = shape.frames * shape.tokens_per_frame;
  r.ratio_percent = 100.0 * static_cast<double>(r.total_tokens) / static_cast<double>(frames * tokens);
  r.budget = budget;
  r.within_budget = r.total_tokens <= budget;
  return r;
}

}  // namespace

BudgetReport token_budget_check(std::size_t frames, std::size_t tokens_per_frame,
                                const CompressionSpec& spec, std::size_t budget) {
  spec.validate();
  if (frames == 0 || tokens_per_frame == 0) throw ConfigError("token_budget_check: empty input");
  if (frames % spec.temporal_pool_k != 0) {
    throw ConfigError("temporal pool factor " + std::to_string(spec.temporal_pool_k) +
                      " does not divide " + std::to_string(frames) + " frames");
  }
  if (tokens_per_frame % spec.spatial_pool_p != 0) {
    throw ConfigError("spatial pool factor " + std::to_string(spec.spatial_pool_p) +
                      " does not divide " + std::to_string(tokens_per_frame) + " tokens");
  }
  const CompressedShape shape{ceil_div(frames / spec.temporal_pool_k, spec.temporal_sample_s),
                              tokens_per_frame / spec.spatial_pool_p};
  return make_report(frames, tokens_per_frame, shape, budget);
}

BudgetReport token_budget_check(std::size_t frames, std::size_t grid_rows, std::size_t grid_cols,
                                const CompressionSpec& spec, std::size_t budget) {
  return make_report(frames, grid_rows * grid_cols,
                     compressed_shape(frames, grid_rows, grid_cols, spec), budget);
}

TokenTensor apply_compression(const TokenTensor& x, std::size_t grid_rows, std::size_t grid_cols,
                              const CompressionSpec& spec) {
  if (grid_rows * grid_cols != x.tokens_per_frame()) {
    throw ShapeError("apply_compression: grid does not match tokens per frame");
  }
  spec.validate_for(x.frames(), grid_rows, grid_cols);
  TokenTensor out = spatial_pool(x, grid_rows, grid_cols, spec.spatial_pool_p);
  out = temporal_pool(out, spec.temporal_pool_k);
  return temporal_sample(out, spec.temporal_sample_s);
}

}  // namespace storm

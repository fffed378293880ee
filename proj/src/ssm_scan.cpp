#include "storm/ssm_scan.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <thread>

#include "storm/errors.hpp"

namespace storm {

namespace {

void check_map(const AffineMap& map, std::size_t in, std::size_t out, const char* name) {
  map.validate();
  if (map.in_dim != in || map.out_dim != out) {
    throw ShapeError(std::string("SelectiveScanWeights.") + name + " must map " +
                     std::to_string(in) + " -> " + std::to_string(out));
  }
}

void check_inputs(const Sequence& x, const SelectiveScanWeights& weights, const ScanState& h0) {
  weights.validate();
  if (x.length == 0) throw ShapeError("scan: empty sequence");
  if (x.width != weights.channels || x.values.size() != x.length * x.width) {
    throw ShapeError("scan: sequence width " + std::to_string(x.width) + " != channels " +
                     std::to_string(weights.channels));
  }
  if (h0.channels != weights.channels || h0.state_dim != weights.state_dim ||
      h0.h.size() != weights.channels * weights.state_dim) {
    throw ShapeError("scan: initial state shape does not match weights");
  }
  if (!all_finite(x.values)) throw NumericError("scan: non-finite input");
  if (!all_finite(h0.h)) throw NumericError("scan: non-finite initial state");
}

std::size_t position(std::size_t step, std::size_t length, ScanDirection direction) {
  return direction == ScanDirection::forward ? step : length - 1 - step;
}

// Input projections for every token: delta (softplus of w_delta x), B x, C x.
struct Projections {
  std::vector<double> z;      // [L x D] pre-softplus
  std::vector<double> delta;  // [L x D]
  std::vector<double> bv;     // [L x H]
  std::vector<double> cv;     // [L x H]
};

Projections project_all(const Sequence& x, const SelectiveScanWeights& w) {
  const std::size_t len = x.length, dch = w.channels, hs = w.state_dim;
  Projections p{std::vector<double>(len * dch), std::vector<double>(len * dch),
                std::vector<double>(len * hs), std::vector<double>(len * hs)};
  for (std::size_t t = 0; t < len; ++t) {
    auto xt = x.row(t);
    std::span<double> z(p.z.data() + t * dch, dch);
    affine_apply_into(w.w_delta, xt, z);
    for (std::size_t d = 0; d < dch; ++d) p.delta[t * dch + d] = softplus(z[d]);
    affine_apply_into(w.w_b, xt, {p.bv.data() + t * hs, hs});
    affine_apply_into(w.w_c, xt, {p.cv.data() + t * hs, hs});
  }
  return p;
}

// In-place inclusive prefix combine over n elements of `width` lanes each.
// Element i is the affine map h -> a[i]*h + b[i]; after the call element i
// holds the composition of elements 0..i. Pairs are contracted, the half-size
// problem solved recursively, and the result expanded back. Every prefix is a
// fixed expression of elements at or before its index.
void combine_prefix(std::vector<double>& a, std::vector<double>& b, std::size_t n,
                    std::size_t width) {
  if (n <= 1) return;
  const std::size_t m = n / 2;
  std::vector<double> pa(m * width), pb(m * width);
  for (std::size_t j = 0; j < m; ++j) {
    const double* a0 = a.data() + (2 * j) * width;
    const double* b0 = b.data() + (2 * j) * width;
    const double* a1 = a0 + width;
    const double* b1 = b0 + width;
    double* qa = pa.data() + j * width;
    double* qb = pb.data() + j * width;
    for (std::size_t k = 0; k < width; ++k) {
      qa[k] = a1[k] * a0[k];
      qb[k] = a1[k] * b0[k] + b1[k];
    }
  }
  combine_prefix(pa, pb, m, width);
  // Even slots 2j (j >= 1) and a trailing odd-length slot: own map after prefix j-1.
  auto extend = [&](std::size_t slot, std::size_t prefix) {
    double* ea = a.data() + slot * width;
    double* eb = b.data() + slot * width;
    const double* qa = pa.data() + prefix * width;
    const double* qb = pb.data() + prefix * width;
    for (std::size_t k = 0; k < width; ++k) {
      const double own = ea[k];
      ea[k] = own * qa[k];
      eb[k] = own * qb[k] + eb[k];
    }
  };
  for (std::size_t j = 1; j < m; ++j) extend(2 * j, j - 1);
  if (n % 2 == 1) extend(n - 1, m - 1);
  for (std::size_t j = 0; j < m; ++j) {
    std::copy_n(pa.data() + j * width, width, a.data() + (2 * j + 1) * width);
    std::copy_n(pb.data() + j * width, width, b.data() + (2 * j + 1) * width);
  }
}

void scan_channel_block(const Sequence& x, const SelectiveScanWeights& w, const ScanState& h0,
                        ScanDirection direction, const Projections& p, std::size_t d0,
                        std::size_t d1, std::size_t chunk, ScanResult& out) {
  const std::size_t len = x.length, dch = w.channels, hs = w.state_dim;
  const std::size_t width = (d1 - d0) * hs;
  const std::size_t cap = std::min(len, chunk);
  std::vector<double> a(cap * width), b(cap * width);
  std::vector<double> carry(h0.h.begin() + static_cast<std::ptrdiff_t>(d0 * hs),
                            h0.h.begin() + static_cast<std::ptrdiff_t>(d1 * hs));
  for (std::size_t s0 = 0; s0 < len; s0 += cap) {
    const std::size_t n = std::min(cap, len - s0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t t = position(s0 + i, len, direction);
      double* as = a.data() + i * width;
      double* bs = b.data() + i * width;
      for (std::size_t d = d0; d < d1; ++d) {
        const double delta = p.delta[t * dch + d];
        const double xd = x.values[t * dch + d];
        for (std::size_t h = 0; h < hs; ++h) {
          const std::size_t k = (d - d0) * hs + h;
          as[k] = std::exp(delta * w.decay(d, h));
          bs[k] = (delta * p.bv[t * hs + h]) * xd;
        }
      }
    }
    combine_prefix(a, b, n, width);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t t = position(s0 + i, len, direction);
      const double* as = a.data() + i * width;
      double* bs = b.data() + i * width;
      for (std::size_t k = 0; k < width; ++k) bs[k] = as[k] * carry[k] + bs[k];
      const double* c = p.cv.data() + t * hs;
      for (std::size_t d = d0; d < d1; ++d) {
        double acc = 0.0;
        for (std::size_t h = 0; h < hs; ++h) acc += c[h] * bs[(d - d0) * hs + h];
        out.y.values[t * dch + d] = acc;
      }
    }
    std::copy_n(b.data() + (n - 1) * width, width, carry.data());
  }
  std::copy(carry.begin(), carry.end(), out.h_final.h.begin() + static_cast<std::ptrdiff_t>(d0 * hs));
}

}  // namespace

SelectiveScanWeights SelectiveScanWeights::zeros(std::size_t channels, std::size_t state_dim) {
  return {channels,
          state_dim,
          std::vector<double>(channels * state_dim, 0.0),
          AffineMap::zeros(channels, channels),
          AffineMap::zeros(channels, state_dim),
          AffineMap::zeros(channels, state_dim)};
}

SelectiveScanWeights SelectiveScanWeights::random(Rng& rng, std::size_t channels,
                                                  std::size_t state_dim, double scale) {
  SelectiveScanWeights w;
  w.channels = channels;
  w.state_dim = state_dim;
  w.a_log.resize(channels * state_dim);
  for (auto& v : w.a_log) v = rng.uniform(std::log(0.5), std::log(1.5));
  w.w_delta = random_affine(rng, channels, channels, scale);
  w.w_b = random_affine(rng, channels, state_dim, scale);
  w.w_c = random_affine(rng, channels, state_dim, scale);
  return w;
}

void SelectiveScanWeights::validate() const {
  if (channels == 0 || state_dim == 0) throw ShapeError("SelectiveScanWeights: empty dimensions");
  if (a_log.size() != channels * state_dim) throw ShapeError("SelectiveScanWeights.a_log size");
  if (!all_finite(a_log)) throw NumericError("SelectiveScanWeights.a_log non-finite");
  check_map(w_delta, channels, channels, "w_delta");
  check_map(w_b, channels, state_dim, "w_b");
  check_map(w_c, channels, state_dim, "w_c");
}

double SelectiveScanWeights::decay(std::size_t d, std::size_t h) const {
  return -std::exp(a_log[d * state_dim + h]);
}

double softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

SelectiveParams selective_params(std::span<const double> x_t, const SelectiveScanWeights& weights) {
  weights.validate();
  if (x_t.size() != weights.channels) throw ShapeError("selective_params: input width mismatch");
  if (!all_finite(x_t)) throw NumericError("selective_params: non-finite input");
  const std::size_t dch = weights.channels, hs = weights.state_dim;
  SelectiveParams p;
  p.delta = affine_apply(weights.w_delta, x_t);
  for (auto& v : p.delta) v = softplus(v);
  const auto bv = affine_apply(weights.w_b, x_t);
  p.c = affine_apply(weights.w_c, x_t);
  p.a_bar.resize(dch * hs);
  p.b_bar.resize(dch * hs);
  for (std::size_t d = 0; d < dch; ++d) {
    for (std::size_t h = 0; h < hs; ++h) {
      p.a_bar[d * hs + h] = std::exp(p.delta[d] * weights.decay(d, h));
      p.b_bar[d * hs + h] = p.delta[d] * bv[h];
    }
  }
  return p;
}

std::vector<double> ssm_step(ScanState& state, std::span<const double> x_t,
                             const SelectiveParams& params) {
  const std::size_t dch = state.channels, hs = state.state_dim;
  if (x_t.size() != dch || params.a_bar.size() != dch * hs || params.b_bar.size() != dch * hs ||
      params.c.size() != hs || state.h.size() != dch * hs) {
    throw ShapeError("ssm_step: shape mismatch");
  }
  std::vector<double> y(dch);
  for (std::size_t d = 0; d < dch; ++d) {
    double acc = 0.0;
    for (std::size_t h = 0; h < hs; ++h) {
      const std::size_t k = d * hs + h;
      state.h[k] = params.a_bar[k] * state.h[k] + params.b_bar[k] * x_t[d];
      acc += params.c[h] * state.h[k];
    }
    y[d] = acc;
  }
  return y;
}

std::vector<double> ssm_step(ScanState& state, std::span<const double> x_t,
                             const SelectiveScanWeights& weights) {
  if (state.channels != weights.channels || state.state_dim != weights.state_dim) {
    throw ShapeError("ssm_step: state shape does not match weights");
  }
  return ssm_step(state, x_t, selective_params(x_t, weights));
}

ScanResult scan_sequential(const Sequence& x, const SelectiveScanWeights& weights,
                           const ScanState& h0, ScanDirection direction) {
  check_inputs(x, weights, h0);
  const std::size_t len = x.length, dch = weights.channels, hs = weights.state_dim;
  const auto p = project_all(x, weights);
  ScanResult out{Sequence(len, dch), h0};
  auto& state = out.h_final.h;
  for (std::size_t s = 0; s < len; ++s) {
    const std::size_t t = position(s, len, direction);
    const double* c = p.cv.data() + t * hs;
    for (std::size_t d = 0; d < dch; ++d) {
      const double delta = p.delta[t * dch + d];
      const double xd = x.values[t * dch + d];
      double acc = 0.0;
      for (std::size_t h = 0; h < hs; ++h) {
        const std::size_t k = d * hs + h;
        const double a_bar = std::exp(delta * weights.decay(d, h));
        state[k] = a_bar * state[k] + (delta * p.bv[t * hs + h]) * xd;
        acc += c[h] * state[k];
      }
      out.y.values[t * dch + d] = acc;
    }
  }
  return out;
}

ScanResult scan_parallel(const Sequence& x, const SelectiveScanWeights& weights,
                         const ScanState& h0, ScanDirection direction,
                         const ParallelScanOptions& options) {
  check_inputs(x, weights, h0);
  const std::size_t dch = weights.channels;
  const auto p = project_all(x, weights);
  ScanResult out{Sequence(x.length, dch), ScanState(dch, weights.state_dim)};

  const std::size_t block = std::max<std::size_t>(1, options.channel_block);
  const std::size_t chunk = std::max<std::size_t>(1, options.time_chunk);
  const std::size_t blocks = (dch + block - 1) / block;
  auto run_blocks = [&](std::size_t first, std::size_t stride) {
    for (std::size_t i = first; i < blocks; i += stride) {
      scan_channel_block(x, weights, h0, direction, p, i * block, std::min(dch, (i + 1) * block),
                         chunk, out);
    }
  };
  const std::size_t workers = std::min<std::size_t>(std::max(1U, options.workers), blocks);
  if (workers <= 1) {
    run_blocks(0, 1);
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    for (std::size_t wkr = 1; wkr < workers; ++wkr) pool.emplace_back(run_blocks, wkr, workers);
    run_blocks(0, workers);
  }
  return out;
}

ScanGrad scan_backward(const Sequence& x, const SelectiveScanWeights& weights,
                       const ScanState& h0, const Sequence& grad_y, ScanDirection direction) {
  check_inputs(x, weights, h0);
  if (grad_y.length != x.length || grad_y.width != x.width ||
      grad_y.values.size() != x.values.size()) {
    throw ShapeError("scan_backward: grad_y shape does not match the output");
  }
  const std::size_t len = x.length, dch = weights.channels, hs = weights.state_dim;
  const std::size_t lanes = dch * hs;
  const auto p = project_all(x, weights);

  // Forward pass keeping every state, indexed by processing step.
  std::vector<double> states(len * lanes);
  {
    std::vector<double> h = h0.h;
    for (std::size_t s = 0; s < len; ++s) {
      const std::size_t t = position(s, len, direction);
      for (std::size_t d = 0; d < dch; ++d) {
        const double delta = p.delta[t * dch + d];
        const double xd = x.values[t * dch + d];
        for (std::size_t hh = 0; hh < hs; ++hh) {
          const std::size_t k = d * hs + hh;
          h[k] = std::exp(delta * weights.decay(d, hh)) * h[k] + (delta * p.bv[t * hs + hh]) * xd;
        }
      }
      std::copy(h.begin(), h.end(), states.begin() + static_cast<std::ptrdiff_t>(s * lanes));
    }
  }

  ScanGrad g{Sequence(len, dch), SelectiveScanWeights::zeros(dch, hs), ScanState(dch, hs)};
  auto& gw = g.grad_weights;
  std::vector<double> carry(lanes, 0.0);
  std::vector<double> d_delta(dch), d_bv(hs), d_cv(hs), d_z(dch);

  auto accumulate_map = [&](const AffineMap& map, AffineMap& grad, std::span<const double> dout,
                            std::span<const double> xt, std::span<double> dx) {
    for (std::size_t o = 0; o < map.out_dim; ++o) {
      const double go = dout[o];
      grad.bias[o] += go;
      for (std::size_t i = 0; i < map.in_dim; ++i) {
        grad.weight[o * map.in_dim + i] += go * xt[i];
        dx[i] += map.weight[o * map.in_dim + i] * go;
      }
    }
  };

  for (std::size_t s = len; s-- > 0;) {
    const std::size_t t = position(s, len, direction);
    const auto xt = x.row(t);
    const auto gy = grad_y.row(t);
    auto dx = g.grad_x.row(t);
    const double* h_cur = states.data() + s * lanes;
    const double* h_prev = s > 0 ? states.data() + (s - 1) * lanes : h0.h.data();
    const double* bv = p.bv.data() + t * hs;
    const double* cv = p.cv.data() + t * hs;

    std::fill(d_delta.begin(), d_delta.end(), 0.0);
    std::fill(d_bv.begin(), d_bv.end(), 0.0);
    std::fill(d_cv.begin(), d_cv.end(), 0.0);
    for (std::size_t d = 0; d < dch; ++d) {
      const double delta = p.delta[t * dch + d];
      const double xd = xt[d];
      for (std::size_t hh = 0; hh < hs; ++hh) {
        const std::size_t k = d * hs + hh;
        const double decay = weights.decay(d, hh);
        const double a_bar = std::exp(delta * decay);
        d_cv[hh] += gy[d] * h_cur[k];
        const double dh = carry[k] + gy[d] * cv[hh];
        const double d_abar = dh * h_prev[k];
        d_delta[d] += d_abar * a_bar * decay + dh * bv[hh] * xd;
        // dA/da_log = A since A = -exp(a_log)
        gw.a_log[k] += d_abar * a_bar * delta * decay;
        d_bv[hh] += dh * delta * xd;
        dx[d] += dh * delta * bv[hh];
        carry[k] = dh * a_bar;
      }
    }
    for (std::size_t d = 0; d < dch; ++d) d_z[d] = d_delta[d] * sigmoid(p.z[t * dch + d]);
    accumulate_map(weights.w_delta, gw.w_delta, d_z, xt, dx);
    accumulate_map(weights.w_b, gw.w_b, d_bv, xt, dx);
    accumulate_map(weights.w_c, gw.w_c, d_cv, xt, dx);
  }
  g.grad_h0.h = carry;
  return g;
}

}  // namespace storm

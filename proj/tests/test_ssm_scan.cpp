#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <cmath>

#include "storm/errors.hpp"
#include "storm/pipeline.hpp"
#include "storm/ssm_scan.hpp"
#include "storm/tolerances.hpp"

namespace storm {
namespace {

Sequence random_sequence(Rng& rng, std::size_t len, std::size_t width, double scale = 1.0) {
  return {len, width, rng_fill(rng, len * width, scale)};
}

ScanState random_state(Rng& rng, std::size_t d, std::size_t h) {
  ScanState s(d, h);
  s.h = rng_fill(rng, d * h, 1.0);
  return s;
}

Sequence reversed(const Sequence& x) {
  Sequence r(x.length, x.width);
  for (std::size_t t = 0; t < x.length; ++t) {
    std::copy(x.row(t).begin(), x.row(t).end(), r.row(x.length - 1 - t).begin());
  }
  return r;
}

TEST(SelectiveParams, VanishingStepGivesUnitTransition) {
  auto w = SelectiveScanWeights::zeros(3, 2);
  Rng rng(1);
  w.a_log = rng_fill(rng, 6, 1.0);
  std::fill(w.w_delta.bias.begin(), w.w_delta.bias.end(), -50.0);
  const auto p = selective_params(std::vector<double>{0.3, -0.2, 0.9}, w);
  for (double a : p.a_bar) EXPECT_NEAR(a, 1.0, 1e-15);
  for (double d : p.delta) EXPECT_GT(d, 0.0);
}

TEST(SelectiveParams, HalfDecayAtLogTwo) {
  // a_log = 0 -> A = -1; zero w_delta -> delta = softplus(0) = ln 2.
  const auto w = SelectiveScanWeights::zeros(1, 1);
  const auto p = selective_params(std::vector<double>{0.7}, w);
  EXPECT_NEAR(p.delta[0], std::log(2.0), 1e-15);
  EXPECT_NEAR(p.a_bar[0], 0.5, 1e-15);
}

TEST(SelectiveParams, ZeroInputProjectionGivesZeroB) {
  Rng rng(2);
  auto w = SelectiveScanWeights::random(rng, 4, 3);
  w.w_b = AffineMap::zeros(4, 3);
  const auto p = selective_params(rng_fill(rng, 4, 1.0), w);
  for (double b : p.b_bar) EXPECT_EQ(b, 0.0);
}

TEST(SelectiveParams, NonFiniteInput) {
  const auto w = SelectiveScanWeights::zeros(2, 2);
  EXPECT_THROW(selective_params(std::vector<double>{1.0, INFINITY}, w), NumericError);
}

TEST(SsmStep, MemorylessWhenTransitionIsZero) {
  ScanState s(2, 2);
  s.h = {9, 9, 9, 9};
  SelectiveParams p{{1, 1}, {0, 0, 0, 0}, {1, 2, 3, 4}, {1, 1}};
  ssm_step(s, std::vector<double>{2, 5}, p);
  EXPECT_EQ(s.h, (std::vector<double>{2, 4, 15, 20}));
}

TEST(SsmStep, HandRecurrence) {
  ScanState s(1, 1);
  SelectiveParams p{{1}, {0.5}, {2}, {1}};
  auto y = ssm_step(s, std::vector<double>{3}, p);
  EXPECT_EQ(s.h[0], 6.0);
  EXPECT_EQ(y[0], 6.0);
  y = ssm_step(s, std::vector<double>{1}, p);
  EXPECT_EQ(s.h[0], 5.0);
  EXPECT_EQ(y[0], 5.0);
}

TEST(SsmStep, ZeroReadout) {
  Rng rng(3);
  auto w = SelectiveScanWeights::random(rng, 3, 2);
  w.w_c = AffineMap::zeros(3, 2);
  const auto x = random_sequence(rng, 9, 3);
  const auto r = scan_sequential(x, w, ScanState(3, 2));
  for (double v : r.y.values) EXPECT_EQ(v, 0.0);
}

TEST(ScanSequential, SingleStepMatchesSsmStep) {
  Rng rng(4);
  const auto w = SelectiveScanWeights::random(rng, 3, 4, 0.5);
  const auto x = random_sequence(rng, 1, 3);
  const auto h0 = random_state(rng, 3, 4);
  ScanState s = h0;
  const auto y = ssm_step(s, x.row(0), w);
  for (auto dir : {ScanDirection::forward, ScanDirection::reverse}) {
    const auto r = scan_sequential(x, w, h0, dir);
    EXPECT_EQ(r.y.values, y);
    EXPECT_EQ(r.h_final, s);
  }
}

TEST(ScanSequential, ZeroDynamics) {
  Rng rng(5);
  const auto w = SelectiveScanWeights::random(rng, 2, 3);
  const auto r = scan_sequential(Sequence(12, 2), w, ScanState(2, 3), ScanDirection::reverse);
  for (double v : r.y.values) EXPECT_EQ(v, 0.0);
}

TEST(ScanSequential, ReverseIsForwardOnReversedIndices) {
  Rng rng(6);
  const auto w = SelectiveScanWeights::random(rng, 3, 2, 0.5);
  const auto x = random_sequence(rng, 7, 3);
  const auto h0 = random_state(rng, 3, 2);
  const auto fwd = scan_sequential(x, w, h0, ScanDirection::forward);
  const auto rev = scan_sequential(reversed(x), w, h0, ScanDirection::reverse);
  EXPECT_EQ(reversed(rev.y), fwd.y);
  EXPECT_EQ(rev.h_final, fwd.h_final);
}

TEST(ScanSequential, EmptySequenceRejected) {
  const auto w = SelectiveScanWeights::zeros(2, 2);
  EXPECT_THROW(scan_sequential(Sequence(0, 2), w, ScanState(2, 2)), ShapeError);
  EXPECT_THROW(scan_sequential(Sequence(3, 3), w, ScanState(2, 2)), ShapeError);
  EXPECT_THROW(scan_sequential(Sequence(3, 2), w, ScanState(2, 1)), ShapeError);
}

TEST(ScanParallel, SingleStepMatchesSsmStep) {
  Rng rng(7);
  const auto w = SelectiveScanWeights::random(rng, 2, 3, 0.5);
  const auto x = random_sequence(rng, 1, 2);
  const auto h0 = random_state(rng, 2, 3);
  ScanState s = h0;
  const auto y = ssm_step(s, x.row(0), w);
  const auto r = scan_parallel(x, w, h0);
  EXPECT_EQ(r.y.values, y);
  EXPECT_EQ(r.h_final, s);
}

TEST(ScanParallel, MatchesSequentialOnOddLength) {
  Rng rng(8);
  const auto w = SelectiveScanWeights::random(rng, 3, 4, 0.5);
  const auto x = random_sequence(rng, 257, 3);
  const auto h0 = random_state(rng, 3, 4);
  for (auto dir : {ScanDirection::forward, ScanDirection::reverse}) {
    const auto seq = scan_sequential(x, w, h0, dir);
    const auto par = scan_parallel(x, w, h0, dir);
    EXPECT_LE(max_abs_diff(seq.y.values, par.y.values), 1e-12 * max_abs(seq.y.values));
    EXPECT_LE(max_abs_diff(seq.h_final.h, par.h_final.h), 1e-12 * (1 + max_abs(seq.h_final.h)));
  }
}

TEST(ScanParallel, EquivalencePropertyAcrossLengths) {
  Rng rng(9);
  for (std::size_t len : {1, 2, 3, 17, 256, 257, 1024}) {
    for (int trial = 0; trial < 3; ++trial) {
      const std::size_t d = 1 + rng.next_u64() % 4, h = 1 + rng.next_u64() % 4;
      const auto w = SelectiveScanWeights::random(rng, d, h, 0.5);
      const auto x = random_sequence(rng, len, d);
      const auto h0 = random_state(rng, d, h);
      const auto seq = scan_sequential(x, w, h0);
      const auto par = scan_parallel(x, w, h0);
      EXPECT_LE(max_abs_diff(seq.y.values, par.y.values),
                tol::kScanEquivalence * (1 + max_abs(seq.y.values)))
          << "len " << len;
    }
  }
}

TEST(ScanParallel, Zeros) {
  Rng rng(10);
  const auto w = SelectiveScanWeights::random(rng, 2, 2);
  const auto r = scan_parallel(Sequence(33, 2), w, ScanState(2, 2));
  for (double v : r.y.values) EXPECT_EQ(v, 0.0);
}

TEST(ScanParallel, WorkerCountDoesNotChangeBits) {
  Rng rng(11);
  const auto w = SelectiveScanWeights::random(rng, 7, 3, 0.5);
  const auto x = random_sequence(rng, 300, 7);
  const auto h0 = random_state(rng, 7, 3);
  const auto one = scan_parallel(x, w, h0, ScanDirection::reverse, {1, 2});
  for (unsigned workers : {2U, 3U, 8U}) {
    const auto many = scan_parallel(x, w, h0, ScanDirection::reverse, {workers, 2});
    EXPECT_EQ(one.y, many.y);
    EXPECT_EQ(one.h_final, many.h_final);
  }
}

TEST(ScanParallel, ChunkLengthOnlyAffectsRounding) {
  Rng rng(18);
  const auto w = SelectiveScanWeights::random(rng, 5, 3, 0.5);
  const auto x = random_sequence(rng, 301, 5);
  const auto h0 = random_state(rng, 5, 3);
  for (auto dir : {ScanDirection::forward, ScanDirection::reverse}) {
    const auto seq = scan_sequential(x, w, h0, dir);
    for (std::size_t chunk : {1, 2, 7, 64, 300, 301, 4096}) {
      const auto par = scan_parallel(x, w, h0, dir, {1, 8, chunk});
      EXPECT_LE(max_abs_diff(seq.y.values, par.y.values),
                tol::kScanEquivalence * (1 + max_abs(seq.y.values)))
          << "chunk " << chunk;
      EXPECT_LE(max_abs_diff(seq.h_final.h, par.h_final.h),
                tol::kScanEquivalence * (1 + max_abs(seq.h_final.h)));
    }
  }
}

TEST(ScanParallel, ForwardCausalityIsBitwise) {
  Rng rng(12);
  const auto w = SelectiveScanWeights::random(rng, 3, 2, 0.5);
  const auto x = random_sequence(rng, 100, 3);
  const auto base = scan_parallel(x, w, ScanState(3, 2));
  for (std::size_t cut : {0, 1, 31, 64, 98}) {
    Sequence changed = x;
    for (std::size_t k = (cut + 1) * 3; k < changed.values.size(); ++k) changed.values[k] *= -3.0;
    const auto again = scan_parallel(changed, w, ScanState(3, 2));
    for (std::size_t k = 0; k < (cut + 1) * 3; ++k) ASSERT_EQ(again.y.values[k], base.y.values[k]);
  }
}

TEST(ScanSequential, StateStaysWithinGeometricBound) {
  Rng rng(13);
  const std::size_t d = 3, h = 4, len = 4096;
  const auto w = SelectiveScanWeights::random(rng, d, h, 0.5);
  const auto x = random_sequence(rng, len, d, 1.0);
  const auto h0 = random_state(rng, d, h);
  double b_max = 0.0, a_max = 0.0;
  for (std::size_t t = 0; t < len; ++t) {
    const auto p = selective_params(x.row(t), w);
    for (std::size_t k = 0; k < d * h; ++k) {
      a_max = std::max(a_max, p.a_bar[k]);
      b_max = std::max(b_max, std::abs(p.b_bar[k] * x.values[t * d + k / h]));
    }
  }
  ASSERT_LT(a_max, 1.0);
  const double bound = b_max / (1.0 - a_max) + max_abs(h0.h);
  ScanState s = h0;
  for (std::size_t t = 0; t < len; ++t) {
    ssm_step(s, x.row(t), w);
    ASSERT_LE(max_abs(s.h), bound);
  }
}

TEST(ScanBackward, ZeroCotangent) {
  Rng rng(14);
  const auto w = SelectiveScanWeights::random(rng, 3, 2, 0.5);
  const auto x = random_sequence(rng, 6, 3);
  const auto g = scan_backward(x, w, random_state(rng, 3, 2), Sequence(6, 3));
  for (double v : g.grad_x.values) EXPECT_EQ(v, 0.0);
  for_each_parameter(g.grad_weights, [](const double& v) { EXPECT_EQ(v, 0.0); });
  for (double v : g.grad_h0.h) EXPECT_EQ(v, 0.0);
}

TEST(ScanBackward, TimeInvariantMatchesConvolutionTranspose) {
  // With zero projection weights the scan is a per-channel causal convolution
  // y_t[d] = sum_{tau<=t} K_d[t - tau] x_tau[d] with
  // K_d[k] = sum_h C_h * a_dh^k * delta_d * B_h, so dL/dx_tau[d] = sum_{t>=tau} g_t[d] K_d[t-tau].
  Rng rng(15);
  const std::size_t d = 3, h = 4, len = 9;
  auto w = SelectiveScanWeights::random(rng, d, h, 0.5);
  w.w_delta.weight.assign(d * d, 0.0);
  w.w_b.weight.assign(d * h, 0.0);
  w.w_c.weight.assign(d * h, 0.0);
  const auto x = random_sequence(rng, len, d);
  const auto gy = random_sequence(rng, len, d);
  const auto g = scan_backward(x, w, ScanState(d, h), gy);

  for (std::size_t c = 0; c < d; ++c) {
    const double delta = softplus(w.w_delta.bias[c]);
    std::vector<double> kernel(len, 0.0);
    for (std::size_t k = 0; k < len; ++k) {
      for (std::size_t s = 0; s < h; ++s) {
        const double a = std::exp(delta * -std::exp(w.a_log[c * h + s]));
        kernel[k] += w.w_c.bias[s] * std::pow(a, static_cast<double>(k)) * delta * w.w_b.bias[s];
      }
    }
    for (std::size_t tau = 0; tau < len; ++tau) {
      double expected = 0.0;
      for (std::size_t t = tau; t < len; ++t) expected += gy.values[t * d + c] * kernel[t - tau];
      EXPECT_NEAR(g.grad_x.values[tau * d + c], expected, 1e-13);
    }
  }
}

double pairing(const Sequence& a, const Sequence& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) acc += a.values[i] * b.values[i];
  return acc;
}

TEST(ScanBackward, MatchesCentralDifferences) {
  Rng rng(16);
  const std::size_t d = 2, h = 3, len = 5;
  for (auto dir : {ScanDirection::forward, ScanDirection::reverse}) {
    auto w = SelectiveScanWeights::random(rng, d, h, 0.5);
    auto x = random_sequence(rng, len, d);
    auto h0 = random_state(rng, d, h);
    const auto gy = random_sequence(rng, len, d);
    const auto g = scan_backward(x, w, h0, gy, dir);
    const double step = 1e-5;
    auto check = [&](double& slot, double analytic) {
      const double saved = slot;
      slot = saved + step;
      const double up = pairing(gy, scan_sequential(x, w, h0, dir).y);
      slot = saved - step;
      const double down = pairing(gy, scan_sequential(x, w, h0, dir).y);
      slot = saved;
      const double numeric = (up - down) / (2 * step);
      EXPECT_LE(std::abs(numeric - analytic) /
                    std::max({std::abs(numeric), std::abs(analytic), tol::kGradcheckDenomFloor}),
                1e-5);
    };
    for (std::size_t i = 0; i < x.values.size(); ++i) check(x.values[i], g.grad_x.values[i]);
    std::vector<double> exact;
    for_each_parameter(g.grad_weights, [&](const double& v) { exact.push_back(v); });
    std::size_t i = 0;
    for_each_parameter(w, [&](double& v) { check(v, exact[i++]); });
    for (std::size_t k = 0; k < h0.h.size(); ++k) check(h0.h[k], g.grad_h0.h[k]);
  }
}

TEST(ScanBackward, ShapeMismatch) {
  const auto w = SelectiveScanWeights::zeros(2, 2);
  EXPECT_THROW(scan_backward(Sequence(4, 2), w, ScanState(2, 2), Sequence(3, 2)), ShapeError);
}

TEST(ScanSequential, LinearCostInLength) {
  Rng rng(17);
  const std::size_t d = 8, h = 8;
  const auto w = SelectiveScanWeights::random(rng, d, h, 0.5);
  const auto x = random_sequence(rng, 1 << 14, d);
  std::vector<std::pair<double, double>> points;
  for (std::size_t len = 1 << 10; len <= (1 << 14); len *= 2) {
    const Sequence prefix(len, d, std::vector<double>(x.values.begin(), x.values.begin() + len * d));
    std::vector<double> samples;
    for (int rep = 0; rep < 5; ++rep) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto r = scan_sequential(prefix, w, ScanState(d, h));
      const auto t1 = std::chrono::steady_clock::now();
      ASSERT_EQ(r.y.length, len);
      samples.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    std::sort(samples.begin(), samples.end());
    points.emplace_back(static_cast<double>(len), samples[2]);
  }
  const auto fit = fit_loglog(points);
  EXPECT_GE(fit.loglog_slope, tol::kLinearSlopeLo);
  EXPECT_LE(fit.loglog_slope, tol::kLinearSlopeHi);
}

}  // namespace
}  // namespace storm

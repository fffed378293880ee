#include "storm/verify.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "storm/tolerances.hpp"

namespace storm::verify {

namespace {

std::size_t draw_count(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.next_u64() % (hi - lo + 1));
}

Sequence random_sequence(Rng& rng, std::size_t len, std::size_t width, double scale) {
  return {len, width, rng_fill(rng, len * width, scale)};
}

double pairing(const Sequence& a, const Sequence& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) acc += a.values[i] * b.values[i];
  return acc;
}

}  // namespace

ScanCheckResult scan_check(std::uint64_t seed, std::size_t instances) {
  static constexpr std::array<std::size_t, 7> kLengths{1, 2, 3, 17, 256, 257, 1024};
  ScanCheckResult result;
  Rng rng(seed);
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t len = kLengths[i % kLengths.size()];
    const std::size_t d = draw_count(rng, 1, 4), h = draw_count(rng, 1, 4);
    const auto direction = i % 2 == 0 ? ScanDirection::forward : ScanDirection::reverse;
    const auto weights = SelectiveScanWeights::random(rng, d, h, 0.5);
    const auto x = random_sequence(rng, len, d, 1.0);
    ScanState h0(d, h);
    h0.h = rng_fill(rng, d * h, 1.0);

    const auto seq = scan_sequential(x, weights, h0, direction);
    const auto par = scan_parallel(x, weights, h0, direction);
    const double scaled = max_abs_diff(seq.y.values, par.y.values) / (1.0 + max_abs(seq.y.values));
    const double state = max_abs_diff(seq.h_final.h, par.h_final.h) / (1.0 + max_abs(seq.h_final.h));
    const double err = std::max(scaled, state);
    if (err > result.worst_scaled_error || result.instances == 0) {
      result.worst_scaled_error = err;
      result.worst_length = len;
    }

    // Perturb the tail and require the forward prefix to be bitwise unchanged.
    if (direction == ScanDirection::forward && len >= 2) {
      const std::size_t cut = len / 2;
      Sequence changed = x;
      for (std::size_t k = (cut + 1) * d; k < changed.values.size(); ++k) changed.values[k] += 0.25;
      const auto again = scan_parallel(changed, weights, h0, direction);
      const auto again_seq = scan_sequential(changed, weights, h0, direction);
      for (std::size_t k = 0; k < (cut + 1) * d; ++k) {
        if (again.y.values[k] != par.y.values[k] || again_seq.y.values[k] != seq.y.values[k]) {
          result.causal = false;
        }
      }
    }
    ++result.instances;
  }
  result.passed = result.causal && result.worst_scaled_error <= tol::kScanEquivalence;
  return result;
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), tol::kGradcheckDenomFloor});
  return std::abs(analytic - numeric) / denom;
}

void gradcheck_instance(const Sequence& x, const SelectiveScanWeights& weights, const ScanState& h0,
                        const Sequence& grad_y, ScanDirection direction,
                        std::vector<GradcheckEntry>& out) {
  const auto analytic = scan_backward(x, weights, h0, grad_y, direction);
  const double step = tol::kGradcheckStep;

  Sequence xv = x;
  SelectiveScanWeights wv = weights;
  ScanState hv = h0;
  auto loss = [&] { return pairing(grad_y, scan_sequential(xv, wv, hv, direction).y); };
  auto probe = [&](double& slot, double exact, const std::string& name) {
    const double saved = slot;
    slot = saved + step;
    const double up = loss();
    slot = saved - step;
    const double down = loss();
    slot = saved;
    const double numeric = (up - down) / (2.0 * step);
    out.push_back({name, exact, numeric, relative_error(exact, numeric)});
  };

  for (std::size_t i = 0; i < xv.values.size(); ++i) {
    probe(xv.values[i], analytic.grad_x.values[i], "x[" + std::to_string(i) + "]");
  }
  std::vector<double*> slots;
  for_each_parameter(wv, [&](double& v) { slots.push_back(&v); });
  std::vector<double> exact;
  for_each_parameter(analytic.grad_weights, [&](const double& v) { exact.push_back(v); });
  for (std::size_t i = 0; i < slots.size(); ++i) {
    probe(*slots[i], exact[i], "weight[" + std::to_string(i) + "]");
  }
  for (std::size_t i = 0; i < hv.h.size(); ++i) {
    probe(hv.h[i], analytic.grad_h0.h[i], "h0[" + std::to_string(i) + "]");
  }
}

GradcheckResult gradcheck(std::uint64_t seed, std::size_t instances) {
  GradcheckResult result;
  Rng rng(seed);
  std::vector<GradcheckEntry> entries;
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t len = draw_count(rng, 1, 8);
    const std::size_t d = draw_count(rng, 1, 4), h = draw_count(rng, 1, 4);
    const auto direction = i % 2 == 0 ? ScanDirection::forward : ScanDirection::reverse;
    const auto weights = SelectiveScanWeights::random(rng, d, h, 0.5);
    const auto x = random_sequence(rng, len, d, 1.0);
    ScanState h0(d, h);
    h0.h = rng_fill(rng, d * h, 0.5);
    const auto grad_y = random_sequence(rng, len, d, 1.0);
    gradcheck_instance(x, weights, h0, grad_y, direction, entries);
    ++result.instances;
  }
  result.entries = entries.size();
  for (const auto& e : entries) {
    if (e.rel_error >= result.worst_rel_error) {
      result.worst_rel_error = e.rel_error;
      result.worst = e;
    }
  }
  result.passed = result.worst_rel_error <= tol::kGradcheckRelError;
  return result;
}

}  // namespace storm::verify

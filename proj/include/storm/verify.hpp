#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "storm/ssm_scan.hpp"

namespace storm::verify {

struct ScanCheckResult {
  std::size_t instances = 0;
  double worst_scaled_error = 0.0;  // max |y_par - y_seq| / (1 + max|y|) over instances
  std::size_t worst_length = 0;
  bool causal = true;  // forward outputs bitwise unaffected by later inputs
  bool passed = false;
};

/// Sequence lengths cycle through {1, 2, 3, 17, 256, 257, 1024}; channels and
/// state sizes are drawn in [1, 4]; direction alternates.
ScanCheckResult scan_check(std::uint64_t seed, std::size_t instances = 50);

/// Central-difference derivative of L = sum <grad_y, y> with respect to one
/// scalar, evaluated through scan_sequential only.
struct GradcheckEntry {
  std::string name;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradcheckResult {
  std::size_t instances = 0;
  std::size_t entries = 0;
  double worst_rel_error = 0.0;
  GradcheckEntry worst;
  bool passed = false;
};

double relative_error(double analytic, double numeric);

/// Compares every entry of scan_backward (x, all weight fields, h0) against
/// central differences for one instance; appends to `out`.
void gradcheck_instance(const Sequence& x, const SelectiveScanWeights& weights, const ScanState& h0,
                        const Sequence& grad_y, ScanDirection direction,
                        std::vector<GradcheckEntry>& out);

/// Random instances with length <= 8, channels <= 4, state_dim <= 4.
GradcheckResult gradcheck(std::uint64_t seed, std::size_t instances = 20);

}  // namespace storm::verify

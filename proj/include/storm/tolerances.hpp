#pragma once

// Numeric thresholds shared by the verification suites, the CLI and the tests.

namespace storm::tol {

// |y_parallel - y_sequential| <= kScanEquivalence * (1 + max|y|)
inline constexpr double kScanEquivalence = 1e-12;

// central-difference gradient check
inline constexpr double kGradcheckStep = 1e-5;
inline constexpr double kGradcheckRelError = 1e-5;
// Denominator floor for the relative error; below it the comparison is absolute.
inline constexpr double kGradcheckDenomFloor = 1e-3;

inline constexpr double kStreamingEquivalence = 1e-12;
inline constexpr double kPoolingConservation = 1e-12;
inline constexpr double kLinearity = 1e-12;

inline constexpr double kLayerNormMean = 1e-12;
inline constexpr double kLayerNormVariance = 1e-9;

// log-log slope windows for timing fits
inline constexpr double kLinearSlopeLo = 0.8;
inline constexpr double kLinearSlopeHi = 1.2;
inline constexpr double kQuadraticSlopeLo = 1.7;
inline constexpr double kQuadraticSlopeHi = 2.3;
inline constexpr double kFlatSlope = 0.2;

// Coefficient of variation above which a timing point is flagged noisy.
inline constexpr double kNoisyCv = 0.25;

}  // namespace storm::tol

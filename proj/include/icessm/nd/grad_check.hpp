#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "icessm/nd/tape.hpp"

namespace icessm::nd {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  std::size_t probes = 0;
  std::size_t skipped = 0;  // probes dropped as kinks
};

struct GradCheckOptions {
  double step = 1e-3;
  /// Coordinates probed per input; 0 probes every coordinate.
  std::size_t max_probes = 0;
  std::uint64_t seed = 0;
  /// When positive, a probe whose one-sided differences disagree by more than
  /// this fraction of the relative-error denominator straddles a kink (e.g. a
  /// LeakyReLU crossing zero) and is skipped instead of compared.
  double kink_tolerance = 0.0;
};

/// Scalar-valued function of several tape inputs.
using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Compares tape gradients with central differences. The relative error of a
/// coordinate is |analytic - numeric| / max(|analytic|, |numeric|, 0.1 * g_max, 1e-6)
/// where g_max is the largest numeric gradient magnitude over all inputs, so
/// float32 rounding in tiny gradients is judged against the overall scale.
/// Throws NumericalError when either gradient contains NaN.
GradCheckReport grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs,
                           const GradCheckOptions& options = {});

}  // namespace icessm::nd

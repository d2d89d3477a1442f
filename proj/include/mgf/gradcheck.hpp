#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mgf/autograd.hpp"

namespace mgf {

struct GradCheckOptions {
  double eps = 1e-3;
  /// Coordinates probed per parameter; 0 probes all of them.
  std::size_t samples_per_param = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
};

/// Compares the tape gradient of `fn` (which must rebuild its scalar loss from the current
/// parameter values on every call) against central differences
/// (f(theta + eps) - f(theta - eps)) / 2 eps. The error per coordinate is
/// |a - n| / max(|a|, |n|, 1e-8). A non-deterministic fn gives meaningless results.
GradCheckResult grad_check(const std::function<Var()>& fn, std::vector<Var> params, const GradCheckOptions& opt = {});

}  // namespace mgf

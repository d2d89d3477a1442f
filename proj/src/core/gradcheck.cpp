#include "mgf/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mgf/rng.hpp"

namespace mgf {

GradCheckResult grad_check(const std::function<Var()>& fn, std::vector<Var> params, const GradCheckOptions& opt) {
  if (!(opt.eps >= 1e-6 && opt.eps <= 1e-2)) throw std::invalid_argument("grad_check: eps must lie in [1e-6, 1e-2]");
  for (Var& p : params) p.zero_grad();
  backward(fn());
  std::vector<Tensor> analytic;
  for (const Var& p : params) analytic.push_back(p.has_grad() ? p.grad() : Tensor::like(p.value()));

  Rng rng(opt.seed);
  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Var& p = params[pi];
    std::vector<std::size_t> coords(p.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opt.samples_per_param > 0 && opt.samples_per_param < coords.size()) {
      for (std::size_t i = 0; i < opt.samples_per_param; ++i)
        std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
      coords.resize(opt.samples_per_param);
    }
    for (std::size_t idx : coords) {
      double& slot = p.mutable_value()[idx];
      const double orig = slot;
      double plus, minus;
      {
        NoGradGuard guard;
        slot = orig + opt.eps;
        plus = fn().value().item();
        slot = orig - opt.eps;
        minus = fn().value().item();
      }
      slot = orig;
      const double numeric = (plus - minus) / (2.0 * opt.eps);
      const double a = analytic[pi][idx];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      result.max_relative_error = std::max(result.max_relative_error, std::abs(a - numeric) / denom);
      ++result.coordinates;
    }
  }
  for (Var& p : params) p.zero_grad();
  return result;
}

}  // namespace mgf

#include "bssm/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "bssm/error.hpp"

namespace bssm {

GradCheckResult grad_check_against(const std::function<double()>& value_fn, std::vector<Var<double>> params,
                                   const std::vector<Tensor<double>>& analytic, const GradCheckOptions& options) {
  if (analytic.size() != params.size()) throw ShapeError("grad_check: one analytic gradient per parameter");
  GradCheckResult result;
  std::mt19937_64 rng(options.seed);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& values = params[p].mutable_value().values();
    std::vector<Index> coords(static_cast<std::size_t>(values.size()));
    std::iota(coords.begin(), coords.end(), Index{0});
    if (options.max_coords_per_tensor > 0 && values.size() > options.max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(options.max_coords_per_tensor));
      std::sort(coords.begin(), coords.end());
    }
    for (Index i : coords) {
      const double saved = values[i];
      values[i] = saved + options.step;
      const double up = value_fn();
      values[i] = saved - options.step;
      const double down = value_fn();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double ad = analytic[p].numel() == 0 ? 0.0 : analytic[p][i];
      const double denom = std::max({std::abs(ad), std::abs(numeric), 1e-8});
      const double rel = std::abs(ad - numeric) / denom;
      ++result.coords_checked;
      if (rel > result.max_rel_error || result.coords_checked == 1) {
        result.max_rel_error = std::max(result.max_rel_error, rel);
        if (rel >= result.max_rel_error) {
          result.worst_param = p;
          result.worst_coord = i;
          result.worst_analytic = ad;
          result.worst_numeric = numeric;
        }
      }
    }
  }
  return result;
}

GradCheckResult grad_check(const std::function<Var<double>()>& loss_fn, std::vector<Var<double>> params,
                           const GradCheckOptions& options) {
  for (auto& p : params) p.zero_grad();
  const Var<double> loss = loss_fn();
  backward(loss);
  std::vector<Tensor<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.push_back(p.grad());

  auto value_fn = [&] {
    NoGradGuard guard;
    return loss_fn().value().item();
  };
  return grad_check_against(value_fn, std::move(params), analytic, options);
}

}  // namespace bssm

#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "bssm/autograd.hpp"

namespace bssm {

struct GradCheckOptions {
  double step = 1e-5;
  /// Coordinates checked per tensor; 0 checks every coordinate.
  Index max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  Index worst_coord = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
};

/// Central differences of `loss_fn` against the reverse-mode gradient of
/// every tensor in `params`. Relative error per coordinate is
/// |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8). `loss_fn` must rebuild its graph
/// from the current parameter values on every call.
GradCheckResult grad_check(const std::function<Var<double>()>& loss_fn, std::vector<Var<double>> params,
                           const GradCheckOptions& options = {});

/// Same comparison with caller-supplied analytic gradients (used to verify
/// that a corrupted gradient is detected).
GradCheckResult grad_check_against(const std::function<double()>& value_fn, std::vector<Var<double>> params,
                                   const std::vector<Tensor<double>>& analytic, const GradCheckOptions& options = {});

}  // namespace bssm

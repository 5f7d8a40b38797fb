#pragma once

#include <span>

#include "json.hpp"

namespace bssm {

struct TTestResult {
  double t_statistic = 0.0;
  int degrees_of_freedom = 0;
  double p_value_two_sided = 1.0;
};

void to_json(nlohmann::json& j, const TTestResult& r);

/// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
double incomplete_beta(double a, double b, double x);

/// Two-sided Student-t tail probability P(|T| >= |t|) with `df` degrees.
double student_t_two_sided(double t, double df);

/// Paired test on d = a - b with the sample standard deviation.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

}  // namespace bssm

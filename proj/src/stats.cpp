#include "bssm/stats.hpp"

#include <cmath>
#include <limits>

#include "bssm/error.hpp"

namespace bssm {

void to_json(nlohmann::json& j, const TTestResult& r) {
  j = {{"t_statistic", r.t_statistic},
       {"degrees_of_freedom", r.degrees_of_freedom},
       {"p_value_two_sided", r.p_value_two_sided}};
}

namespace {

// Lentz's method for the continued fraction of I_x(a, b).
double beta_cf(double a, double b, double x) {
  constexpr int kMaxIter = 500;
  constexpr double kEps = 1e-15;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1, qam = a - 1;
  double c = 1, d = 1 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1) < kEps) break;
  }
  return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0 && b > 0)) throw DomainError("incomplete_beta: a and b must be positive");
  if (!(x >= 0 && x <= 1)) throw DomainError("incomplete_beta: x must lie in [0,1]");
  if (x == 0 || x == 1) return x;
  const double front =
      std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x));
  // The fraction converges fast on this side of the mean; use the symmetry otherwise.
  if (x < (a + 1) / (a + b + 2)) return front * beta_cf(a, b, x) / a;
  return 1 - front * beta_cf(b, a, 1 - x) / b;
}

double student_t_two_sided(double t, double df) {
  if (!(df > 0)) throw DomainError("student_t_two_sided: df must be positive");
  if (std::isinf(t)) return 0.0;
  return incomplete_beta(df / 2, 0.5, df / (df + t * t));
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ContractError("paired_t_test: samples differ in length");
  const std::size_t n = a.size();
  if (n < 2) throw ContractError("paired_t_test: need at least two pairs");
  double mean = 0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double ss = 0;
  for (std::size_t i = 0; i < n; ++i) ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
  const double var = ss / static_cast<double>(n - 1);
  if (!(var > 0)) throw DegenerateVarianceError("paired_t_test: differences have zero variance");
  TTestResult r;
  r.t_statistic = mean / std::sqrt(var / static_cast<double>(n));
  r.degrees_of_freedom = static_cast<int>(n - 1);
  r.p_value_two_sided = student_t_two_sided(r.t_statistic, r.degrees_of_freedom);
  return r;
}

}  // namespace bssm

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <queue>
#include <sstream>
#include <vector>

#include "hom/errors.hpp"

namespace hom {

template <typename Scalar>
struct QuadratureResult {
  Scalar value{};
  Scalar abs_error{};
  int intervals = 0;
  int evaluations = 0;
};

namespace detail {

// 15-point Kronrod extension of the 7-point Gauss rule on [-1, 1].
inline constexpr std::array<double, 8> kKronrodNodes = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.0};
inline constexpr std::array<double, 8> kKronrodWeights = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
// Gauss weights for the odd Kronrod nodes (indices 1, 3, 5, 7).
inline constexpr std::array<double, 4> kGaussWeights = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

template <typename Scalar>
struct Panel {
  Scalar a, b, value, error;
  bool operator<(const Panel& other) const { return error < other.error; }
};

template <typename Scalar, typename Func>
Panel<Scalar> gauss_kronrod_15(const Func& f, Scalar a, Scalar b) {
  const Scalar center = (a + b) / 2;
  const Scalar half = (b - a) / 2;
  const Scalar f0 = f(center);
  Scalar kronrod = static_cast<Scalar>(kKronrodWeights[7]) * f0;
  Scalar gauss = static_cast<Scalar>(kGaussWeights[3]) * f0;
  for (int i = 0; i < 7; ++i) {
    const Scalar dx = half * static_cast<Scalar>(kKronrodNodes[i]);
    const Scalar pair = f(center - dx) + f(center + dx);
    kronrod += static_cast<Scalar>(kKronrodWeights[i]) * pair;
    if (i % 2 == 1) gauss += static_cast<Scalar>(kGaussWeights[i / 2]) * pair;
  }
  kronrod *= half;
  gauss *= half;
  return {a, b, kronrod, std::abs(kronrod - gauss)};
}

}  // namespace detail

/// Globally adaptive Gauss-Kronrod (G7/K15) integration of `f` over [a, b].
///
/// The panel with the largest error estimate is bisected until the summed
/// estimate drops below `abs_tol`. `breakpoints` inside (a, b) seed the panel
/// list, which is how kinks in the integrand should be handled. Throws
/// NumericError when `max_intervals` is exhausted.
template <std::floating_point Scalar, typename Func>
QuadratureResult<Scalar> integrate_adaptive(const Func& f, Scalar a, Scalar b, Scalar abs_tol,
                                            const std::vector<Scalar>& breakpoints = {},
                                            int max_intervals = 4000) {
  if (!(abs_tol > 0)) throw DomainError("integrate_adaptive: tolerance must be positive");
  if (!(b > a)) throw DomainError("integrate_adaptive: empty interval");

  std::vector<Scalar> edges{a};
  for (Scalar p : breakpoints)
    if (p > a && p < b) edges.push_back(p);
  edges.push_back(b);
  std::sort(edges.begin(), edges.end());

  std::priority_queue<detail::Panel<Scalar>> panels;
  Scalar total = 0, error = 0;
  int evaluations = 0;
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
    auto p = detail::gauss_kronrod_15(f, edges[i], edges[i + 1]);
    evaluations += 15;
    total += p.value;
    error += p.error;
    panels.push(p);
  }

  while (!(error <= abs_tol)) {
    if (!std::isfinite(total) || !std::isfinite(error)) {
      std::ostringstream msg;
      msg << "integrate_adaptive: non-finite integrand on [" << a << ", " << b << "]";
      throw NumericError(msg.str());
    }
    if (static_cast<int>(panels.size()) >= max_intervals) {
      std::ostringstream msg;
      msg << "integrate_adaptive: no convergence on [" << a << ", " << b << "] after "
          << panels.size() << " panels; error estimate " << error << " > tolerance " << abs_tol;
      throw NumericError(msg.str());
    }
    auto worst = panels.top();
    panels.pop();
    const Scalar mid = (worst.a + worst.b) / 2;
    if (!(mid > worst.a && mid < worst.b)) {
      std::ostringstream msg;
      msg << "integrate_adaptive: panel [" << worst.a << ", " << worst.b
          << "] cannot be subdivided further; error estimate " << error;
      throw NumericError(msg.str());
    }
    auto left = detail::gauss_kronrod_15(f, worst.a, mid);
    auto right = detail::gauss_kronrod_15(f, mid, worst.b);
    evaluations += 30;
    total += left.value + right.value - worst.value;
    error += left.error + right.error - worst.error;
    panels.push(left);
    panels.push(right);
  }

  // Re-sum to shed the drift of the running updates.
  Scalar value = 0, err = 0;
  int count = static_cast<int>(panels.size());
  while (!panels.empty()) {
    value += panels.top().value;
    err += panels.top().error;
    panels.pop();
  }
  return {value, err, count, evaluations};
}

}  // namespace hom

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <sstream>
#include <vector>

#include "ellbias/errors.hpp"

namespace ellbias::quadrature {

struct Options {
  double abs_tol = 1e-10;
  double rel_tol = 1e-10;
  int max_subdivisions = 1 << 14;
};

struct Result {
  double value = 0.0;
  double error = 0.0;
  int subdivisions = 0;
};

namespace detail {

// Gauss-Kronrod 7/15 abscissae and weights on [-1, 1].
inline constexpr double kXgk[8] = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
inline constexpr double kWgk[8] = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
inline constexpr double kWg[4] = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Interval {
  double a, b, value, error;
  bool operator<(const Interval& o) const { return error < o.error; }
};

template <class F>
Interval gauss_kronrod15(const F& f, double a, double b) {
  const double center = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  const double fc = f(center);
  double kronrod = fc * kWgk[7];
  double gauss = fc * kWg[3];
  for (int j = 0; j < 7; ++j) {
    const double dx = half * kXgk[j];
    const double fsum = f(center - dx) + f(center + dx);
    kronrod += kWgk[j] * fsum;
    if (j % 2 == 1) gauss += kWg[j / 2] * fsum;
  }
  return {a, b, kronrod * half, std::abs((kronrod - gauss) * half)};
}

}  // namespace detail

/// Globally adaptive Gauss-Kronrod (7/15) integration of f over [a, b].
/// The interval with the largest error estimate is bisected until the
/// summed error meets max(abs_tol, rel_tol * |I|).
template <class F>
Result integrate(const F& f, double a, double b, const Options& opts = {}) {
  std::priority_queue<detail::Interval> heap;
  heap.push(detail::gauss_kronrod15(f, a, b));
  double total = heap.top().value;
  double error = heap.top().error;
  int subdivisions = 0;
  while (error > std::max(opts.abs_tol, opts.rel_tol * std::abs(total))) {
    if (!std::isfinite(total) || !std::isfinite(error)) {
      throw QuadratureError("integrand produced a non-finite value");
    }
    if (subdivisions >= opts.max_subdivisions) {
      std::ostringstream msg;
      msg << "adaptive quadrature did not reach tolerance after " << subdivisions
          << " subdivisions (estimate " << total << ", error " << error << ")";
      throw QuadratureError(msg.str());
    }
    const detail::Interval worst = heap.top();
    heap.pop();
    const double mid = 0.5 * (worst.a + worst.b);
    const auto left = detail::gauss_kronrod15(f, worst.a, mid);
    const auto right = detail::gauss_kronrod15(f, mid, worst.b);
    total += left.value + right.value - worst.value;
    error += left.error + right.error - worst.error;
    heap.push(left);
    heap.push(right);
    ++subdivisions;
  }
  // Re-sum to remove accumulated cancellation from the running updates.
  double value = 0.0, err = 0.0;
  while (!heap.empty()) {
    value += heap.top().value;
    err += heap.top().error;
    heap.pop();
  }
  if (!std::isfinite(value)) throw QuadratureError("integral is not finite");
  return {value, err, subdivisions};
}

/// Integral over [0, inf) after the substitution s = t / (1 - t).
template <class F>
Result integrate_half_line(const F& f, const Options& opts = {}) {
  auto mapped = [&f](double t) {
    const double one_minus = 1.0 - t;
    const double s = t / one_minus;
    const double v = f(s) / (one_minus * one_minus);
    // far tail: 0 * inf from an underflowed density is treated as 0
    if (!std::isfinite(v) && s > 1e100) return 0.0;
    return v;
  };
  return integrate(mapped, 0.0, 1.0, opts);
}

}  // namespace ellbias::quadrature

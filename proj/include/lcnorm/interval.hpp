#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

namespace lcnorm {

// Closed interval with a small outward slop after every operation.
// Used for the nonvanishing / positivity checks at expression
// construction; conservative, not a verified arithmetic.
struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  Interval() = default;
  Interval(double a, double b) : lo(std::min(a, b)), hi(std::max(a, b)) {}
  static Interval point(double a) { return Interval(a, a); }

  bool contains_zero() const { return lo <= 0.0 && hi >= 0.0; }
  bool positive() const { return lo > 0.0; }
  double width() const { return hi - lo; }
};

namespace detail {
inline double grow_lo(double x) {
  return x - 1e-14 * (1.0 + std::fabs(x));
}
inline double grow_hi(double x) {
  return x + 1e-14 * (1.0 + std::fabs(x));
}
inline Interval widen(double a, double b) {
  return Interval(grow_lo(std::min(a, b)), grow_hi(std::max(a, b)));
}
}  // namespace detail

inline Interval operator+(Interval a, Interval b) {
  return detail::widen(a.lo + b.lo, a.hi + b.hi);
}
inline Interval operator-(Interval a, Interval b) {
  return detail::widen(a.lo - b.hi, a.hi - b.lo);
}
inline Interval operator-(Interval a) { return Interval(-a.hi, -a.lo); }

inline Interval operator*(Interval a, Interval b) {
  const double c[4] = {a.lo * b.lo, a.lo * b.hi, a.hi * b.lo, a.hi * b.hi};
  return detail::widen(std::min({c[0], c[1], c[2], c[3]}),
                       std::max({c[0], c[1], c[2], c[3]}));
}

// Division by an interval straddling zero yields the whole line (still a
// valid enclosure); positivity checks on the result then fail and trigger
// bisection in the caller.
inline Interval operator/(Interval a, Interval b) {
  if (b.contains_zero()) {
    const double inf = std::numeric_limits<double>::infinity();
    return Interval(-inf, inf);
  }
  const double c[4] = {a.lo / b.lo, a.lo / b.hi, a.hi / b.lo, a.hi / b.hi};
  return detail::widen(std::min({c[0], c[1], c[2], c[3]}),
                       std::max({c[0], c[1], c[2], c[3]}));
}

inline Interval ilog(Interval a) {
  if (a.lo <= 0.0) {
    // possible domain violation; enclose with -inf on the left
    const double inf = std::numeric_limits<double>::infinity();
    return Interval(-inf, a.hi > 0.0 ? detail::grow_hi(std::log(a.hi)) : -inf);
  }
  return detail::widen(std::log(a.lo), std::log(a.hi));
}

inline Interval iexp(Interval a) {
  return detail::widen(std::exp(a.lo), std::exp(a.hi));
}

inline Interval ipow_int(Interval a, long long k) {
  if (k == 0) return Interval::point(1.0);
  if (k < 0) return Interval::point(1.0) / ipow_int(a, -k);
  double plo = std::pow(a.lo, double(k));
  double phi = std::pow(a.hi, double(k));
  if (k % 2 == 0 && a.contains_zero()) {
    return detail::widen(0.0, std::max(plo, phi));
  }
  return detail::widen(std::min(plo, phi), std::max(plo, phi));
}

}  // namespace lcnorm

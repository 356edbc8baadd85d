#pragma once

#include <cmath>

namespace dattr {

// First-order dual number: value plus one tangent component. Evaluating a
// routine on Dual inputs yields the exact directional derivative in the
// tangent slot, so running a hand-written reverse-mode gradient on Dual
// scalars gives exact Hessian-vector products (forward-over-reverse).
struct Dual {
  double v = 0.0;  // value
  double d = 0.0;  // tangent

  Dual() = default;
  Dual(double value) : v(value) {}
  Dual(double value, double tangent) : v(value), d(tangent) {}
};

inline Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
inline Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.d - b.d}; }
inline Dual operator-(Dual a) { return {-a.v, -a.d}; }
inline Dual operator*(Dual a, Dual b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
inline Dual operator/(Dual a, Dual b) {
  const double inv = 1.0 / b.v;
  const double q = a.v * inv;
  return {q, (a.d - q * b.d) * inv};
}

inline Dual& operator+=(Dual& a, Dual b) { a = a + b; return a; }
inline Dual& operator-=(Dual& a, Dual b) { a = a - b; return a; }
inline Dual& operator*=(Dual& a, Dual b) { a = a * b; return a; }
inline Dual& operator/=(Dual& a, Dual b) { a = a / b; return a; }

inline bool operator<(Dual a, Dual b) { return a.v < b.v; }
inline bool operator>(Dual a, Dual b) { return a.v > b.v; }
inline bool operator<=(Dual a, Dual b) { return a.v <= b.v; }
inline bool operator>=(Dual a, Dual b) { return a.v >= b.v; }

inline Dual sqrt(Dual a) {
  const double s = std::sqrt(a.v);
  return {s, a.d * 0.5 / s};
}
inline Dual exp(Dual a) {
  const double e = std::exp(a.v);
  return {e, a.d * e};
}
inline Dual log(Dual a) { return {std::log(a.v), a.d / a.v}; }
inline Dual erf(Dual a) {
  // d/dx erf(x) = 2/sqrt(pi) * exp(-x^2)
  return {std::erf(a.v), a.d * 1.1283791670955125738961589031 * std::exp(-a.v * a.v)};
}
inline Dual abs(Dual a) { return a.v < 0.0 ? -a : a; }

inline double value_of(double x) { return x; }
inline double value_of(Dual x) { return x.v; }

inline bool is_finite(double x) { return std::isfinite(x); }
inline bool is_finite(Dual x) { return std::isfinite(x.v) && std::isfinite(x.d); }

}  // namespace dattr

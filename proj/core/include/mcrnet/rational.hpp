#ifndef MCRNET_RATIONAL_HPP
#define MCRNET_RATIONAL_HPP

#include <cstdint>
#include <numeric>

namespace mcrnet {

// Exact nonnegative rational with small denominators (replication counts),
// used for the cluster sample-count bookkeeping so that sums over clusters
// stay exact identities.
struct Rational {
  long long num = 0;
  long long den = 1;

  Rational() = default;
  Rational(long long n, long long d = 1) : num(n), den(d) { normalize(); }

  void normalize() {
    if (den < 0) {
      num = -num;
      den = -den;
    }
    const long long g = std::gcd(num < 0 ? -num : num, den);
    if (g > 1) {
      num /= g;
      den /= g;
    }
    if (num == 0) den = 1;
  }

  Rational operator+(const Rational& o) const { return Rational(num * o.den + o.num * den, den * o.den); }
  Rational operator-(const Rational& o) const { return Rational(num * o.den - o.num * den, den * o.den); }
  Rational operator*(const Rational& o) const { return Rational(num * o.num, den * o.den); }
  Rational& operator+=(const Rational& o) { return *this = *this + o; }

  bool operator==(const Rational& o) const { return num == o.num && den == o.den; }
  bool operator!=(const Rational& o) const { return !(*this == o); }
  bool operator<(const Rational& o) const { return num * o.den < o.num * den; }

  double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }
  bool is_integer() const { return den == 1; }
};

}  // namespace mcrnet

#endif

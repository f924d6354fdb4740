#include "trajtok/detmath.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>

namespace trajtok::detmath {
namespace {

// ln2 split so that k*kLn2Hi is exact for |k| < 2^26 (top 26 mantissa bits)
constexpr double kLn2Hi = 6.93147180369123816490e-01;
constexpr double kLn2Lo = 1.90821492927058770002e-10;
constexpr double kInvLn2 = 1.44269504088896338700e+00;

// pi/2 split: kPio2Hi keeps the top 26 mantissa bits of the nearest double,
// kPio2Lo carries the rest of the double plus the true tail beyond double
// precision (pi/2 - (double)pi/2 = 6.123233995736766e-17).
constexpr double kPio2 = 1.5707963267948966;
const double kPio2Hi = std::bit_cast<double>(std::bit_cast<std::uint64_t>(kPio2) & ~((std::uint64_t(1) << 27) - 1));
const double kPio2Lo = (kPio2 - kPio2Hi) + 6.123233995736766e-17;
constexpr double kTwoOverPi = 6.36619772367581382433e-01;

// Taylor kernels on [-pi/4, pi/4]; the tail term is below 1e-16 there.
double sin_kernel(double r) {
  const double z = r * r;
  double p = 1.0 / 1307674368000.0;           // 1/15!
  p = p * z - 1.0 / 6227020800.0;             // 1/13!
  p = p * z + 1.0 / 39916800.0;               // 1/11!
  p = p * z - 1.0 / 362880.0;                 // 1/9!
  p = p * z + 1.0 / 5040.0;                   // 1/7!
  p = p * z - 1.0 / 120.0;                    // 1/5!
  p = p * z + 1.0 / 6.0;                      // 1/3!
  return r - r * z * p;
}

double cos_kernel(double r) {
  const double z = r * r;
  double p = -1.0 / 20922789888000.0;         // 1/16!
  p = p * z + 1.0 / 87178291200.0;            // 1/14!
  p = p * z - 1.0 / 479001600.0;              // 1/12!
  p = p * z + 1.0 / 3628800.0;                // 1/10!
  p = p * z - 1.0 / 40320.0;                  // 1/8!
  p = p * z + 1.0 / 720.0;                    // 1/6!
  p = p * z - 1.0 / 24.0;                     // 1/4!
  p = p * z + 1.0 / 2.0;                      // 1/2!
  return 1.0 - z * p;
}

// quadrant reduction: returns r = x - k*pi/2 and the quadrant k mod 4
double reduce_pio2(double x, int* quadrant) {
  const double fk = std::floor(x * kTwoOverPi + 0.5);
  const long long k = static_cast<long long>(fk);
  const double r = (x - fk * kPio2Hi) - fk * kPio2Lo;
  *quadrant = static_cast<int>(((k % 4) + 4) % 4);
  return r;
}

}  // namespace

double dexp(double x) {
  if (x > 709.0) return std::numeric_limits<double>::infinity();
  if (x < -745.0) return 0.0;
  const double fk = std::floor(x * kInvLn2 + 0.5);
  const int k = static_cast<int>(fk);
  const double r = (x - fk * kLn2Hi) - fk * kLn2Lo;
  // e^r on [-0.35, 0.35], Taylor through r^13/13!
  double p = 1.0 / 6227020800.0;
  p = p * r + 1.0 / 479001600.0;
  p = p * r + 1.0 / 39916800.0;
  p = p * r + 1.0 / 3628800.0;
  p = p * r + 1.0 / 362880.0;
  p = p * r + 1.0 / 40320.0;
  p = p * r + 1.0 / 5040.0;
  p = p * r + 1.0 / 720.0;
  p = p * r + 1.0 / 120.0;
  p = p * r + 1.0 / 24.0;
  p = p * r + 1.0 / 6.0;
  p = p * r + 1.0 / 2.0;
  p = p * r + 1.0;
  p = p * r + 1.0;
  return std::ldexp(p, k);
}

double dlog(double x) {
  if (x == 0.0) return -std::numeric_limits<double>::infinity();
  if (x < 0.0) return std::numeric_limits<double>::quiet_NaN();
  int e = 0;
  double m = std::frexp(x, &e);  // m in [0.5, 1)
  constexpr double kSqrtHalf = 0.70710678118654752440;
  if (m < kSqrtHalf) {
    m *= 2.0;
    e -= 1;
  }
  // log(m) = 2 atanh(s), s = (m-1)/(m+1) in [-0.1716, 0.1716]
  const double s = (m - 1.0) / (m + 1.0);
  const double z = s * s;
  double p = 1.0 / 19.0;
  p = p * z + 1.0 / 17.0;
  p = p * z + 1.0 / 15.0;
  p = p * z + 1.0 / 13.0;
  p = p * z + 1.0 / 11.0;
  p = p * z + 1.0 / 9.0;
  p = p * z + 1.0 / 7.0;
  p = p * z + 1.0 / 5.0;
  p = p * z + 1.0 / 3.0;
  const double logm = 2.0 * s + 2.0 * s * z * p;
  const double fe = static_cast<double>(e);
  return fe * kLn2Hi + (logm + fe * kLn2Lo);
}

double dsin(double x) {
  int q = 0;
  const double r = reduce_pio2(x, &q);
  switch (q) {
    case 0: return sin_kernel(r);
    case 1: return cos_kernel(r);
    case 2: return -sin_kernel(r);
    default: return -cos_kernel(r);
  }
}

double dcos(double x) {
  int q = 0;
  const double r = reduce_pio2(x, &q);
  switch (q) {
    case 0: return cos_kernel(r);
    case 1: return -sin_kernel(r);
    case 2: return -cos_kernel(r);
    default: return sin_kernel(r);
  }
}

double dtanh(double x) {
  if (x > 20.0) return 1.0;
  if (x < -20.0) return -1.0;
  const double t = dexp(-2.0 * std::fabs(x));
  const double v = (1.0 - t) / (1.0 + t);
  return x < 0.0 ? -v : v;
}

double dpow(double x, double p) { return dexp(p * dlog(x)); }

namespace {
constexpr double kGeluC0 = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC1 = 0.044715;
}  // namespace

double dgelu(double x) {
  const double u = kGeluC0 * (x + kGeluC1 * x * x * x);
  return 0.5 * x * (1.0 + dtanh(u));
}

double dgelu_grad(double x) {
  const double u = kGeluC0 * (x + kGeluC1 * x * x * x);
  const double th = dtanh(u);
  const double sech2 = 1.0 - th * th;
  return 0.5 * (1.0 + th) + 0.5 * x * sech2 * kGeluC0 * (1.0 + 3.0 * kGeluC1 * x * x);
}

}  // namespace trajtok::detmath

#pragma once

// Deterministic scalar math. libm's exp/log/sin/cos differ in the last bits
// between platforms and versions; these polynomial kernels make every
// transcendental in the pipeline reproduce bit-for-bit anywhere, which is what
// lets datasets, training runs, and golden logs be byte-stable. Accuracy is
// ~1 ulp-ish (unit-tested against libm at 1e-12 relative); sqrt is left to
// std::sqrt, which IEEE 754 already requires to be correctly rounded.

namespace trajtok::detmath {

double dexp(double x);
double dlog(double x);   // requires x > 0; returns -inf at 0
double dsin(double x);
double dcos(double x);
double dtanh(double x);
double dpow(double x, double p);  // exp(p*log(x)); requires x > 0

// gelu in the tanh formulation, plus its derivative for backward passes
double dgelu(double x);
double dgelu_grad(double x);

}  // namespace trajtok::detmath

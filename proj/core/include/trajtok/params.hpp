#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "trajtok/rng.hpp"
#include "trajtok/tensor.hpp"

// Parameter-struct plumbing. Every module exposes its learnables through a
// `visit(f)` member calling f(name, Tensor&) in one canonical order; that
// order is the single source of truth for initialization draws, optimizer
// state, and checkpoint layout.
namespace trajtok {

inline constexpr double kLayerNormEps = 1e-6;

inline void fill_uniform(Tensor& t, double lo, double hi, RngSequence& rng) {
  double* p = t.mutable_data();
  for (long long i = 0; i < t.size(); ++i) p[static_cast<size_t>(i)] = rng.uniform(lo, hi);
}

inline void fill_xavier(Tensor& t, long long fan_in, long long fan_out, RngSequence& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  fill_uniform(t, -limit, limit, rng);
}

// Copy of a params struct whose tensors are registered on the tape (same
// buffers, taped handles).
template <class P>
P watched(const P& params, Tape& tape) {
  P out = params;
  out.visit([&](const std::string&, Tensor& t) { t = tape.watch(t); });
  return out;
}

template <class P>
std::vector<std::pair<std::string, Tensor>> named_tensors(P& params) {
  std::vector<std::pair<std::string, Tensor>> out;
  params.visit([&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
  return out;
}

}  // namespace trajtok

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "imgap/nn.hpp"
#include "imgap/random.hpp"

namespace imgap {

struct GradCheckResult {
  double max_rel_error = 0.0;
  Eigen::Index worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  int probes = 0;
};

/// Compares `analytic` against central differences of `loss` at `n_probes`
/// randomly chosen coordinates of `params`. Relative error is
/// |a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients from
/// dominating through round-off.
inline GradCheckResult grad_check(const std::function<double(const Vector&)>& loss, const Vector& params,
                                  const Vector& analytic, int n_probes, Rng& rng, double h = 1e-5,
                                  double floor = 1e-6) {
  GradCheckResult out;
  Vector p = params;
  for (int k = 0; k < n_probes; ++k) {
    const Eigen::Index i = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(params.size())));
    const double orig = p(i);
    p(i) = orig + h;
    const double up = loss(p);
    p(i) = orig - h;
    const double down = loss(p);
    p(i) = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic(i);
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
    ++out.probes;
    if (rel >= out.max_rel_error) {
      out.max_rel_error = rel;
      out.worst_index = i;
      out.worst_analytic = a;
      out.worst_numeric = numeric;
    }
  }
  return out;
}

}  // namespace imgap

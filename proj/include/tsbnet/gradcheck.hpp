#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsbnet/rng.hpp"
#include "tsbnet/tensor.hpp"

namespace tsbnet {

// Finite-difference gradient verification. The probed function is always
// evaluated in double precision; implementations under test may run in
// single precision internally, their analytic gradients are compared after
// widening.

struct GradCheckReport {
  double max_rel = 0.0;
  std::string tensor;
  std::int64_t index = -1;
  double analytic = 0.0;
  double numeric = 0.0;

  void update(double rel, const std::string& name, std::int64_t i, double a, double n) {
    if (rel > max_rel) {
      max_rel = rel;
      tensor = name;
      index = i;
      analytic = a;
      numeric = n;
    }
  }

  std::string describe() const {
    return "worst rel err " + std::to_string(max_rel) + " at " + tensor + "[" +
           std::to_string(index) + "]: analytic " + std::to_string(analytic) +
           " vs numeric " + std::to_string(numeric);
  }
};

inline double rel_error(double a, double n) {
  const double denom = std::max({1.0, std::fabs(a), std::fabs(n)});
  return std::fabs(a - n) / denom;
}

// Central difference on one coordinate of `t`; `loss` re-evaluates the full
// forward pass at the tensor's current contents.
template <class LossFn>
double central_difference(LossFn&& loss, Tensor<double>& t, std::size_t i, double h) {
  const double x0 = t[i];
  t[i] = x0 + h;
  const double fp = loss();
  t[i] = x0 - h;
  const double fm = loss();
  t[i] = x0;
  if (!std::isfinite(fp) || !std::isfinite(fm))
    throw std::runtime_error("grad_check: non-finite loss during probing");
  return (fp - fm) / (2.0 * h);
}

// Compares `analytic` (d loss / d t) against central differences at
// `coords` randomly chosen coordinates (all coordinates if the tensor is
// small enough). Updates `rep` with the worst offender seen.
template <class LossFn>
void grad_check_tensor(LossFn&& loss, Tensor<double>& t, const Tensor<double>& analytic,
                       const std::string& name, std::int64_t coords, double h,
                       Rng& rng, GradCheckReport& rep) {
  if (!t.same_shape(analytic))
    throw std::invalid_argument("grad_check: analytic gradient shape mismatch for " + name);
  const std::int64_t n = static_cast<std::int64_t>(t.size());
  std::vector<std::size_t> picks;
  if (n <= coords) {
    picks.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) picks[static_cast<std::size_t>(i)] = static_cast<std::size_t>(i);
  } else {
    picks.reserve(static_cast<std::size_t>(coords));
    for (std::int64_t i = 0; i < coords; ++i)
      picks.push_back(static_cast<std::size_t>(rng.uniform_int(n)));
  }
  for (std::size_t i : picks) {
    const double step = h * std::max(1.0, std::fabs(t[i]));
    const double num = central_difference(loss, t, i, step);
    const double ana = analytic[i];
    if (!std::isfinite(ana))
      throw std::runtime_error("grad_check: non-finite analytic gradient in " + name);
    rep.update(rel_error(ana, num), name, static_cast<std::int64_t>(i), ana, num);
  }
}

}  // namespace tsbnet

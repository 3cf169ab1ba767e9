#pragma once

// Independent reference computations used as test oracles. These live only
// in test code and deliberately avoid the library's own assembly paths.

#include <vector>

#include "gridstate/grid.hpp"
#include "gridstate/measurement.hpp"
#include "gridstate/rng.hpp"

namespace gridstate::testing {

/// Active/reactive injection at bus n from the polar power-flow formulas,
/// using only the admittance matrix entries and polar voltages.
inline double polar_injection(const CMat& ybus, const CVec& v, Index n,
                              bool active) {
  const Index nb = v.size();
  const double vn = std::abs(v(n)), tn = std::arg(v(n));
  double acc = 0.0;
  for (Index k = 0; k < nb; ++k) {
    const double vk = std::abs(v(k)), tk = std::arg(v(k));
    const double g = ybus(n, k).real(), b = ybus(n, k).imag();
    const double d = tn - tk;
    if (active)
      acc += vn * vk * (g * std::cos(d) + b * std::sin(d));
    else
      acc += vn * vk * (g * std::sin(d) - b * std::cos(d));
  }
  return acc;
}

/// Branch current at one end straight from the pi-model equations, without
/// going through the stacked flow matrix.
inline Complex branch_current(const Branch& br, Complex v_from, Complex v_to,
                              BranchEnd end) {
  const Complex y = br.series_admittance;
  const Complex ysh(0.0, br.shunt_susceptance / 2.0);
  const Complex rho = br.tap_ratio;
  if (end == BranchEnd::From)
    return (y + ysh) / std::norm(rho) * v_from - y / std::conj(rho) * v_to;
  return (y + ysh) * v_to - y / rho * v_from;
}

/// Complex power leaving the metered end of a branch.
inline Complex branch_power(const Branch& br, Complex v_from, Complex v_to,
                            BranchEnd end) {
  const Complex i = branch_current(br, v_from, v_to, end);
  const Complex v = end == BranchEnd::From ? v_from : v_to;
  return v * std::conj(i);
}

/// Central finite differences of h over the expanded real coordinates.
inline Mat fd_real_jacobian(const MeasurementPlan& plan, const CVec& v,
                            double step = 1e-6) {
  const Index n = v.size();
  Mat j(plan.real_size(), 2 * n);
  for (Index c = 0; c < 2 * n; ++c) {
    Vec x = realify_vector(v);
    x(c) += step;
    const CVec hp = evaluate(plan, complexify_vector(x));
    x(c) -= 2 * step;
    const CVec hm = evaluate(plan, complexify_vector(x));
    Index r = 0;
    for (Index m = 0; m < plan.size(); ++m) {
      const Complex d = (hp(m) - hm(m)) / (2 * step);
      if (is_quadratic(plan.entry(m).kind)) {
        j(r++, c) = d.real();
      } else {
        j(r++, c) = d.real();
        j(r++, c) = d.imag();
      }
    }
  }
  return j;
}

/// Row-deletion helper for leave-one-out and criticality oracles.
template <typename ModelT>
inline ModelT drop_rows_for_test(const ModelT& model,
                                 const std::vector<Index>& rows) {
  std::vector<char> dead(model.h.rows(), 0);
  for (Index r : rows) dead[r] = 1;
  ModelT out;
  out.h.resize(model.h.rows() - static_cast<Index>(rows.size()),
               model.h.cols());
  out.z.resize(out.h.rows());
  Index w = 0;
  for (Index r = 0; r < model.h.rows(); ++r) {
    if (dead[r]) continue;
    out.h.row(w) = model.h.row(r);
    out.z(w) = model.z(r);
    ++w;
  }
  return out;
}

inline CMat random_hermitian(Rng& rng, Index n) {
  CMat a(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      a(i, j) = Complex(rng.gaussian(), rng.gaussian());
  return 0.5 * (a + a.adjoint());
}

inline CVec random_state(Rng& rng, Index n) {
  CVec v(n);
  for (Index i = 0; i < n; ++i)
    v(i) = std::polar(rng.uniform(0.8, 1.2), rng.uniform(-1.0, 1.0));
  return v;
}

}  // namespace gridstate::testing

#pragma once

namespace gridstate {

/// Regularized lower incomplete gamma P(a, x), series/continued-fraction.
double regularized_gamma_p(double a, double x);

/// Upper-alpha quantile of the chi-square distribution with `dof` degrees of
/// freedom, found by bisection on the regularized incomplete gamma.
double chi_square_quantile(double dof, double alpha);

}  // namespace gridstate

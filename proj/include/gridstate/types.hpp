#pragma once

#include <complex>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace gridstate {

using Complex = std::complex<double>;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Eigen::Index;

/// Thrown on invalid inputs (schema violations, dimension mismatches,
/// unobservable plans). Solver non-convergence is reported via flags instead.
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

constexpr Complex kImag{0.0, 1.0};

/// [Re v; Im v]
inline Vec realify_vector(const CVec& v) {
  Vec out(2 * v.size());
  out.head(v.size()) = v.real();
  out.tail(v.size()) = v.imag();
  return out;
}

inline CVec complexify_vector(const Vec& x) {
  const Index n = x.size() / 2;
  return x.head(n) + kImag * x.tail(n);
}

/// Block expansion [[Re A, -Im A],[Im A, Re A]]. Valid for any complex linear
/// map: realify_linear(A) * realify_vector(v) == realify_vector(A * v).
inline Mat realify_linear(const CMat& a) {
  const Index m = a.rows(), n = a.cols();
  Mat out(2 * m, 2 * n);
  out.topLeftCorner(m, n) = a.real();
  out.topRightCorner(m, n) = -a.imag();
  out.bottomLeftCorner(m, n) = a.imag();
  out.bottomRightCorner(m, n) = a.real();
  return out;
}

/// Same block expansion restricted to Hermitian input, so that
/// realify_vector(v)' * out * realify_vector(v) == v' * h * v (real).
/// Rejects inputs whose Hermitian asymmetry exceeds 1e-10.
Mat realify_hermitian(const CMat& h);

/// Inverse of the lifted expansion: maps a real symmetric 2Nx2N matrix W to
/// the complex Hermitian V with trace(realify_hermitian(H) * W) == trace(H*V)
/// for every Hermitian H. On W = x x' with x = realify_vector(v) this
/// returns exactly v v'.
CMat hermitian_from_lifted(const Mat& w);

double hermitian_asymmetry(const CMat& h);

/// Rotates v by a global phase so the entry at `ref` has zero angle.
CVec anchor_phase(const CVec& v, Index ref);

/// Rotates `v` so its phase at `ref` matches `target`'s phase there.
CVec align_to_reference(const CVec& v, const CVec& target, Index ref);

}  // namespace gridstate

#include "gridstate/types.hpp"

namespace gridstate {

double hermitian_asymmetry(const CMat& h) {
  return (h - h.adjoint()).cwiseAbs().maxCoeff();
}

Mat realify_hermitian(const CMat& h) {
  if (h.rows() != h.cols()) throw InputError("realify: matrix not square");
  if (hermitian_asymmetry(h) > 1e-10)
    throw InputError("realify: input is not Hermitian");
  return realify_linear(h);
}

CMat hermitian_from_lifted(const Mat& w) {
  if (w.rows() != w.cols() || w.rows() % 2 != 0)
    throw InputError("hermitian_from_lifted: bad dimensions");
  const Index n = w.rows() / 2;
  Mat a = w.topLeftCorner(n, n) + w.bottomRightCorner(n, n);
  Mat b = w.bottomLeftCorner(n, n) - w.topRightCorner(n, n);
  // Symmetrize: the structured part of W is all the measurements see.
  CMat v = 0.5 * (a + a.transpose()).cast<Complex>();
  v += kImag * (0.5 * (b - b.transpose()));
  return v;
}

CVec anchor_phase(const CVec& v, Index ref) {
  const Complex r = v(ref);
  if (std::abs(r) < 1e-300) return v;
  return v * (std::conj(r) / std::abs(r));
}

CVec align_to_reference(const CVec& v, const CVec& target, Index ref) {
  const Complex r = v(ref), t = target(ref);
  if (std::abs(r) < 1e-300 || std::abs(t) < 1e-300) return v;
  Complex rot = (t / std::abs(t)) * (std::conj(r) / std::abs(r));
  return v * rot;
}

}  // namespace gridstate

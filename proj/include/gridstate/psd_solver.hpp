#pragma once

#include <string>
#include <vector>

#include "gridstate/types.hpp"

namespace gridstate {

enum class LossKind { Square, Absolute };

/// Sparse symmetric coefficient matrix in triplet form (upper+lower stored).
struct SymTriplets {
  Index n = 0;
  std::vector<Index> row, col;
  std::vector<double> val;

  static SymTriplets from_dense(const Mat& a, double drop = 0.0);
  Mat to_dense() const;
  double inner(const Mat& x) const;        // <A, X>
  void add_to(Mat& x, double alpha) const;  // X += alpha * A
};

/// One data term: weight * loss(b - <A, X>).
struct PsdTerm {
  SymTriplets a;
  double b = 0.0;
  double weight = 1.0;
  LossKind loss = LossKind::Square;
};

/// 0.5 * rho * || X[block] - target ||_F^2 over a principal submatrix.
struct PsdProxTerm {
  std::vector<Index> indices;
  Mat target;
  double rho = 0.0;
};

/// <E, X> == c. Dense Newton path only.
struct PsdEquality {
  Mat e;
  double c = 0.0;
};

/// minimize  <C, X> + sum_m weight_m loss_m(b_m - <A_m, X>) + prox terms
/// subject to X PSD (and optional equalities), via a log-barrier Newton
/// interior-point method. Absolute losses are handled by the auxiliary
/// epigraph split, folded into the barrier analytically.
struct PsdProgram {
  Index n = 0;
  Mat linear_cost;  // zero-size means none
  std::vector<PsdTerm> terms;
  std::vector<PsdProxTerm> prox;
  std::vector<PsdEquality> equalities;
};

struct PsdOptions {
  double gap_tol = 1e-7;
  double newton_tol = 1e-9;
  int max_newton_per_stage = 60;
  double tau0 = -1.0;  // negative: chosen from the initial objective scale
  double tau_shrink = 0.1;
  Index dense_threshold = 48;  // dense Newton for n <= this, PCG above
  int max_cg = 2000;
  Mat warm_start;  // optional interior start
};

struct PsdSolution {
  Mat x;
  double objective = 0.0;  // data + linear + prox value at x
  double gap = 0.0;        // final tau * barrier degree
  int newton_steps = 0;
  long cg_iterations = 0;  // PCG path only
  bool converged = false;
  std::string message;
};

/// Data-term value at X (no barrier); used to scale initial path parameters.
double psd_data_objective(const PsdProgram& prog, const Mat& x);

PsdSolution solve_psd(const PsdProgram& prog, const PsdOptions& opts = {});

}  // namespace gridstate

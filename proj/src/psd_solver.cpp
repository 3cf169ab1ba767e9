#include "gridstate/psd_solver.hpp"

#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

namespace gridstate {

SymTriplets SymTriplets::from_dense(const Mat& a, double drop) {
  SymTriplets t;
  t.n = a.rows();
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j)
      if (std::abs(a(i, j)) > drop) {
        t.row.push_back(i);
        t.col.push_back(j);
        t.val.push_back(a(i, j));
      }
  return t;
}

Mat SymTriplets::to_dense() const {
  Mat a = Mat::Zero(n, n);
  for (size_t k = 0; k < val.size(); ++k) a(row[k], col[k]) += val[k];
  return a;
}

double SymTriplets::inner(const Mat& x) const {
  double s = 0.0;
  for (size_t k = 0; k < val.size(); ++k) s += val[k] * x(row[k], col[k]);
  return s;
}

void SymTriplets::add_to(Mat& x, double alpha) const {
  for (size_t k = 0; k < val.size(); ++k) x(row[k], col[k]) += alpha * val[k];
}

namespace {

// Loss derivative model at residual r: value, d/dr, d2/dr2. Absolute losses
// carry the epigraph barrier analytically (chi eliminated at its optimum).
struct LossEval {
  double value = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
};

LossEval eval_loss(LossKind kind, double w, double r, double tau) {
  LossEval e;
  if (kind == LossKind::Square) {
    e.value = w * r * r;
    e.d1 = 2.0 * w * r;
    e.d2 = 2.0 * w;
    return e;
  }
  // w*|r| smoothed by the two log terms of the epigraph split.
  const double u = w * r;
  const double s = std::sqrt(tau * tau + u * u);
  const double chi = (tau + s) / w;
  e.value = w * chi - tau * std::log(std::max(chi * chi - r * r, 1e-300));
  e.d1 = w * u / (tau + s);
  e.d2 = w * w * tau / (s * (tau + s));
  return e;
}

struct Workspace {
  const PsdProgram* prog = nullptr;
  double tau = 0.0;
  double barrier_degree = 0.0;

  double data_objective(const Mat& x) const {
    double v = 0.0;
    for (const auto& t : prog->terms) {
      const double r = t.b - t.a.inner(x);
      if (t.loss == LossKind::Square)
        v += t.weight * r * r;
      else
        v += t.weight * std::abs(r);
    }
    if (prog->linear_cost.size() > 0)
      v += prog->linear_cost.cwiseProduct(x).sum();
    for (const auto& p : prog->prox) {
      const Index k = static_cast<Index>(p.indices.size());
      for (Index i = 0; i < k; ++i)
        for (Index j = 0; j < k; ++j) {
          const double d = x(p.indices[i], p.indices[j]) - p.target(i, j);
          v += 0.5 * p.rho * d * d;
        }
    }
    return v;
  }

  // Barrier-stage objective: smooth losses + linear + prox - tau logdet.
  // Returns +inf when X is not positive definite.
  double phi(const Mat& x) const {
    Eigen::LLT<Mat> llt(x);
    if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
    double v = 0.0;
    for (const auto& t : prog->terms) {
      const double r = t.b - t.a.inner(x);
      v += eval_loss(t.loss, t.weight, r, tau).value;
    }
    if (prog->linear_cost.size() > 0)
      v += prog->linear_cost.cwiseProduct(x).sum();
    for (const auto& p : prog->prox) {
      const Index k = static_cast<Index>(p.indices.size());
      for (Index i = 0; i < k; ++i)
        for (Index j = 0; j < k; ++j) {
          const double d = x(p.indices[i], p.indices[j]) - p.target(i, j);
          v += 0.5 * p.rho * d * d;
        }
    }
    for (Index i = 0; i < x.rows(); ++i)
      v -= 2.0 * tau * std::log(llt.matrixL()(i, i));
    return v;
  }

  // Smooth gradient (data + linear + prox - tau X^{-1}) and per-term second
  // derivatives for the Hessian operator.
  Mat gradient(const Mat& x, const Mat& xinv, std::vector<double>& d2) const {
    const Index n = prog->n;
    Mat g = Mat::Zero(n, n);
    d2.resize(prog->terms.size());
    for (size_t m = 0; m < prog->terms.size(); ++m) {
      const auto& t = prog->terms[m];
      const double r = t.b - t.a.inner(x);
      LossEval e = eval_loss(t.loss, t.weight, r, tau);
      t.a.add_to(g, -e.d1);  // d/dX of loss(b - <A,X>) = -loss'(r) * A
      d2[m] = e.d2;
    }
    if (prog->linear_cost.size() > 0) g += prog->linear_cost;
    for (const auto& p : prog->prox) {
      const Index k = static_cast<Index>(p.indices.size());
      for (Index i = 0; i < k; ++i)
        for (Index j = 0; j < k; ++j)
          g(p.indices[i], p.indices[j]) +=
              p.rho * (x(p.indices[i], p.indices[j]) - p.target(i, j));
    }
    g -= tau * xinv;
    return 0.5 * (g + g.transpose());
  }

  // Hessian-vector product in matrix form.
  Mat hess_apply(const Mat& delta, const Mat& xinv,
                 const std::vector<double>& d2) const {
    Mat out = tau * (xinv * delta * xinv);
    for (size_t m = 0; m < prog->terms.size(); ++m) {
      const auto& t = prog->terms[m];
      if (d2[m] == 0.0) continue;
      const double a_dot = t.a.inner(delta);
      t.a.add_to(out, d2[m] * a_dot);
    }
    for (const auto& p : prog->prox) {
      const Index k = static_cast<Index>(p.indices.size());
      for (Index i = 0; i < k; ++i)
        for (Index j = 0; j < k; ++j)
          out(p.indices[i], p.indices[j]) +=
              p.rho * delta(p.indices[i], p.indices[j]);
    }
    return 0.5 * (out + out.transpose());
  }
};

// --- dense Newton path ------------------------------------------------------

// Orthonormal symmetric basis coordinates: c_ii = M_ii, c_ij = sqrt(2) M_ij.
struct VechMap {
  Index n = 0;
  std::vector<Index> bi, bj;  // basis index -> (i, j), i >= j
  Mat to_matrix(const Vec& c) const {
    Mat m = Mat::Zero(n, n);
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    for (size_t p = 0; p < bi.size(); ++p) {
      if (bi[p] == bj[p])
        m(bi[p], bi[p]) = c(p);
      else {
        m(bi[p], bj[p]) = c(p) * inv_sqrt2;
        m(bj[p], bi[p]) = c(p) * inv_sqrt2;
      }
    }
    return m;
  }
  Vec to_coords(const Mat& m) const {
    Vec c(bi.size());
    const double sqrt2 = std::sqrt(2.0);
    for (size_t p = 0; p < bi.size(); ++p)
      c(p) = bi[p] == bj[p] ? m(bi[p], bi[p]) : sqrt2 * m(bi[p], bj[p]);
    return c;
  }
};

VechMap make_vech(Index n) {
  VechMap v;
  v.n = n;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j <= i; ++j) {
      v.bi.push_back(i);
      v.bj.push_back(j);
    }
  return v;
}

// Constant part of the dense Hessian: square-loss data terms (curvature 2w)
// plus prox diagonals. Assembled once per solve.
Mat dense_constant_hessian(const PsdProgram& prog, const VechMap& vech) {
  const Index nb = static_cast<Index>(vech.bi.size());
  Mat h = Mat::Zero(nb, nb);
  for (const auto& t : prog.terms) {
    if (t.loss != LossKind::Square) continue;
    const Vec a = vech.to_coords(t.a.to_dense());
    h.selfadjointView<Eigen::Lower>().rankUpdate(a, 2.0 * t.weight);
  }
  h = h.selfadjointView<Eigen::Lower>();
  for (const auto& p : prog.prox) {
    std::vector<char> in(prog.n, 0);
    for (Index i : p.indices) in[i] = 1;
    for (Index q = 0; q < nb; ++q)
      if (in[vech.bi[q]] && in[vech.bj[q]]) h(q, q) += p.rho;
  }
  return h;
}

// Low-rank Newton direction: the Hessian is tau * Xinv (x) Xinv plus an
// M-column update, so Woodbury beats forming and factoring the dense
// Hessian whenever M is well below the vech dimension. Valid only without
// prox or equality terms.
Mat woodbury_direction(const Workspace& ws, const VechMap& vech, const Mat& x,
                       const std::vector<double>& d2, const Mat& grad,
                       const Mat& a_cols) {
  const auto& prog = *ws.prog;
  const Index nb = static_cast<Index>(vech.bi.size());
  const Index m_count = static_cast<Index>(prog.terms.size());

  auto binv_apply = [&](const Mat& r) {
    Mat z = (x * r * x) / ws.tau;
    return Mat(0.5 * (z + z.transpose()));
  };

  const Vec g = vech.to_coords(grad);
  const Vec binv_g = vech.to_coords(binv_apply(grad));

  Mat binv_a(nb, m_count);
  for (Index m = 0; m < m_count; ++m)
    binv_a.col(m) =
        vech.to_coords(binv_apply(prog.terms[m].a.to_dense()));

  Mat s = a_cols.transpose() * binv_a;
  for (Index m = 0; m < m_count; ++m) {
    const double beta = d2[m];
    s(m, m) += beta > 0.0 ? 1.0 / beta : 1e30;
  }
  const Vec rhs = a_cols.transpose() * binv_g;
  const Vec y = s.ldlt().solve(rhs);
  const Vec step = -(binv_g - binv_a * y);
  (void)g;
  return vech.to_matrix(step);
}

// Dense Newton direction, optionally with equality constraints handled by the
// range-space method on the bordered KKT system.
Mat dense_direction(const Workspace& ws, const VechMap& vech, const Mat& x,
                    const Mat& xinv, const std::vector<double>& d2,
                    const Mat& grad, const Mat& const_hess) {
  const auto& prog = *ws.prog;
  const Index nb = static_cast<Index>(vech.bi.size());
  Mat h = const_hess;

  // Barrier block: column q holds coords of Q B_q Q.
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  for (Index q = 0; q < nb; ++q) {
    const Index k = vech.bi[q], l = vech.bj[q];
    Mat m;
    if (k == l)
      m = xinv.col(k) * xinv.row(k);
    else
      m = (xinv.col(k) * xinv.row(l) + xinv.col(l) * xinv.row(k)) * inv_sqrt2;
    h.col(q) += ws.tau * vech.to_coords(m);
  }
  // Non-constant (absolute-loss) data curvature.
  for (size_t m = 0; m < prog.terms.size(); ++m) {
    if (prog.terms[m].loss == LossKind::Square || d2[m] == 0.0) continue;
    const Vec a = vech.to_coords(prog.terms[m].a.to_dense());
    h += d2[m] * a * a.transpose();
  }

  const Vec g = vech.to_coords(grad);
  Eigen::LDLT<Mat> fact(h);
  Vec step = fact.solve(-g);

  if (!prog.equalities.empty()) {
    const Index ne = static_cast<Index>(prog.equalities.size());
    Mat et(nb, ne);
    for (Index e = 0; e < ne; ++e)
      et.col(e) = vech.to_coords(prog.equalities[e].e);
    Mat hinv_et = fact.solve(et);
    Mat schur = et.transpose() * hinv_et;
    // Keep the iterate on the equality manifold (x already satisfies them).
    Vec rhs = et.transpose() * step;
    Vec nu = schur.ldlt().solve(rhs);
    step -= hinv_et * nu;
  }
  return vech.to_matrix(step);
}

// PCG on the Newton system with the inverse-barrier preconditioner.
Mat pcg_direction(const Workspace& ws, const Mat& x, const Mat& xinv,
                  const std::vector<double>& d2, const Mat& grad,
                  int max_iter, long& cg_counter) {
  const double gnorm = grad.norm();
  const double tol = std::min(0.1, std::sqrt(gnorm)) * gnorm;
  Mat d = Mat::Zero(x.rows(), x.cols());
  Mat r = -grad;  // residual of H d = -g at d = 0
  auto precond = [&](const Mat& m) {
    Mat z = (x * m * x) / ws.tau;
    return Mat(0.5 * (z + z.transpose()));
  };
  Mat z = precond(r);
  Mat p = z;
  double rz = r.cwiseProduct(z).sum();
  for (int it = 0; it < max_iter; ++it) {
    if (r.norm() <= tol) break;
    ++cg_counter;
    Mat hp = ws.hess_apply(p, xinv, d2);
    const double php = p.cwiseProduct(hp).sum();
    if (php <= 0.0) break;  // numerical loss of curvature; accept current d
    const double alpha = rz / php;
    d += alpha * p;
    r -= alpha * hp;
    z = precond(r);
    const double rz_new = r.cwiseProduct(z).sum();
    p = z + (rz_new / rz) * p;
    rz = rz_new;
  }
  if (d.cwiseProduct(-grad).sum() <= 0.0) {
    // Fall back to a preconditioned steepest-descent direction.
    d = precond(-grad);
  }
  return d;
}

double max_feasible_step(const Mat& x, const Mat& delta) {
  Eigen::LLT<Mat> llt(x);
  Mat li = llt.matrixL().solve(delta);
  Mat m = llt.matrixL().solve(li.transpose()).transpose();
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(m, Eigen::EigenvaluesOnly);
  const double lmin = es.eigenvalues().minCoeff();
  if (lmin >= 0.0) return std::numeric_limits<double>::infinity();
  return -1.0 / lmin;
}

}  // namespace

double psd_data_objective(const PsdProgram& prog, const Mat& x) {
  Workspace ws;
  ws.prog = &prog;
  return ws.data_objective(x);
}

PsdSolution solve_psd(const PsdProgram& prog, const PsdOptions& opts) {
  const Index n = prog.n;
  PsdSolution sol;
  Workspace ws;
  ws.prog = &prog;

  double abs_terms = 0.0;
  for (const auto& t : prog.terms)
    if (t.loss == LossKind::Absolute) abs_terms += 1.0;
  ws.barrier_degree = static_cast<double>(n) + 2.0 * abs_terms;

  Mat x = Mat::Identity(n, n);
  if (opts.warm_start.size() > 0) {
    Mat w = 0.5 * (opts.warm_start + opts.warm_start.transpose());
    const double shift = std::max(w.trace() / n, 1.0) * 0.01 + 1e-8;
    w = 0.99 * w + shift * Mat::Identity(n, n);
    if (Eigen::LLT<Mat>(w).info() == Eigen::Success) x = w;
  }
  for (const auto& eq : prog.equalities) {
    const double v = eq.e.cwiseProduct(x).sum();
    if (std::abs(v - eq.c) > 1e-9) {
      // Project the start onto the equality by scaling the involved block.
      // Callers use corner-pinning equalities where identity can be fixed
      // by a diagonal shift along E.
      const double e2 = eq.e.cwiseProduct(eq.e).sum();
      x += ((eq.c - v) / e2) * eq.e;
    }
  }

  const bool dense = n <= opts.dense_threshold;
  if (!dense && !prog.equalities.empty())
    throw InputError("psd solver: equalities need the dense path");
  VechMap vech;
  Mat const_hess;
  Mat a_cols;
  bool low_rank = false;
  if (dense) {
    vech = make_vech(n);
    const Index nb = static_cast<Index>(vech.bi.size());
    const Index m_count = static_cast<Index>(prog.terms.size());
    low_rank = prog.prox.empty() && prog.equalities.empty() &&
               2 * m_count <= nb;
    if (low_rank) {
      a_cols.resize(nb, m_count);
      for (Index m = 0; m < m_count; ++m)
        a_cols.col(m) = vech.to_coords(prog.terms[m].a.to_dense());
    } else {
      const_hess = dense_constant_hessian(prog, vech);
    }
  }

  double tau = opts.tau0;
  if (tau <= 0.0)
    tau = (1.0 + std::abs(ws.data_objective(x))) / ws.barrier_degree;
  const double tau_min = opts.gap_tol / ws.barrier_degree;

  int total_newton = 0;
  bool ok = true;
  while (true) {
    ws.tau = std::max(tau, tau_min);
    for (int it = 0; it < opts.max_newton_per_stage; ++it) {
      Eigen::LLT<Mat> llt(x);
      if (llt.info() != Eigen::Success) {
        sol.message = "iterate left the cone";
        ok = false;
        break;
      }
      Mat xinv = llt.solve(Mat::Identity(n, n));
      xinv = 0.5 * (xinv + xinv.transpose());
      std::vector<double> d2;
      Mat grad = ws.gradient(x, xinv, d2);

      Mat delta;
      if (dense && low_rank)
        delta = woodbury_direction(ws, vech, x, d2, grad, a_cols);
      else if (dense)
        delta = dense_direction(ws, vech, x, xinv, d2, grad, const_hess);
      else
        delta = pcg_direction(ws, x, xinv, d2, grad, opts.max_cg,
                              sol.cg_iterations);
      ++total_newton;

      const double decrement = -grad.cwiseProduct(delta).sum();
      // Intermediate stages only need to re-center; full accuracy is only
      // demanded once tau reaches its target.
      const double stage_tol =
          ws.tau > tau_min * (1.0 + 1e-12) ? 0.05 * ws.tau : 0.0;
      if (decrement <=
          std::max(2.0 * opts.newton_tol * (1.0 + std::abs(ws.phi(x))),
                   stage_tol))
        break;

      double alpha = std::min(1.0, 0.99 * max_feasible_step(x, delta));
      const double phi0 = ws.phi(x);
      const double slope = -decrement;
      int backtracks = 0;
      while (backtracks < 60) {
        Mat cand = x + alpha * delta;
        const double phi1 = ws.phi(cand);
        if (phi1 <= phi0 + 1e-4 * alpha * slope) {
          x = cand;
          break;
        }
        alpha *= 0.5;
        ++backtracks;
      }
      if (backtracks >= 60) break;  // stalled; move to next stage or stop
    }
    if (!ok) break;
    if (ws.tau <= tau_min * (1.0 + 1e-12)) break;
    tau *= opts.tau_shrink;
  }

  sol.x = 0.5 * (x + x.transpose());
  sol.objective = ws.data_objective(sol.x);
  sol.gap = ws.tau * ws.barrier_degree;
  sol.newton_steps = total_newton;
  sol.converged = ok && sol.gap <= opts.gap_tol * (1.0 + 1e-9);
  if (sol.message.empty())
    sol.message = sol.converged ? "ok" : "stopped before target gap";
  return sol;
}

}  // namespace gridstate

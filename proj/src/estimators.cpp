#include "gridstate/estimators.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "gridstate/psd_solver.hpp"

namespace gridstate {

CVec flat_start(Index n_bus) { return CVec::Ones(n_bus); }

void SolverOptions::validate() const {
  if (!(tol > 0) || !(barrier_gap > 0) || !(sufficient_decrease > 0) ||
      !(step_init > 0))
    throw InputError("solver options: tolerances must be positive");
  if (!(step_shrink > 0.0 && step_shrink < 1.0))
    throw InputError("solver options: step shrink must lie in (0,1)");
  if (max_iters < 1) throw InputError("solver options: max_iters must be >= 1");
}

namespace {

Vec pinned_solve(const Mat& a, const Vec& b, Index pinned) {
  // Solve a * x = b with coordinate `pinned` (when >= 0) forced to zero.
  const Index n = a.rows();
  std::vector<Index> keep;
  keep.reserve(n);
  for (Index i = 0; i < n; ++i)
    if (i != pinned) keep.push_back(i);
  Mat af(keep.size(), keep.size());
  Vec bf(keep.size());
  for (size_t r = 0; r < keep.size(); ++r) {
    bf(r) = b(keep[r]);
    for (size_t c = 0; c < keep.size(); ++c) af(r, c) = a(keep[r], keep[c]);
  }
  Eigen::LDLT<Mat> ldlt(af);
  const Vec d = ldlt.vectorD();
  if (ldlt.info() != Eigen::Success ||
      d.minCoeff() <= 1e-12 * std::max(d.maxCoeff(), 0.0))
    throw InputError("singular normal matrix");
  Vec xf = ldlt.solve(bf);
  if (!xf.allFinite()) throw InputError("singular normal matrix");
  Vec x = Vec::Zero(n);
  for (size_t r = 0; r < keep.size(); ++r) x(keep[r]) = xf(r);
  return x;
}

}  // namespace

StateEstimate gauss_newton(const MeasurementPlan& plan,
                           const MeasurementSet& set, const CVec& v0,
                           Index ref_bus, const SolverOptions& opts) {
  opts.validate();
  const Index n = plan.bus_count();
  const Vec w = real_weights(plan);
  // SCADA-only plans are invariant to a global phase shift; pin the
  // reference imaginary coordinate. PMU data observes the phase directly.
  const Index pinned = plan.has_pmu() ? -1 : n + ref_bus;

  StateEstimate est;
  Vec x = realify_vector(v0);
  double cost = wls_cost(plan, set.values, complexify_vector(x));
  est.cost_trace.push_back(cost);

  for (int it = 0; it < opts.max_iters; ++it) {
    const CVec v = complexify_vector(x);
    const Mat j = real_jacobian(plan, v);
    const Vec r = real_residual(plan, v, set.values);
    const Mat jw = j.transpose() * w.asDiagonal();
    Mat normal = jw * j;
    Vec rhs = jw * r;

    Vec dx;
    try {
      dx = pinned_solve(normal, rhs, pinned);
    } catch (const InputError&) {
      est.message =
          "unobservable/ill-conditioned at iterate " + std::to_string(it);
      est.iterations = it;
      est.converged = false;
      est.v_hat = v;
      est.residual = r;
      return est;
    }

    // Backtracking line search on the WLS cost.
    double mu = opts.step_init;
    const double slope = -2.0 * rhs.dot(dx);  // d/dmu of cost at mu=0
    double new_cost = cost;
    Vec x_new = x;
    while (true) {
      x_new = x + mu * dx;
      new_cost = wls_cost(plan, set.values, complexify_vector(x_new));
      if (new_cost <= cost + opts.sufficient_decrease * mu * slope) break;
      mu *= opts.step_shrink;
      if (mu < 1e-14) break;
    }
    if (mu < 1e-14 && new_cost > cost) {
      est.iterations = it;
      est.converged = false;
      est.message = "line search stalled";
      break;
    }
    x = x_new;
    cost = new_cost;
    est.cost_trace.push_back(cost);
    est.iterations = it + 1;
    if ((mu * dx).norm() < opts.tol) {
      est.converged = true;
      break;
    }
  }
  if (est.message.empty() && !est.converged)
    est.message = "iteration limit reached";

  est.v_hat = complexify_vector(x);
  est.residual = real_residual(plan, est.v_hat, set.values);
  if (est.converged && est.message.empty()) est.message = "ok";
  return est;
}

// --- feasible point pursuit --------------------------------------------------

namespace {

struct FppTerm {
  Mat h_plus;   // realified PSD part (zero for linear entries)
  Mat h_minus;  // realified NSD part
  Vec lin;      // affine row for linear entries (zero otherwise)
  double z = 0.0;
  double weight = 1.0;  // 1/sigma^2 on the slack
};

// Convex inner problem linearized at x0, solved by a log-barrier Newton
// method over (x, chi). Constraint slacks per measurement:
//   s1 = z + x0'H- x0 + chi - x'H+ x - 2 x0'H- x - lin'x
//   s2 = chi - z + x0'H+ x0 + x'H- x + 2 x0'H+ x + lin'x   (>= 0)
// plus chi >= 0.
struct FppInner {
  const std::vector<FppTerm>* terms;
  Index nx = 0;
  Vec x0;

  double slack1(const Vec& x, double chi, const FppTerm& t) const {
    return t.z + x0.dot(t.h_minus * x0) + chi - x.dot(t.h_plus * x) -
           2.0 * x0.dot(t.h_minus * x) - t.lin.dot(x);
  }
  double slack2(const Vec& x, double chi, const FppTerm& t) const {
    return chi - t.z - x0.dot(t.h_plus * x0) + x.dot(t.h_minus * x) +
           2.0 * x0.dot(t.h_plus * x) + t.lin.dot(x);
  }

  double phi(const Vec& x, const Vec& chi, double tau) const {
    double v = 0.0;
    for (size_t m = 0; m < terms->size(); ++m) {
      const auto& t = (*terms)[m];
      v += t.weight * chi(m) * chi(m);
      const double s1 = slack1(x, chi(m), t);
      const double s2 = slack2(x, chi(m), t);
      if (s1 <= 0.0 || s2 <= 0.0 || chi(m) <= 0.0)
        return std::numeric_limits<double>::infinity();
      v -= tau * (std::log(s1) + std::log(s2) + std::log(chi(m)));
    }
    return v;
  }
};

}  // namespace

StateEstimate fpp_solve(const MeasurementPlan& plan, const MeasurementSet& set,
                        const CVec& v0, Index ref_bus,
                        const SolverOptions& opts) {
  opts.validate();
  const Index n = plan.bus_count();
  const Index nx = 2 * n;
  (void)ref_bus;  // phase handled by post-hoc anchoring of the caller

  // Eigen-split of every realified measurement matrix. Eigenvalues within
  // [-1e-12, 1e-12] go to the PSD part.
  std::vector<FppTerm> terms;
  for (Index m = 0; m < plan.size(); ++m) {
    const auto& e = plan.entry(m);
    if (is_quadratic(e.kind)) {
      FppTerm t;
      const Mat hr = realify_hermitian(e.h);
      Eigen::SelfAdjointEigenSolver<Mat> es(hr);
      Mat plus = Mat::Zero(nx, nx), minus = Mat::Zero(nx, nx);
      for (Index i = 0; i < nx; ++i) {
        const double lam = es.eigenvalues()(i);
        Mat outer = es.eigenvectors().col(i) * es.eigenvectors().col(i).transpose();
        if (lam >= -1e-12)
          plus += lam * outer;
        else
          minus += lam * outer;
      }
      t.h_plus = plus;
      t.h_minus = minus;
      t.lin = Vec::Zero(nx);
      t.z = set.values(m).real();
      t.weight = 1.0 / (e.sigma * e.sigma);
      terms.push_back(t);
    } else {
      // Linear PMU entries contribute two affine rows; no split needed.
      FppTerm re, im;
      re.h_plus = im.h_plus = Mat::Zero(nx, nx);
      re.h_minus = im.h_minus = Mat::Zero(nx, nx);
      re.lin = Vec(nx);
      re.lin.head(n) = e.phi.real();
      re.lin.tail(n) = -e.phi.imag();
      im.lin = Vec(nx);
      im.lin.head(n) = e.phi.imag();
      im.lin.tail(n) = e.phi.real();
      re.z = set.values(m).real();
      im.z = set.values(m).imag();
      re.weight = im.weight = 2.0 / (e.sigma * e.sigma);
      terms.push_back(re);
      terms.push_back(im);
    }
  }

  StateEstimate est;
  Vec x = realify_vector(v0);
  double prev_cost = wls_cost(plan, set.values, complexify_vector(x));
  est.cost_trace.push_back(prev_cost);

  FppInner inner;
  inner.terms = &terms;
  inner.nx = nx;
  const Index m_count = static_cast<Index>(terms.size());

  const int max_outer = opts.max_iters;
  for (int outer = 0; outer < max_outer; ++outer) {
    inner.x0 = x;

    // Per-outer constants: the linearization-point products.
    std::vector<Vec> hm_x0(m_count), hp_x0(m_count);
    std::vector<double> c1(m_count), c2(m_count);
    for (Index m = 0; m < m_count; ++m) {
      const auto& t = terms[m];
      hm_x0[m] = t.h_minus * inner.x0;
      hp_x0[m] = t.h_plus * inner.x0;
      c1[m] = t.z + inner.x0.dot(hm_x0[m]);   // slack1 constant
      c2[m] = -t.z - inner.x0.dot(hp_x0[m]);  // slack2 constant
    }
    // Cached slack evaluation given per-term products of the trial point.
    auto slacks = [&](const Vec& xv, const Vec& cv, std::vector<Vec>& hp_x,
                      std::vector<Vec>& hm_x, Vec& s1, Vec& s2) {
      for (Index m = 0; m < m_count; ++m) {
        const auto& t = terms[m];
        hp_x[m] = t.h_plus * xv;
        hm_x[m] = t.h_minus * xv;
        const double lin = t.lin.size() ? t.lin.dot(xv) : 0.0;
        s1(m) = c1[m] + cv(m) - xv.dot(hp_x[m]) - 2.0 * hm_x0[m].dot(xv) - lin;
        s2(m) = cv(m) + c2[m] + xv.dot(hm_x[m]) + 2.0 * hp_x0[m].dot(xv) + lin;
      }
    };
    auto phi_of = [&](const Vec& xv, const Vec& cv, double tau_val,
                      std::vector<Vec>& hp_x, std::vector<Vec>& hm_x, Vec& s1,
                      Vec& s2) {
      slacks(xv, cv, hp_x, hm_x, s1, s2);
      double v = 0.0;
      for (Index m = 0; m < m_count; ++m) {
        v += terms[m].weight * cv(m) * cv(m);
        if (s1(m) <= 0.0 || s2(m) <= 0.0 || cv(m) <= 0.0)
          return std::numeric_limits<double>::infinity();
        v -= tau_val * (std::log(s1(m)) + std::log(s2(m)) + std::log(cv(m)));
      }
      return v;
    };

    // Strictly feasible start: x = x0 with chi above each violation.
    Vec xi = x;
    Vec chi(m_count), s1(m_count), s2(m_count);
    std::vector<Vec> hp_x(m_count), hm_x(m_count);
    {
      slacks(xi, Vec::Zero(m_count), hp_x, hm_x, s1, s2);
      for (Index m = 0; m < m_count; ++m)
        chi(m) = std::max({-s1(m), -s2(m), 0.0}) + 1.0;
    }

    double tau = 1.0;
    const double tau_min =
        opts.barrier_gap / (3.0 * static_cast<double>(m_count));
    while (true) {
      const double stage_tol = tau > tau_min * (1.0 + 1e-12) ? 0.05 * tau : 0.0;
      // Newton iterations at fixed tau over (x, chi).
      for (int it = 0; it < 50; ++it) {
        const double phi0 = phi_of(xi, chi, tau, hp_x, hm_x, s1, s2);
        Vec grad = Vec::Zero(nx + m_count);
        Mat hess = Mat::Zero(nx + m_count, nx + m_count);
        for (Index m = 0; m < m_count; ++m) {
          const auto& t = terms[m];
          Vec g1 = -2.0 * hp_x[m] - 2.0 * hm_x0[m] - t.lin;
          Vec g2 = 2.0 * hm_x[m] + 2.0 * hp_x0[m] + t.lin;
          grad(nx + m) += 2.0 * t.weight * chi(m);
          hess(nx + m, nx + m) += 2.0 * t.weight;
          grad.head(nx) += -tau / s1(m) * g1 - tau / s2(m) * g2;
          grad(nx + m) += -tau / s1(m) - tau / s2(m) - tau / chi(m);
          const double w1 = tau / (s1(m) * s1(m)), w2 = tau / (s2(m) * s2(m));
          hess.topLeftCorner(nx, nx).selfadjointView<Eigen::Lower>().rankUpdate(
              g1, w1);
          hess.topLeftCorner(nx, nx).selfadjointView<Eigen::Lower>().rankUpdate(
              g2, w2);
          hess.topLeftCorner(nx, nx).triangularView<Eigen::Lower>() +=
              (2.0 * tau / s1(m)) * t.h_plus - (2.0 * tau / s2(m)) * t.h_minus;
          hess.block(0, nx + m, nx, 1) += w1 * g1 + w2 * g2;
          hess(nx + m, nx + m) +=
              w1 + w2 + tau / (chi(m) * chi(m));
        }
        hess.topLeftCorner(nx, nx) =
            hess.topLeftCorner(nx, nx).selfadjointView<Eigen::Lower>();
        hess.block(nx, 0, m_count, nx) =
            hess.block(0, nx, nx, m_count).transpose();
        Eigen::LDLT<Mat> ldlt(hess);
        Vec step = ldlt.solve(-grad);
        if (!step.allFinite()) break;
        const double decrement = -grad.dot(step);
        if (decrement < std::max(1e-12 * (1.0 + std::abs(phi0)), stage_tol))
          break;
        double alpha = 1.0;
        int bt = 0;
        while (bt < 60) {
          Vec xn = xi + alpha * step.head(nx);
          Vec cn = chi + alpha * step.tail(m_count);
          if (phi_of(xn, cn, tau, hp_x, hm_x, s1, s2) <=
              phi0 - 1e-4 * alpha * decrement) {
            xi = xn;
            chi = cn;
            break;
          }
          alpha *= 0.5;
          ++bt;
        }
        if (bt >= 60) break;
        // hp_x, hm_x, s1, s2 now hold the accepted point's products.
      }
      if (tau <= tau_min) break;
      tau = std::max(tau * 0.1, tau_min);
    }

    x = xi;
    const double cost = wls_cost(plan, set.values, complexify_vector(x));
    est.cost_trace.push_back(cost);
    est.iterations = outer + 1;
    if (std::abs(prev_cost - cost) < opts.tol * (1.0 + std::abs(prev_cost))) {
      est.converged = true;
      prev_cost = cost;
      break;
    }
    prev_cost = cost;
  }
  if (!est.converged) est.message = "outer iteration limit reached";

  est.v_hat = complexify_vector(x);
  est.residual = real_residual(plan, est.v_hat, set.values);
  if (est.message.empty()) est.message = "ok";
  return est;
}

// --- PMU fusion --------------------------------------------------------------

StateEstimate fuse_pmu(const CVec& prior_mean, const CMat& prior_cov,
                       const MeasurementPlan& pmu_plan,
                       const MeasurementSet& pmu_set, FusionMode mode,
                       Index ref_bus, const SolverOptions& opts,
                       const MeasurementPlan* scada_plan,
                       const MeasurementSet* scada_set) {
  const Index n = prior_mean.size();
  StateEstimate est;

  if (mode == FusionMode::Map) {
    Eigen::LLT<CMat> llt(prior_cov);
    if (llt.info() != Eigen::Success)
      throw InputError("prior covariance must be positive definite");
    CMat prec = llt.solve(CMat::Identity(n, n));
    CMat normal = prec;
    CVec rhs = prec * prior_mean;
    for (Index m = 0; m < pmu_plan.size(); ++m) {
      const auto& e = pmu_plan.entry(m);
      if (is_quadratic(e.kind))
        throw InputError("fuse_pmu MAP expects a PMU-only plan");
      const double w = 1.0 / (e.sigma * e.sigma);
      normal += w * e.phi.conjugate() * e.phi.transpose();
      rhs += w * e.phi.conjugate() * pmu_set.values(m);
    }
    est.v_hat = normal.ldlt().solve(rhs);
    est.converged = true;
    est.message = "ok";
    est.iterations = 1;
    est.residual = real_residual(pmu_plan, est.v_hat, pmu_set.values);
    double c = 0.0;
    const CVec d = est.v_hat - prior_mean;
    c += d.dot(prec * d).real();
    c += wls_cost(pmu_plan, pmu_set.values, est.v_hat);
    est.cost_trace.push_back(c);
    return est;
  }

  // Augmented SDR: lifted variable U = [[V, v],[v', 1]] realified, with the
  // corner pinned by one equality. Quadratic SCADA terms act on the V block,
  // PMU terms are linear in U.
  if (scada_plan == nullptr || scada_set == nullptr)
    throw InputError("augmented SDR fusion needs the SCADA plan and data");
  const Index na = n + 1;       // complex augmented dimension
  const Index nr = 2 * na;      // realified
  PsdProgram prog;
  prog.n = nr;

  auto lift_complex = [&](const CMat& hc) {
    return SymTriplets::from_dense(realify_hermitian(hc), 1e-14);
  };

  for (Index m = 0; m < scada_plan->size(); ++m) {
    const auto& e = scada_plan->entry(m);
    CMat ha = CMat::Zero(na, na);
    ha.topLeftCorner(n, n) = e.h;
    PsdTerm t;
    t.a = lift_complex(ha);
    t.b = scada_set->values(m).real();
    t.weight = 1.0 / (e.sigma * e.sigma);
    prog.terms.push_back(t);
  }
  // PMU log-likelihood: trace(phi* phi' V) - 2 Re{zeta* phi' v} + |zeta|^2,
  // a linear function of U.
  Mat linear = Mat::Zero(nr, nr);
  for (Index m = 0; m < pmu_plan.size(); ++m) {
    const auto& e = pmu_plan.entry(m);
    const double w = 1.0 / (e.sigma * e.sigma);
    CMat ha = CMat::Zero(na, na);
    ha.topLeftCorner(n, n) = e.phi.conjugate() * e.phi.transpose();
    ha.block(0, n, n, 1) = -e.phi.conjugate() * pmu_set.values(m);
    ha.block(n, 0, 1, n) = ha.block(0, n, n, 1).adjoint();
    linear += w * realify_hermitian(ha);
  }
  // Prior term (v - m)' P^{-1} (v - m), also linear in U after expansion.
  {
    Eigen::LLT<CMat> llt(prior_cov);
    if (llt.info() != Eigen::Success)
      throw InputError("prior covariance must be positive definite");
    CMat prec = llt.solve(CMat::Identity(n, n));
    CMat ha = CMat::Zero(na, na);
    ha.topLeftCorner(n, n) = prec;
    ha.block(0, n, n, 1) = -prec * prior_mean;
    ha.block(n, 0, 1, n) = ha.block(0, n, n, 1).adjoint();
    linear += realify_hermitian(ha);
  }
  prog.linear_cost = linear;

  PsdEquality corner;
  corner.e = Mat::Zero(nr, nr);
  corner.e(na - 1, na - 1) = 1.0;
  corner.e(nr - 1, nr - 1) = 1.0;
  corner.c = 1.0;
  prog.equalities.push_back(corner);

  PsdOptions popts;
  popts.gap_tol = opts.barrier_gap;
  PsdSolution sol = solve_psd(prog, popts);

  (void)ref_bus;  // PMU terms observe absolute phase; no anchoring needed
  const CMat u = hermitian_from_lifted(sol.x);
  est.v_hat = u.block(0, n, n, 1);
  est.v_lifted = u.topLeftCorner(n, n);
  Eigen::SelfAdjointEigenSolver<CMat> es(est.v_lifted);
  est.eig_top = es.eigenvalues()(n - 1);
  est.eig_second = n >= 2 ? es.eigenvalues()(n - 2) : 0.0;
  est.converged = sol.converged;
  est.message = sol.message;
  est.iterations = sol.newton_steps;
  est.cost_trace.push_back(sol.objective);
  est.residual = real_residual(*scada_plan, est.v_hat, scada_set->values);
  return est;
}

}  // namespace gridstate

#include "gridstate/tracking.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "gridstate/estimators.hpp"
#include "gridstate/psd_solver.hpp"

namespace gridstate {

void DynamicsModel::validate() const {
  if (q.size() > 0) {
    Eigen::SelfAdjointEigenSolver<Mat> es(q, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-10)
      throw InputError("process covariance must be PSD");
  }
}

DynamicsModel DynamicsModel::identity(Index n, double q_scale) {
  DynamicsModel d;
  d.f = CMat::Identity(n, n);
  d.g = CVec::Zero(n);
  d.q = q_scale * Mat::Identity(2 * n, 2 * n);
  return d;
}

HoltSmoother::HoltSmoother(double alpha, double beta)
    : alpha_(alpha), beta_(beta) {
  if (!(alpha > 0.0 && alpha < 1.0 + 1e-12) || !(beta >= 0.0 && beta < 1.0 + 1e-12))
    throw InputError("holt: alpha, beta must lie in (0,1)");
}

void HoltSmoother::update(const CVec& estimate) {
  if (count_ == 0) {
    level_ = estimate;
    trend_ = CVec::Zero(estimate.size());
  } else {
    prev_level_ = level_;
    prev_trend_ = trend_;
    const CVec base = level_ + trend_;
    level_ = alpha_ * estimate + (1.0 - alpha_) * base;
    trend_ = beta_ * (level_ - prev_level_) + (1.0 - beta_) * trend_;
  }
  ++count_;
}

CVec HoltSmoother::predict() const {
  if (count_ == 0) throw InputError("holt: no history");
  return level_ + trend_;
}

DynamicsModel HoltSmoother::to_dynamics(Index n, double q_scale) const {
  if (count_ < 2) throw InputError("holt: need at least two history points");
  DynamicsModel d;
  const double f_scalar = alpha_ * (1.0 + beta_);
  d.f = f_scalar * CMat::Identity(n, n);
  // g makes F v_t + g equal the post-update prediction a_t + b_t:
  // a_t + b_t = alpha(1+beta) v_t + (1+beta)(1-alpha)(a_{t-1}+b_{t-1})
  //             - beta a_{t-1} + (1-beta) b_{t-1}.
  d.g = (1.0 + beta_) * (1.0 - alpha_) * (prev_level_ + prev_trend_) -
        beta_ * prev_level_ + (1.0 - beta_) * prev_trend_;
  d.q = q_scale * Mat::Identity(2 * n, 2 * n);
  return d;
}

DynamicsModel holt_identify(const std::vector<CVec>& history, double alpha,
                            double beta, double q_scale) {
  if (history.size() < 2) throw InputError("holt: need at least two points");
  HoltSmoother smoother(alpha, beta);
  for (const auto& v : history) smoother.update(v);
  return smoother.to_dynamics(history.front().size(), q_scale);
}

CMat project_psd(const CMat& m) {
  CMat sym = 0.5 * (m + m.adjoint());
  Eigen::SelfAdjointEigenSolver<CMat> es(sym);
  CMat out = CMat::Zero(m.rows(), m.cols());
  for (Index i = 0; i < m.rows(); ++i) {
    const double lam = es.eigenvalues()(i);
    if (lam > 0.0)
      out += lam * es.eigenvectors().col(i) * es.eigenvectors().col(i).adjoint();
  }
  return out;
}

OnlineTracker::OnlineTracker(Index n_bus)
    : v_(CMat::Identity(n_bus, n_bus)) {}
OnlineTracker::OnlineTracker(Index n_bus, const CMat& v0) : v_(v0) {
  if (v0.rows() != n_bus) throw InputError("online tracker: bad start size");
}

void OnlineTracker::step(const MeasurementPlan& plan, const CVec& z,
                         double step_scale) {
  ++t_;
  losses_.push_back(lifted_cost(plan, z, v_));
  seen_.emplace_back(plan, z);

  double c = step_scale;
  if (c <= 0.0) {
    // Inverse curvature bound of the round loss: the Hessian spectral norm
    // is at most sum_m 2 w_m ||H_m||_F^2, which keeps the first step stable.
    double curv = 0.0;
    for (Index m = 0; m < plan.size(); ++m) {
      const auto& e = plan.entry(m);
      curv += 2.0 * e.h.squaredNorm() / (e.sigma * e.sigma);
    }
    c = 1.0 / std::max(1e-12, curv);
  }
  const double mu_t = c / std::sqrt(static_cast<double>(t_));
  const CMat grad = lifted_cost_gradient(plan, z, v_);
  v_ = project_psd(v_ - mu_t * grad);
}

CVec OnlineTracker::state_estimate(Index ref_bus) const {
  return rank1_recover(v_, RankOneMethod::Eig, ref_bus);
}

OnlineTracker::Regret OnlineTracker::regret_report(double barrier_gap) const {
  if (seen_.empty()) throw InputError("regret: no completed rounds");
  Regret reg;

  // Hindsight action: minimize the summed loss over the PSD cone.
  PsdProgram prog;
  prog.n = 2 * v_.rows();
  for (const auto& [plan, z] : seen_) {
    PsdProgram part = lifted_program(plan, z);
    for (auto& t : part.terms) prog.terms.push_back(std::move(t));
  }
  PsdOptions popts;
  popts.gap_tol = barrier_gap;
  PsdSolution sol = solve_psd(prog, popts);
  reg.best_action = hermitian_from_lifted(sol.x);

  reg.best_fixed_loss = 0.0;
  for (const auto& [plan, z] : seen_)
    reg.best_fixed_loss += lifted_cost(plan, z, reg.best_action);
  double incurred = 0.0;
  for (double l : losses_) incurred += l;
  reg.value = incurred - reg.best_fixed_loss;
  return reg;
}

EkfState ekf_init(const CVec& v0, double p0_scale) {
  return EkfState{v0, p0_scale * Mat::Identity(2 * v0.size(), 2 * v0.size())};
}

EkfState ekf_step(const EkfState& state, const DynamicsModel& dyn,
                  const MeasurementPlan& plan, const CVec& z) {
  dyn.validate();
  const Index n = state.v.size();
  const Mat f = realify_linear(dyn.f);

  // Predict.
  const CVec v_pred = dyn.f * state.v + dyn.g;
  Mat p_pred = f * state.p * f.transpose();
  if (dyn.q.size() > 0) p_pred += dyn.q;
  p_pred = 0.5 * (p_pred + p_pred.transpose());

  // Correct with the Jacobian at the predictor.
  const Mat j = real_jacobian(plan, v_pred);
  const Vec w = real_weights(plan);
  const Mat r_cov = w.cwiseInverse().asDiagonal();
  Mat innov_cov = j * p_pred * j.transpose() + Mat(r_cov);
  Eigen::LDLT<Mat> ldlt(innov_cov);
  if (ldlt.info() != Eigen::Success)
    throw InputError("ekf: innovation covariance is singular");
  const Mat gain = p_pred * j.transpose() * ldlt.solve(Mat::Identity(
                       innov_cov.rows(), innov_cov.cols()));

  const Vec innovation = real_residual(plan, v_pred, z);
  const Vec x_new = realify_vector(v_pred) + gain * innovation;

  // Joseph-stabilized covariance update.
  const Mat ikj = Mat::Identity(2 * n, 2 * n) - gain * j;
  Mat p_new = ikj * p_pred * ikj.transpose() + gain * r_cov * gain.transpose();
  p_new = 0.5 * (p_new + p_new.transpose());

  return EkfState{complexify_vector(x_new), p_new};
}

MheResult mhe_solve(const std::vector<MheWindowStep>& window,
                    const CVec& predictor, double lambda, MheMode mode,
                    Index ref_bus, const SolverOptions& opts) {
  if (window.empty()) throw InputError("mhe: empty window");
  const Index n = predictor.size();
  const Index steps = static_cast<Index>(window.size());

  // Transition products T_s, with T_0 = I.
  std::vector<CMat> t_prod(steps);
  t_prod[0] = CMat::Identity(n, n);
  for (Index s = 1; s < steps; ++s) t_prod[s] = window[s - 1].f * t_prod[s - 1];

  bool any_pmu = false;
  for (const auto& step : window)
    if (step.plan->has_pmu()) any_pmu = true;

  MheResult res;
  if (mode == MheMode::GaussNewton) {
    // Damped Gauss-Newton on the composite residual stack.
    Vec x = realify_vector(predictor);
    const Vec x_prior = realify_vector(predictor);
    const Index pinned = any_pmu ? -1 : n + ref_bus;

    auto cost_at = [&](const Vec& xx) {
      const CVec v = complexify_vector(xx);
      double c = lambda * (xx - x_prior).squaredNorm();
      for (Index s = 0; s < steps; ++s)
        c += wls_cost(*window[s].plan, window[s].z, t_prod[s] * v);
      return c;
    };

    double cost = cost_at(x);
    for (int it = 0; it < opts.max_iters; ++it) {
      const CVec v = complexify_vector(x);
      Mat normal = 2.0 * lambda * Mat::Identity(2 * n, 2 * n);
      Vec rhs = 2.0 * lambda * (x_prior - x);
      for (Index s = 0; s < steps; ++s) {
        const Mat ts = realify_linear(t_prod[s]);
        const Mat j = real_jacobian(*window[s].plan, t_prod[s] * v) * ts;
        const Vec r = real_residual(*window[s].plan, t_prod[s] * v, window[s].z);
        const Vec w = real_weights(*window[s].plan);
        normal += 2.0 * j.transpose() * w.asDiagonal() * j;
        rhs += 2.0 * j.transpose() * (w.asDiagonal() * r);
      }
      Vec dx;
      if (lambda > 0.0 || pinned < 0) {
        dx = normal.ldlt().solve(rhs);
      } else {
        // No prior: pin the reference imaginary coordinate.
        std::vector<Index> keep;
        for (Index i = 0; i < 2 * n; ++i)
          if (i != pinned) keep.push_back(i);
        Mat nf(keep.size(), keep.size());
        Vec rf(keep.size());
        for (size_t a = 0; a < keep.size(); ++a) {
          rf(a) = rhs(keep[a]);
          for (size_t b = 0; b < keep.size(); ++b)
            nf(a, b) = normal(keep[a], keep[b]);
        }
        Vec df = nf.ldlt().solve(rf);
        dx = Vec::Zero(2 * n);
        for (size_t a = 0; a < keep.size(); ++a) dx(keep[a]) = df(a);
      }

      double mu = 1.0;
      double new_cost = cost;
      Vec x_new = x;
      const double slope = -rhs.dot(dx);
      while (mu >= 1e-14) {
        x_new = x + mu * dx;
        new_cost = cost_at(x_new);
        if (new_cost <= cost + 1e-4 * mu * slope) break;
        mu *= 0.5;
      }
      if (new_cost > cost) break;
      x = x_new;
      const double drop = cost - new_cost;
      cost = new_cost;
      if ((mu * dx).norm() < opts.tol || drop < 1e-14 * (1.0 + cost)) break;
    }
    res.smoothed.resize(steps);
    res.smoothed[0] = complexify_vector(x);
    res.converged = true;
    res.cost = cost;
  } else {
    // Lifted window fit on the augmented block [[V, v],[v', 1]].
    const Index na = n + 1;
    const Index nr = 2 * na;
    PsdProgram prog;
    prog.n = nr;
    for (Index s = 0; s < steps; ++s) {
      const auto& plan = *window[s].plan;
      for (Index m = 0; m < plan.size(); ++m) {
        const auto& e = plan.entry(m);
        if (!is_quadratic(e.kind))
          throw InputError("mhe sdr mode expects quadratic plans");
        CMat ha = CMat::Zero(na, na);
        ha.topLeftCorner(n, n) =
            t_prod[s].adjoint() * e.h * t_prod[s];
        PsdTerm t;
        t.a = SymTriplets::from_dense(realify_hermitian(ha), 1e-14);
        t.b = window[s].z(m).real();
        t.weight = 1.0 / (e.sigma * e.sigma);
        prog.terms.push_back(std::move(t));
      }
    }
    // Prior: lambda (tr V - 2 Re{pred' v} + const), linear in the block.
    CMat prior = CMat::Zero(na, na);
    prior.topLeftCorner(n, n) = CMat::Identity(n, n);
    prior.block(0, n, n, 1) = -predictor;
    prior.block(n, 0, 1, n) = -predictor.adjoint();
    prog.linear_cost = lambda * realify_hermitian(prior);

    PsdEquality corner;
    corner.e = Mat::Zero(nr, nr);
    corner.e(na - 1, na - 1) = 1.0;
    corner.e(nr - 1, nr - 1) = 1.0;
    corner.c = 1.0;
    prog.equalities.push_back(corner);

    PsdOptions popts;
    popts.gap_tol = opts.barrier_gap;
    PsdSolution sol = solve_psd(prog, popts);
    const CMat u = hermitian_from_lifted(sol.x);
    CVec v0 = u.block(0, n, n, 1);
    if (lambda <= 0.0) v0 = anchor_phase(v0, ref_bus);
    res.smoothed.resize(steps);
    res.smoothed[0] = v0;
    res.converged = sol.converged;
    res.cost = sol.objective;
  }

  // Noise-free forward propagation fills the rest of the window.
  for (Index s = 1; s < steps; ++s)
    res.smoothed[s] = window[s - 1].f * res.smoothed[s - 1];
  return res;
}

}  // namespace gridstate

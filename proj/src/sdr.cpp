#include "gridstate/sdr.hpp"

#include <Eigen/Eigenvalues>

#include "gridstate/rng.hpp"

namespace gridstate {

double lifted_cost(const MeasurementPlan& plan, const CVec& z, const CMat& v) {
  double c = 0.0;
  for (Index m = 0; m < plan.size(); ++m) {
    const auto& e = plan.entry(m);
    if (!is_quadratic(e.kind))
      throw InputError("lifted cost needs a quadratic-kind plan");
    const double r = z(m).real() - (e.h * v).trace().real();
    c += r * r / (e.sigma * e.sigma);
  }
  return c;
}

CMat lifted_cost_gradient(const MeasurementPlan& plan, const CVec& z,
                          const CMat& v) {
  CMat g = CMat::Zero(v.rows(), v.cols());
  for (Index m = 0; m < plan.size(); ++m) {
    const auto& e = plan.entry(m);
    const double r = (e.h * v).trace().real() - z(m).real();
    g += (2.0 * r / (e.sigma * e.sigma)) * e.h;
  }
  return g;
}

PsdProgram lifted_program(const MeasurementPlan& plan, const CVec& z) {
  PsdProgram prog;
  prog.n = 2 * plan.bus_count();
  for (Index m = 0; m < plan.size(); ++m) {
    const auto& e = plan.entry(m);
    if (!is_quadratic(e.kind))
      throw InputError("SDR paths expect quadratic plans; use fuse_pmu");
    PsdTerm t;
    t.a = SymTriplets::from_dense(realify_hermitian(e.h), 1e-14);
    t.b = z(m).real();
    t.weight = 1.0 / (e.sigma * e.sigma);
    prog.terms.push_back(t);
  }
  return prog;
}

void finish_lifted_estimate(StateEstimate& est, const Mat& w,
                            const MeasurementPlan& plan, const CVec& z,
                            Index ref_bus) {
  est.v_lifted = hermitian_from_lifted(w);
  const Index n = est.v_lifted.rows();
  Eigen::SelfAdjointEigenSolver<CMat> es(est.v_lifted);
  est.eig_top = es.eigenvalues()(n - 1);
  est.eig_second = n >= 2 ? es.eigenvalues()(n - 2) : 0.0;
  est.v_hat = rank1_recover(est.v_lifted, RankOneMethod::Eig, ref_bus);
  est.residual = real_residual(plan, est.v_hat, z);
  // Trace layout for lifted paths: relaxed objective first, then the cost of
  // the recovered state, so final_cost always refers to v_hat.
  est.cost_trace.push_back(wls_cost(plan, z, est.v_hat));
}

StateEstimate sdr_solve(const MeasurementPlan& plan, const MeasurementSet& set,
                        Index ref_bus, const SolverOptions& opts) {
  PsdProgram prog = lifted_program(plan, set.values);
  PsdOptions popts;
  popts.gap_tol = opts.barrier_gap;
  popts.max_cg = opts.barrier_max_cg;
  PsdSolution sol = solve_psd(prog, popts);

  StateEstimate est;
  est.converged = sol.converged;
  est.message = sol.message;
  est.iterations = sol.newton_steps;
  est.cost_trace.push_back(sol.objective);
  finish_lifted_estimate(est, sol.x, plan, set.values, ref_bus);
  return est;
}

CVec rank1_recover(const CMat& v_hat, RankOneMethod method, Index ref_bus,
                   std::uint64_t seed, const MeasurementPlan* plan,
                   const CVec* z, int samples) {
  const Index n = v_hat.rows();
  Eigen::SelfAdjointEigenSolver<CMat> es(v_hat);
  if (es.eigenvalues().minCoeff() < -1e-9 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff()))
    throw InputError("rank1_recover: input is not PSD");

  if (method == RankOneMethod::Eig) {
    Index top = n - 1;
    // Deterministic tie-break on (near) equal leading eigenvalues: pick the
    // eigenvector with the largest magnitude at the reference bus.
    if (n >= 2 &&
        es.eigenvalues()(n - 1) - es.eigenvalues()(n - 2) < 1e-12) {
      double best = -1.0;
      for (Index i = 0; i < n; ++i) {
        if (es.eigenvalues()(n - 1) - es.eigenvalues()(i) >= 1e-12) continue;
        const double mag = std::abs(es.eigenvectors()(ref_bus, i));
        if (mag > best) {
          best = mag;
          top = i;
        }
      }
    }
    const double lam = std::max(es.eigenvalues()(top), 0.0);
    CVec v = std::sqrt(lam) * es.eigenvectors().col(top);
    return anchor_phase(v, ref_bus);
  }

  if (plan == nullptr || z == nullptr)
    throw InputError("randomized recovery needs the plan and data");
  // Draw circular Gaussian samples with covariance V, keep the best fit.
  CMat half = CMat::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    const double lam = std::max(es.eigenvalues()(i), 0.0);
    half += std::sqrt(lam) * es.eigenvectors().col(i) *
            es.eigenvectors().col(i).adjoint();
  }
  Rng rng(seed);
  CVec best;
  double best_cost = std::numeric_limits<double>::infinity();
  for (int s = 0; s < samples; ++s) {
    CVec draw = half * rng.circular_gaussian_vector(n, 1.0);
    const double c = wls_cost(*plan, *z, draw);
    if (c < best_cost) {
      best_cost = c;
      best = draw;
    }
  }
  return anchor_phase(best, ref_bus);
}

StateEstimate penalized_sdr(const MeasurementPlan& plan,
                            const MeasurementSet& set, const CMat& h0,
                            double mu, LossKind loss, Index ref_bus,
                            const SolverOptions& opts) {
  if (mu < 0.0) throw InputError("penalized_sdr: mu must be nonnegative");
  StateEstimate est;
  const Index n = plan.bus_count();

  if (mu == 0.0) {
    // trace(H0 V) over the PSD cone alone is minimized at V = 0.
    est.v_lifted = CMat::Zero(n, n);
    est.v_hat = CVec::Zero(n);
    est.residual = real_residual(plan, est.v_hat, set.values);
    est.converged = true;
    est.message = "ok (penalty-only minimum)";
    est.cost_trace.push_back(0.0);
    return est;
  }

  PsdProgram prog;
  prog.n = 2 * n;
  prog.linear_cost = realify_hermitian(h0);
  for (Index m = 0; m < plan.size(); ++m) {
    const auto& e = plan.entry(m);
    if (!is_quadratic(e.kind))
      throw InputError("penalized_sdr expects a quadratic plan");
    PsdTerm t;
    t.a = SymTriplets::from_dense(realify_hermitian(e.h), 1e-14);
    t.b = set.values(m).real();
    t.weight = mu;
    t.loss = loss;
    prog.terms.push_back(t);
  }
  PsdOptions popts;
  popts.gap_tol = opts.barrier_gap;
  popts.max_cg = opts.barrier_max_cg;
  PsdSolution sol = solve_psd(prog, popts);

  est.converged = sol.converged;
  est.message = sol.message;
  est.iterations = sol.newton_steps;
  est.cost_trace.push_back(sol.objective);
  finish_lifted_estimate(est, sol.x, plan, set.values, ref_bus);
  return est;
}

}  // namespace gridstate

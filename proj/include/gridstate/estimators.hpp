#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gridstate/measurement.hpp"
#include "gridstate/types.hpp"

namespace gridstate {

struct SolverOptions {
  int max_iters = 100;
  double tol = 1e-10;          // state-update norm
  double step_init = 1.0;      // backtracking line search
  double step_shrink = 0.5;
  double sufficient_decrease = 1e-4;
  double barrier_gap = 1e-7;   // interior-point duality-gap target
  int barrier_max_cg = 2000;
  std::uint64_t seed = 0;

  void validate() const;
};

struct StateEstimate {
  CVec v_hat;
  std::vector<double> cost_trace;
  Vec residual;  // stacked real residuals z - h(v_hat)
  int iterations = 0;
  bool converged = false;
  std::string message;

  // SDR paths only.
  CMat v_lifted;          // empty otherwise
  double eig_top = 0.0;   // two leading eigenvalues of the lifted matrix
  double eig_second = 0.0;
  double rank_ratio() const { return eig_top > 0 ? eig_second / eig_top : 0; }

  double final_cost() const {
    return cost_trace.empty() ? 0.0 : cost_trace.back();
  }
};

/// Damped Gauss-Newton on the expanded real coordinates with the reference
/// bus imaginary part pinned. Backtracking keeps the WLS cost nonincreasing.
StateEstimate gauss_newton(const MeasurementPlan& plan,
                           const MeasurementSet& set, const CVec& v0,
                           Index ref_bus, const SolverOptions& opts = {});

CVec flat_start(Index n_bus);

/// Feasible point pursuit: successive convexification of the QCQP form, each
/// round solved by a log-barrier Newton method over (state, slack).
StateEstimate fpp_solve(const MeasurementPlan& plan, const MeasurementSet& set,
                        const CVec& v0, Index ref_bus,
                        const SolverOptions& opts = {});

enum class FusionMode { Map, AugmentedSdr };

/// SCADA/PMU fusion. Map: closed-form Gaussian fusion of a prior estimate
/// with PMU data. AugmentedSdr: joint lifted program with the [V v; v' 1]
/// block constraint.
StateEstimate fuse_pmu(const CVec& prior_mean, const CMat& prior_cov,
                       const MeasurementPlan& pmu_plan,
                       const MeasurementSet& pmu_set, FusionMode mode,
                       Index ref_bus, const SolverOptions& opts = {},
                       const MeasurementPlan* scada_plan = nullptr,
                       const MeasurementSet* scada_set = nullptr);

}  // namespace gridstate

#pragma once

#include "gridstate/estimators.hpp"
#include "gridstate/measurement.hpp"
#include "gridstate/psd_solver.hpp"
#include "gridstate/types.hpp"

namespace gridstate {

/// Weighted lifted least-squares cost sum_m w_m (z_m - trace(H_m V))^2 over
/// a complex Hermitian V, and its gradient sum_m 2 w_m (trace - z) H_m.
double lifted_cost(const MeasurementPlan& plan, const CVec& z, const CMat& v);
CMat lifted_cost_gradient(const MeasurementPlan& plan, const CVec& z,
                          const CMat& v);

/// Semidefinite relaxation of the WLS fit, solved by the log-barrier Newton
/// method on the realified lifted variable. Quadratic-kind plans only.
StateEstimate sdr_solve(const MeasurementPlan& plan, const MeasurementSet& set,
                        Index ref_bus, const SolverOptions& opts = {});

enum class RankOneMethod { Eig, Randomization };

/// Recover a state from a (near) PSD lifted matrix. Eig: scaled dominant
/// eigenvector; Randomization: best of `samples` Gaussian draws under the
/// given plan's WLS cost. Result is phase-anchored at ref_bus.
CVec rank1_recover(const CMat& v_hat, RankOneMethod method, Index ref_bus,
                   std::uint64_t seed = 0, const MeasurementPlan* plan = nullptr,
                   const CVec* z = nullptr, int samples = 100);

/// trace(H0 V) + mu * sum_m f_m(z_m - trace(H_m V)) over PSD V.
StateEstimate penalized_sdr(const MeasurementPlan& plan,
                            const MeasurementSet& set, const CMat& h0,
                            double mu, LossKind loss, Index ref_bus,
                            const SolverOptions& opts = {});

/// Shared helper: build the realified lifted program for a quadratic plan.
PsdProgram lifted_program(const MeasurementPlan& plan, const CVec& z);

/// Fill lifted-solution diagnostics (eigenvalues, recovered state).
void finish_lifted_estimate(StateEstimate& est, const Mat& w,
                            const MeasurementPlan& plan, const CVec& z,
                            Index ref_bus);

}  // namespace gridstate

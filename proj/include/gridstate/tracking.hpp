#pragma once

#include <deque>
#include <vector>

#include "gridstate/measurement.hpp"
#include "gridstate/sdr.hpp"
#include "gridstate/types.hpp"

namespace gridstate {

/// v_{t+1} = F v_t + g + w_t with process covariance Q (realified coords).
struct DynamicsModel {
  CMat f;
  CVec g;
  Mat q;  // 2N x 2N, PSD

  void validate() const;
  static DynamicsModel identity(Index n, double q_scale = 0.0);
};

/// Double exponential smoothing over an estimate history. The fitted
/// one-step prediction is level + trend.
class HoltSmoother {
 public:
  HoltSmoother(double alpha, double beta);
  void update(const CVec& estimate);
  Index history() const { return count_; }
  CVec predict() const;  // a_t + b_t
  /// Transition model reproducing the prediction: F = alpha(1+beta) I and
  /// g chosen so F v_t + g = a_t + b_t given the pre-update smoother state.
  DynamicsModel to_dynamics(Index n, double q_scale) const;

 private:
  double alpha_, beta_;
  CVec level_, trend_;
  CVec prev_level_, prev_trend_;  // state before the latest update
  Index count_ = 0;
};

DynamicsModel holt_identify(const std::vector<CVec>& history, double alpha,
                            double beta, double q_scale = 0.0);

/// Nearest (Frobenius) PSD matrix: eigendecompose and clip negatives.
CMat project_psd(const CMat& m);

/// Online lifted tracker: projected gradient on the PSD cone with a
/// per-round regret ledger.
class OnlineTracker {
 public:
  explicit OnlineTracker(Index n_bus);
  OnlineTracker(Index n_bus, const CMat& v0);

  /// One round: incur the loss of the current action on (plan, z), then
  /// take the projected gradient step. step_scale <= 0 uses
  /// 1 / (max_m ||H_m||_F * M_t) / sqrt(t).
  void step(const MeasurementPlan& plan, const CVec& z,
            double step_scale = -1.0);

  const CMat& action() const { return v_; }
  CVec state_estimate(Index ref_bus) const;
  int rounds() const { return t_; }
  const std::vector<double>& losses() const { return losses_; }

  struct Regret {
    double value = 0.0;
    double best_fixed_loss = 0.0;
    CMat best_action;
  };
  /// Hindsight benchmark over all seen rounds via the barrier solver.
  Regret regret_report(double barrier_gap = 1e-7) const;

 private:
  CMat v_;
  int t_ = 0;
  std::vector<double> losses_;
  std::vector<std::pair<MeasurementPlan, CVec>> seen_;
};

/// Extended Kalman filter on the expanded real coordinates.
struct EkfState {
  CVec v;   // filtered estimate
  Mat p;    // 2N x 2N error covariance
};

EkfState ekf_init(const CVec& v0, double p0_scale = 1.0);

/// Predict with `dyn`, correct with (plan, z). Joseph-form covariance update.
EkfState ekf_step(const EkfState& state, const DynamicsModel& dyn,
                  const MeasurementPlan& plan, const CVec& z);

enum class MheMode { GaussNewton, Sdr };

struct MheWindowStep {
  const MeasurementPlan* plan = nullptr;
  CVec z;
  CMat f;  // transition applied after this step (unused on the last entry)
};

struct MheResult {
  std::vector<CVec> smoothed;  // estimates for each window slot
  bool converged = false;
  double cost = 0.0;
};

/// Sliding-window estimate: fit the window-start state against all windowed
/// measurements through the transition products, anchored to the predictor,
/// then propagate forward noise-free.
MheResult mhe_solve(const std::vector<MheWindowStep>& window,
                    const CVec& predictor, double lambda, MheMode mode,
                    Index ref_bus, const SolverOptions& opts = {});

}  // namespace gridstate

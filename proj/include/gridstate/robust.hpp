#pragma once

#include <string>
#include <vector>

#include "gridstate/distributed.hpp"
#include "gridstate/types.hpp"

namespace gridstate {

/// Real linear measurement model z = H v + o + eps with identity noise
/// covariance (prewhiten upstream). Exact for PMU data; a frozen Gauss-Newton
/// Jacobian otherwise.
struct LinearModel {
  Mat h;
  Vec z;
};

/// Least-squares estimate; throws on rank-deficient H.
Vec lse_solve(const LinearModel& model);

/// P = I - H (H'H)^{-1} H'; idempotent, annihilates range(H).
Mat projection_matrix(const LinearModel& model);

struct BadDataReport {
  std::string test;
  double statistic = 0.0;
  double threshold = 0.0;
  bool reject = false;
  std::vector<Index> flagged;
  Vec normalized_residuals;      // LNR only; 0 at critical rows
  std::vector<Index> critical;   // rows with no residual capacity
};

BadDataReport chi_square_test(const LinearModel& model, double alpha);
BadDataReport lnr_test(const LinearModel& model, double threshold = 3.0);

struct LnrIterationResult {
  Vec v_hat;
  std::vector<Index> removed;   // indices into the original model
  bool blocked = false;         // a removal would break identifiability
  std::string message;
};
LnrIterationResult lnr_iterate(const LinearModel& model,
                               double threshold = 3.0);

double soft_threshold(double x, double lambda);

struct HuberResult {
  Vec v_hat;
  Vec o_hat;
  std::vector<double> cost_trace;
  int iterations = 0;
};
/// 0.5||z - Hv - o||^2 + lambda ||o||_1 by exact alternating minimization.
HuberResult huber_solve(const LinearModel& model, double lambda = 1.34);

struct LavResult {
  Vec v_hat;
  double cost = 0.0;
  double subgradient_norm = 0.0;
  int iterations = 0;
};
/// ||z - Hv||_1 via iteratively reweighted least squares, weight floor 1e-6.
LavResult lav_solve(const LinearModel& model);

/// Rows whose removal destroys identifiability; P_mm <= 1e-9 characterization
/// cross-checked against explicit row-deletion rank tests.
std::vector<Index> critical_measurements(const LinearModel& model);

struct MeasurementDistance {
  int distance = 0;    // D(h)
  int k_observable = 0;   // D - 1
  int k_identifiable = 0; // floor((D-1)/2)
  bool exact = true;   // false when the subset search hit the cap
};
/// Exhaustive search for min ||H dv||_0 over dv != 0 (row-deletion rank
/// collapse); search capped at subsets of size `limit`.
MeasurementDistance measurement_distance(const LinearModel& model, int limit);

/// o = H * delta_v; lies in range(H), invisible to residual tests.
Vec stealth_attack(const LinearModel& model, const Vec& delta_v);

/// Decentralized robust estimation (joint state and outlier recovery with
/// consensus on shared states); omega updates are entrywise soft-thresholds.
struct RobustConsensusResult {
  std::vector<Vec> states;    // per-area realified states
  std::vector<Vec> outliers;  // per-area o estimates
  ConsensusTrace trace;
  bool converged = false;
  int iterations = 0;
  std::string message;
};
RobustConsensusResult admm_robust(const AreaPartition& partition,
                                  const std::vector<AreaModel>& models,
                                  double lambda, const ConsensusOptions& opts,
                                  const ConsensusReferences* refs = nullptr);

}  // namespace gridstate

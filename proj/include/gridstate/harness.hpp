#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gridstate/distributed.hpp"
#include "gridstate/estimators.hpp"
#include "gridstate/measurement.hpp"
#include "gridstate/robust.hpp"
#include "gridstate/sdr.hpp"
#include "gridstate/tracking.hpp"

namespace gridstate {

/// Random operating point: magnitudes U[0.9, 1.1], angles U[-0.4pi, 0.4pi],
/// rotated so the reference bus has zero angle.
CVec draw_state(Rng& rng, Index n, Index ref, double mag_lo = 0.9,
                double mag_hi = 1.1, double ang_max = 0.4 * M_PI);

/// Cumulative prefixes of the ordered SCADA measurement types
/// {vmag2, p_flow_to, p_flow_from, q_flow_to, q_flow_from, p_inj, q_inj}.
MeasurementPlan sweep_plan(const AdmittanceModel& model, int prefix,
                           double sigma_power = 0.05,
                           double sigma_voltage = 0.02);

struct SweepRow {
  int types = 0;
  double gn_mse = 0.0, sdr_mse = 0.0, fpp_mse = 0.0;
  double gn_se = 0.0, sdr_se = 0.0, fpp_se = 0.0;  // MC standard errors
  double crlb = 0.0;
  bool observable = false;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::string to_csv() const;
};

/// Fig.2-right style Monte Carlo over the 7-step type sweep.
SweepResult run_measurement_sweep(const GridCase& grid,
                                  const AdmittanceModel& model, int runs,
                                  std::uint64_t seed,
                                  bool with_sdr = true, bool with_fpp = true);

struct BadDataRow {
  std::string scenario;
  double ga_lse = 0.0, lse = 0.0, lnrt = 0.0, huber = 0.0;
};
struct BadDataResult {
  std::vector<BadDataRow> rows;
  std::string to_csv() const;
};

/// Table-1 style bad-data study on a PMU plan: scenarios S0-S3 corrupt the
/// line currents (4,7), (10,11) and the bus-5 voltage by a 1.2 factor.
BadDataResult run_baddata_study(const GridCase& grid,
                                const MeasurementPlan& plan, int runs,
                                std::uint64_t seed);

/// Centralized realified LSE for a PMU plan via sparse normal equations.
CVec centralized_lse(const MeasurementPlan& plan, const MeasurementSet& set);

struct DistributedRunResult {
  ConsensusResult consensus;
  RobustConsensusResult robust;
  AntisymmetryReport antisymmetry;
  int iters_to_1e3 = -1;  // first iteration with avg truth error <= 1e-3
  std::string trace_csv;
};

/// Consensus experiment: simulate the plan at a random near-flat state,
/// split per the assignment, run plain and robust decentralized estimators.
DistributedRunResult run_distributed_experiment(
    const GridCase& grid, const MeasurementPlan& plan,
    const std::vector<int>& assignment, std::uint64_t seed,
    const ConsensusOptions& opts, bool with_robust = true,
    bool with_centralized = true);

/// Large synthetic grid-of-grids consensus study: one cell copy per area,
/// PMU voltage at every bus and current at the from end of every branch,
/// assembled sparsely so thousands of buses stay cheap.
DistributedRunResult run_multi_area_experiment(const GridCase& cell,
                                               Index n_areas, Index extra_edges,
                                               std::uint64_t seed, double sigma,
                                               const ConsensusOptions& opts,
                                               bool with_centralized = true);

struct TrackScenario {
  int steps = 100;
  std::string kind = "ramp";     // "static" or "ramp"
  double mag_rate = 0.0005;      // per-step drift
  double ang_rate = 0.002;
  double sigma_power = 0.05;
  double sigma_voltage = 0.02;
  double holt_alpha = 0.8;
  double holt_beta = 0.5;
  int mhe_window = 3;
  double mhe_lambda = 1.0;
  double process_noise = 1e-6;
  std::vector<int> regret_checkpoints = {50, 200};
};

TrackScenario load_track_scenario(const std::string& json_text);

struct TrackRow {
  int t = 0;
  std::string method;
  double state_error = 0.0;
  double cost = 0.0;
  double regret = 0.0;  // online method only; 0 elsewhere
};

struct TrackResult {
  std::vector<TrackRow> rows;
  std::vector<std::pair<int, double>> regret_at;  // (T, R(T))
  std::string to_csv() const;
};

TrackResult run_tracking(const GridCase& grid, const AdmittanceModel& model,
                         const TrackScenario& scenario, std::uint64_t seed);

}  // namespace gridstate

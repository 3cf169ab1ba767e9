#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gridstate/estimators.hpp"
#include "gridstate/measurement.hpp"
#include "gridstate/types.hpp"

namespace gridstate {

/// Buses and measurements supervised by one control area. State buses are
/// the supervised buses plus any neighbor buses touched by owned meters.
struct Area {
  int id = 0;
  std::vector<Index> own_buses;    // global bus indices
  std::vector<Index> state_buses;  // own + extension, each sorted
  std::vector<Index> measurements; // plan entry indices owned by this area
};

/// Consensus coupling between two areas: the global buses present in both
/// state vectors, with their positions in each local state.
struct SharedPair {
  int area_k = 0, area_l = 0;
  std::vector<Index> global_buses;
  std::vector<Index> local_k;  // positions in area k's state vector
  std::vector<Index> local_l;
};

/// Minimal measurement description for partitioning: who owns the meter and
/// which buses its coefficients touch. Avoids materializing dense rows on
/// large synthetic grids.
struct MeterStub {
  Index owner_bus = -1;
  std::vector<Index> support;
};

class AreaPartition {
 public:
  AreaPartition(const GridCase& grid, const std::vector<MeterStub>& meters,
                const std::vector<int>& bus_to_area);
  AreaPartition(const GridCase& grid, const MeasurementPlan& plan,
                const std::vector<int>& bus_to_area);

  Index area_count() const { return static_cast<Index>(areas_.size()); }
  const std::vector<Area>& areas() const { return areas_; }
  const std::vector<SharedPair>& shared() const { return shared_; }
  const std::vector<std::vector<Index>>& neighbors() const { return neighbors_; }
  Index bus_count() const { return bus_count_; }

  /// Local complex state of area k extracted from a global state vector.
  CVec local_state(Index k, const CVec& global) const;

 private:
  std::vector<Area> areas_;
  std::vector<SharedPair> shared_;
  std::vector<std::vector<Index>> neighbors_;  // pair indices per area
  Index bus_count_ = 0;
};

std::vector<int> load_partition_file(const GridCase& grid,
                                     const std::string& path);
std::vector<int> load_partition_json(const GridCase& grid,
                                     const std::string& json_text);

/// Per-area real linear model (realified, prewhitened).
struct AreaModel {
  Mat h;
  Vec z;
};

/// Realified per-area models for a linear (PMU) plan.
std::vector<AreaModel> build_area_models(const AreaPartition& partition,
                                         const MeasurementPlan& plan,
                                         const MeasurementSet& set);

struct ConsensusOptions {
  /// ADMM penalty; nonpositive (the default) picks the automatic scale, the
  /// average diagonal of the stacked normal matrix, which balances the
  /// proximal term against prewhitened data weights.
  double mu = 0.0;
  int max_iters = 200;
  double tol = 1e-8;  // consensus residual
  bool record_multipliers = true;
};

/// Automatic ADMM penalty: twice the smallest eigenvalue of the per-area
/// boundary Schur complements (the softest boundary stiffness), so the
/// proximal term competes with the weakest coupling mode.
double auto_penalty(const AreaPartition& partition,
                    const std::vector<AreaModel>& models);

struct ConsensusTrace {
  std::vector<double> consensus_residual;
  std::vector<double> multiplier_antisymmetry;  // max |lam_kl + lam_lk|
  std::vector<Vec> area_error_centralized;      // e_kc per iteration
  std::vector<Vec> area_error_truth;            // e_ko per iteration
  std::vector<Index> messages;                  // exchanged per iteration
};

/// Optional references for error traces, in per-area local coordinates.
struct ConsensusReferences {
  std::vector<CVec> centralized;
  std::vector<CVec> truth;
};

struct ConsensusResult {
  std::vector<CVec> states;  // per-area complex local states
  ConsensusTrace trace;
  bool converged = false;
  int iterations = 0;
  std::string message;
};

/// Decentralized least squares over the partition: per-area regularized LSE,
/// shared-state averaging, scaled dual updates. Multipliers start at zero.
ConsensusResult admm_consensus(const AreaPartition& partition,
                               const std::vector<AreaModel>& models,
                               const ConsensusOptions& opts,
                               const ConsensusReferences* refs = nullptr);

struct AntisymmetryReport {
  double worst = 0.0;
  Index worst_iteration = -1;
  bool holds = false;  // within 1e-12 at every stored iteration
};
AntisymmetryReport check_antisymmetry(const ConsensusTrace& trace);

struct OverlapTopologyReport {
  bool as4_tree = false;          // area-overlap graph is a tree
  bool as5_private_bus = false;   // every area keeps a non-overlapping bus
};
OverlapTopologyReport validate_overlap_topology(const AreaPartition& partition);

/// Per-area quadratic plans for the distributed SDR: entries of the global
/// plan owned by each area, reindexed to the local state.
std::vector<MeasurementPlan> build_area_plans(const AreaPartition& partition,
                                              const MeasurementPlan& plan);

struct DistributedSdrOptions {
  double mu = 1.0;
  int max_iters = 30;
  double tol = 1e-6;
  /// Final per-area barrier gap, relative to each area's initial data cost.
  /// Rounds tighten toward it geometrically (inexact ADMM).
  double barrier_gap = 1e-5;
  int max_cg = 2000;
};

struct DistributedSdrResult {
  std::vector<CMat> lifted;   // per-area Hermitian blocks
  std::vector<CVec> states;   // recovered per-area states
  ConsensusTrace trace;
  OverlapTopologyReport topology;
  bool converged = false;
  int iterations = 0;
  std::string message;
};

/// ADMM over overlapping PSD submatrices with consensus on shared principal
/// blocks; per-area subproblems go through the barrier solver.
DistributedSdrResult distributed_sdr(const AreaPartition& partition,
                                     const std::vector<MeasurementPlan>& plans,
                                     const std::vector<CVec>& z_per_area,
                                     const DistributedSdrOptions& opts,
                                     const ConsensusReferences* refs = nullptr);

/// Synthetic multi-area grid: one copy of `cell` per node of a connected
/// area graph, plus one inter-area line per graph edge whose endpoints are
/// drawn at random inside the incident areas. Deterministic for fixed seed.
struct MultiAreaCase {
  GridCase grid;
  std::vector<int> bus_to_area;
};
MultiAreaCase build_multi_area_case(const GridCase& cell, Index n_areas,
                                    Index extra_edges, std::uint64_t seed);

}  // namespace gridstate

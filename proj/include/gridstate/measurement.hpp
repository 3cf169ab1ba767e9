#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gridstate/grid.hpp"
#include "gridstate/rng.hpp"
#include "gridstate/types.hpp"

namespace gridstate {

/// One meter: a Hermitian quadratic form for SCADA kinds, a complex linear
/// row for PMU kinds.
struct MeasurementEntry {
  MeasurementKind kind = MeasurementKind::Vmag2;
  MeterLocation location;
  double sigma = 1.0;
  CMat h;    // quadratic kinds
  CVec phi;  // PMU kinds
};

class MeasurementPlan {
 public:
  MeasurementPlan() = default;
  MeasurementPlan(const AdmittanceModel& model,
                  std::vector<MeasurementEntry> entries);

  Index size() const { return static_cast<Index>(entries_.size()); }
  const std::vector<MeasurementEntry>& entries() const { return entries_; }
  const MeasurementEntry& entry(Index m) const { return entries_[m]; }
  Index bus_count() const { return bus_count_; }

  /// Number of rows in the stacked real-valued model (PMU entries take two).
  Index real_size() const;

  bool has_pmu() const;

  /// Full noise covariance over the quadratic entries (optional; diagonal
  /// sigma_m otherwise). Must be symmetric positive definite.
  void set_quadratic_covariance(const Mat& sigma_eps);
  const std::optional<Mat>& quadratic_covariance() const { return cov_; }

 private:
  std::vector<MeasurementEntry> entries_;
  Index bus_count_ = 0;
  std::optional<Mat> cov_;
};

/// Builders ---------------------------------------------------------------

MeasurementEntry make_entry(const AdmittanceModel& model, MeasurementKind kind,
                            const MeterLocation& loc, double sigma);

struct PlanSpec {
  MeasurementKind kind;
  MeterLocation location;
  double sigma;
};

MeasurementPlan build_plan(const AdmittanceModel& model,
                           const std::vector<PlanSpec>& specs);

/// Plan generator tokens: "vmag2_all", "pinj_all", "qinj_all", "pflow_from",
/// "pflow_to", "pflow_both_ends", "qflow_from", "qflow_to",
/// "qflow_both_ends", "pmu_v_all", "pmu_i_from" joined by '+'.
/// Default noise: 0.05 for power kinds, 0.02 for voltage/PMU kinds.
MeasurementPlan generate_plan(const AdmittanceModel& model,
                              const std::string& expr,
                              double sigma_power = 0.05,
                              double sigma_voltage = 0.02);

MeasurementPlan load_plan_file(const AdmittanceModel& model,
                               const GridCase& grid, const std::string& path);
MeasurementPlan load_plan_json(const AdmittanceModel& model,
                               const GridCase& grid,
                               const std::string& json_text);

/// Measurement values; quadratic entries are real (imaginary part zero),
/// PMU entries are complex phasors.
struct MeasurementSet {
  CVec values;
  int timestamp = 0;
};

/// h(v): quadratic entries v'H v (real part after the 1e-12 imaginary check),
/// PMU entries phi'v.
CVec evaluate(const MeasurementPlan& plan, const CVec& v);

/// Complex Wirtinger Jacobian, row m = (H_m v)' for quadratic entries and
/// phi' for PMU entries.
CMat jacobian(const MeasurementPlan& plan, const CVec& v);

/// Stacked real Jacobian on [Re v; Im v]: one row per quadratic entry, two
/// per PMU entry (real part then imaginary part).
Mat real_jacobian(const MeasurementPlan& plan, const CVec& v);

/// Real residual stack matching real_jacobian's row layout.
Vec real_residual(const MeasurementPlan& plan, const CVec& v, const CVec& z);

/// Per-row weights 1/sigma^2 for quadratic rows, 2/sigma^2 for the two real
/// components of a PMU entry (each carries half the complex variance).
Vec real_weights(const MeasurementPlan& plan);

/// Weighted least-squares cost of z against h(v).
double wls_cost(const MeasurementPlan& plan, const CVec& z, const CVec& v);

MeasurementSet simulate(const MeasurementPlan& plan, const CVec& v_true,
                        std::uint64_t seed);
MeasurementSet simulate_noiseless(const MeasurementPlan& plan,
                                  const CVec& v_true);

/// Rescales readings and measurement maps so the noise covariance becomes
/// identity. Diagonal case: divide z_m, H_m (or phi_m) by sigma_m. A full
/// covariance over the quadratic block mixes the Hermitian matrices.
struct WhitenedProblem {
  MeasurementPlan plan;
  MeasurementSet set;
};
WhitenedProblem prewhiten(const MeasurementPlan& plan,
                          const MeasurementSet& set);

/// Fisher information in conjugate coordinates [v; v*].
struct FisherInformation {
  CMat f;  // 2N x 2N Hermitian PSD
};

FisherInformation fim(const MeasurementPlan& plan, const CVec& v);

struct CrlbResult {
  CMat bound;          // [F^+]_{1:N,1:N}
  double trace = 0.0;  // trace of `bound` (total complex-state MSE bound)
  Mat anchored_real;   // real-coordinate bound with ref imaginary pinned
  double anchored_trace = 0.0;
};

/// Pseudo-inverse cutoff: singular values below 1e-10 * sigma_max are zero.
/// Throws InputError("unobservable plan") when the FIM is deficient beyond
/// the structural phase ambiguity.
CrlbResult crlb(const MeasurementPlan& plan, const CVec& v, Index ref_bus);

}  // namespace gridstate

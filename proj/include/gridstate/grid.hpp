#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gridstate/types.hpp"

namespace gridstate {

struct Bus {
  int id = 0;
  Complex shunt{0.0, 0.0};  // per-unit shunt admittance at the bus
};

struct Branch {
  int from = 0;
  int to = 0;
  Complex series_admittance{0.0, 0.0};  // y = g + jb, per unit
  double shunt_susceptance = 0.0;       // total line charging b^s
  Complex tap_ratio{1.0, 0.0};          // complex transformer ratio, 1 if none
  bool has_transformer() const { return tap_ratio != Complex(1.0, 0.0); }
};

enum class BranchEnd { From, To };

/// Validated network description. Bus ids are arbitrary ints in the input
/// file; internally everything is indexed 0..N_b-1 in file order.
class GridCase {
 public:
  GridCase(std::vector<Bus> buses, std::vector<Branch> branches, int ref_bus_id);

  Index bus_count() const { return static_cast<Index>(buses_.size()); }
  Index branch_count() const { return static_cast<Index>(branches_.size()); }
  const std::vector<Bus>& buses() const { return buses_; }
  const std::vector<Branch>& branches() const { return branches_; }
  Index reference_index() const { return ref_index_; }

  Index index_of(int bus_id) const;
  int id_of(Index index) const { return buses_[index].id; }
  /// Branch index for the (from,to) pair as listed in the case, or -1.
  Index find_branch(int from_id, int to_id) const;

  /// 0-based endpoint indices of branch b.
  Index from_index(Index b) const { return index_of(branches_[b].from); }
  Index to_index(Index b) const { return index_of(branches_[b].to); }

 private:
  std::vector<Bus> buses_;
  std::vector<Branch> branches_;
  std::map<int, Index> index_;
  Index ref_index_ = 0;
};

/// Bus admittance matrix Y and the stacked branch-current map Y_f.
/// Row layout of Y_f: branch b occupies rows 2b (from end) and 2b+1 (to end).
struct AdmittanceModel {
  CMat ybus;
  CMat ybranch;
  Index bus_count = 0;
  Index branch_count = 0;
  std::vector<Index> branch_from;  // endpoint bus indices per branch
  std::vector<Index> branch_to;

  Index flow_row(Index branch, BranchEnd end) const {
    return 2 * branch + (end == BranchEnd::To ? 1 : 0);
  }
  /// Bus where a flow/current meter on (branch, end) physically sits.
  Index sending_bus(Index branch, BranchEnd end) const {
    return end == BranchEnd::From ? branch_from[branch] : branch_to[branch];
  }
};

GridCase load_case(const std::string& json_text);
GridCase load_case_file(const std::string& path);
std::string case_to_json(const GridCase& grid);

AdmittanceModel build_admittance(const GridCase& grid);

enum class MeasurementKind { PInj, QInj, Vmag2, PFlow, QFlow, PmuV, PmuI };

bool is_quadratic(MeasurementKind kind);
std::string kind_name(MeasurementKind kind);
MeasurementKind kind_from_name(const std::string& name);

/// Location of a meter: a bus for injection/voltage kinds, a directed branch
/// end for flow and current kinds.
struct MeterLocation {
  Index bus = -1;
  Index branch = -1;
  BranchEnd end = BranchEnd::From;
};

/// Hermitian matrix H with z = v' H v for the quadratic kinds. PMU kinds are
/// linear and produce a row map instead (see measurement.hpp).
CMat measurement_matrix(const AdmittanceModel& model, MeasurementKind kind,
                        const MeterLocation& loc);

/// Row of the complex linear map for PMU kinds: e_n' for voltage phasors,
/// the matching row of Y_f for current phasors.
CVec pmu_row(const AdmittanceModel& model, MeasurementKind kind,
             const MeterLocation& loc);

/// Weighted graph Laplacian with edge weights |Im y_nk|. PSD, rank N_b-1,
/// H0 * 1 = 0; the rank-one-promoting regularizer of the penalized solver.
CMat graph_laplacian(const GridCase& grid);

}  // namespace gridstate

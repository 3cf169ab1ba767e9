#pragma once

#include <string>
#include <vector>

#include "gridstate/distributed.hpp"
#include "gridstate/estimators.hpp"
#include "gridstate/measurement.hpp"

namespace gridstate {

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

/// %.17g, so emitted CSVs reload without loss.
std::string format_double(double x);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string dump() const;
  static CsvTable parse(const std::string& text);
  Index column(const std::string& name) const;
};

std::string estimate_to_json(const StateEstimate& est);

std::string location_token(const GridCase& grid, const MeasurementEntry& e);

/// Columns: index, kind, location, value_re, value_im.
std::string measurement_set_to_csv(const GridCase& grid,
                                   const MeasurementPlan& plan,
                                   const MeasurementSet& set);
MeasurementSet measurement_set_from_csv(const GridCase& grid,
                                        const MeasurementPlan& plan,
                                        const std::string& text);

/// Columns: iter, area, e_kc, e_ko, consensus_residual.
std::string trace_to_csv(const ConsensusTrace& trace);

}  // namespace gridstate

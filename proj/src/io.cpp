#include "gridstate/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace gridstate {

using nlohmann::json;

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path);
  out << content;
}

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::string CsvTable::dump() const {
  std::ostringstream os;
  for (size_t c = 0; c < header.size(); ++c)
    os << header[c] << (c + 1 < header.size() ? "," : "\n");
  for (const auto& row : rows)
    for (size_t c = 0; c < row.size(); ++c)
      os << row[c] << (c + 1 < row.size() ? "," : "\n");
  return os.str();
}

CsvTable CsvTable::parse(const std::string& text) {
  CsvTable t;
  std::istringstream is(text);
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (first) {
      t.header = cells;
      first = false;
    } else {
      t.rows.push_back(cells);
    }
  }
  return t;
}

Index CsvTable::column(const std::string& name) const {
  for (size_t c = 0; c < header.size(); ++c)
    if (header[c] == name) return static_cast<Index>(c);
  throw InputError("csv column missing: " + name);
}

std::string estimate_to_json(const StateEstimate& est) {
  json doc;
  doc["v_re"] = json::array();
  doc["v_im"] = json::array();
  for (Index i = 0; i < est.v_hat.size(); ++i) {
    doc["v_re"].push_back(est.v_hat(i).real());
    doc["v_im"].push_back(est.v_hat(i).imag());
  }
  doc["cost_trace"] = est.cost_trace;
  doc["converged"] = est.converged;
  doc["iters"] = est.iterations;
  doc["message"] = est.message;
  if (est.v_lifted.size() > 0) doc["rank_ratio"] = est.rank_ratio();
  return doc.dump(2);
}

std::string location_token(const GridCase& grid, const MeasurementEntry& e) {
  if (e.location.bus >= 0)
    return "bus:" + std::to_string(grid.id_of(e.location.bus));
  const Branch& br = grid.branches()[e.location.branch];
  return "branch:" + std::to_string(br.from) + "-" + std::to_string(br.to) +
         ":" + (e.location.end == BranchEnd::From ? "from" : "to");
}

std::string measurement_set_to_csv(const GridCase& grid,
                                   const MeasurementPlan& plan,
                                   const MeasurementSet& set) {
  CsvTable t;
  t.header = {"index", "kind", "location", "value_re", "value_im"};
  for (Index m = 0; m < plan.size(); ++m) {
    const auto& e = plan.entry(m);
    t.rows.push_back({std::to_string(m), kind_name(e.kind),
                      location_token(grid, e), format_double(set.values(m).real()),
                      format_double(set.values(m).imag())});
  }
  return t.dump();
}

MeasurementSet measurement_set_from_csv(const GridCase& grid,
                                        const MeasurementPlan& plan,
                                        const std::string& text) {
  CsvTable t = CsvTable::parse(text);
  if (static_cast<Index>(t.rows.size()) != plan.size())
    throw InputError("measurement csv row count does not match the plan");
  MeasurementSet set;
  set.values = CVec::Zero(plan.size());
  const Index ci = t.column("index"), ck = t.column("kind"),
              cl = t.column("location"), cr = t.column("value_re"),
              cim = t.column("value_im");
  for (const auto& row : t.rows) {
    const Index m = std::stol(row[ci]);
    if (m < 0 || m >= plan.size()) throw InputError("bad measurement index");
    const auto& e = plan.entry(m);
    if (row[ck] != kind_name(e.kind) || row[cl] != location_token(grid, e))
      throw InputError("measurement csv does not match the plan at index " +
                       std::to_string(m));
    set.values(m) = Complex(std::stod(row[cr]), std::stod(row[cim]));
  }
  return set;
}

std::string trace_to_csv(const ConsensusTrace& trace) {
  CsvTable t;
  t.header = {"iter", "area", "e_kc", "e_ko", "consensus_residual"};
  const size_t iters = trace.consensus_residual.size();
  for (size_t it = 0; it < iters; ++it) {
    Index areas = 0;
    if (it < trace.area_error_centralized.size())
      areas = trace.area_error_centralized[it].size();
    if (it < trace.area_error_truth.size())
      areas = std::max(areas, trace.area_error_truth[it].size());
    if (areas == 0) areas = 1;
    for (Index a = 0; a < areas; ++a) {
      std::string ekc = "nan", eko = "nan";
      if (it < trace.area_error_centralized.size() &&
          a < trace.area_error_centralized[it].size())
        ekc = format_double(trace.area_error_centralized[it](a));
      if (it < trace.area_error_truth.size() &&
          a < trace.area_error_truth[it].size())
        eko = format_double(trace.area_error_truth[it](a));
      t.rows.push_back({std::to_string(it + 1), std::to_string(a), ekc, eko,
                        format_double(trace.consensus_residual[it])});
    }
  }
  return t.dump();
}

}  // namespace gridstate

#include "gridstate/grid.hpp"

#include <fstream>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <json.hpp>

namespace gridstate {

using nlohmann::json;

GridCase::GridCase(std::vector<Bus> buses, std::vector<Branch> branches,
                   int ref_bus_id)
    : buses_(std::move(buses)), branches_(std::move(branches)) {
  if (buses_.empty()) throw InputError("case has no buses");
  for (Index i = 0; i < bus_count(); ++i) {
    if (!index_.emplace(buses_[i].id, i).second)
      throw InputError("duplicate bus id " + std::to_string(buses_[i].id));
  }
  for (const Branch& br : branches_) {
    if (!index_.count(br.from))
      throw InputError("unknown bus " + std::to_string(br.from) + " in branch");
    if (!index_.count(br.to))
      throw InputError("unknown bus " + std::to_string(br.to) + " in branch");
    if (br.from == br.to)
      throw InputError("self-loop at bus " + std::to_string(br.from));
    if (std::abs(br.tap_ratio) <= 0.0)
      throw InputError("zero transformer ratio on branch " +
                       std::to_string(br.from) + "-" + std::to_string(br.to));
  }
  if (!index_.count(ref_bus_id))
    throw InputError("unknown reference bus " + std::to_string(ref_bus_id));
  ref_index_ = index_.at(ref_bus_id);

  // Connectivity check by union-find.
  std::vector<Index> parent(bus_count());
  for (Index i = 0; i < bus_count(); ++i) parent[i] = i;
  auto find = [&](Index a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  for (const Branch& br : branches_)
    parent[find(index_.at(br.from))] = find(index_.at(br.to));
  for (Index i = 0; i < bus_count(); ++i)
    if (find(i) != find(0)) throw InputError("grid graph is disconnected");
}

Index GridCase::index_of(int bus_id) const {
  auto it = index_.find(bus_id);
  if (it == index_.end())
    throw InputError("unknown bus " + std::to_string(bus_id));
  return it->second;
}

Index GridCase::find_branch(int from_id, int to_id) const {
  for (Index b = 0; b < branch_count(); ++b)
    if (branches_[b].from == from_id && branches_[b].to == to_id) return b;
  return -1;
}

GridCase load_case(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw InputError(std::string("case schema: ") + e.what());
  }
  try {
    std::vector<Bus> buses;
    for (const auto& jb : doc.at("buses")) {
      Bus b;
      b.id = jb.at("id").get<int>();
      if (jb.contains("shunt_g") || jb.contains("shunt_b"))
        b.shunt = Complex(jb.value("shunt_g", 0.0), jb.value("shunt_b", 0.0));
      buses.push_back(b);
    }
    std::vector<Branch> branches;
    for (const auto& jl : doc.at("branches")) {
      Branch br;
      br.from = jl.at("from").get<int>();
      br.to = jl.at("to").get<int>();
      br.series_admittance =
          Complex(jl.at("g").get<double>(), jl.at("b").get<double>());
      br.shunt_susceptance = jl.value("bs", 0.0);
      const double mag = jl.value("tap_mag", 1.0);
      const double ang = jl.value("tap_ang_rad", 0.0);
      br.tap_ratio = std::polar(mag, ang);
      branches.push_back(br);
    }
    return GridCase(std::move(buses), std::move(branches),
                    doc.at("ref_bus").get<int>());
  } catch (const json::exception& e) {
    throw InputError(std::string("case schema: ") + e.what());
  }
}

GridCase load_case_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("case not found: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return load_case(ss.str());
}

std::string case_to_json(const GridCase& grid) {
  json doc;
  doc["buses"] = json::array();
  for (const Bus& b : grid.buses()) {
    json jb{{"id", b.id}};
    if (b.shunt != Complex(0, 0)) {
      jb["shunt_g"] = b.shunt.real();
      jb["shunt_b"] = b.shunt.imag();
    }
    doc["buses"].push_back(jb);
  }
  doc["branches"] = json::array();
  for (const Branch& br : grid.branches()) {
    json jl{{"from", br.from},
            {"to", br.to},
            {"g", br.series_admittance.real()},
            {"b", br.series_admittance.imag()}};
    if (br.shunt_susceptance != 0.0) jl["bs"] = br.shunt_susceptance;
    if (br.has_transformer()) {
      jl["tap_mag"] = std::abs(br.tap_ratio);
      jl["tap_ang_rad"] = std::arg(br.tap_ratio);
    }
    doc["branches"].push_back(jl);
  }
  doc["ref_bus"] = grid.id_of(grid.reference_index());
  return doc.dump(2);
}

AdmittanceModel build_admittance(const GridCase& grid) {
  const Index n = grid.bus_count(), nl = grid.branch_count();
  AdmittanceModel model;
  model.bus_count = n;
  model.branch_count = nl;
  model.ybus = CMat::Zero(n, n);
  model.ybranch = CMat::Zero(2 * nl, n);
  model.branch_from.resize(nl);
  model.branch_to.resize(nl);

  for (Index i = 0; i < n; ++i) model.ybus(i, i) += grid.buses()[i].shunt;

  for (Index b = 0; b < nl; ++b) {
    const Branch& br = grid.branches()[b];
    const Index f = grid.from_index(b), t = grid.to_index(b);
    model.branch_from[b] = f;
    model.branch_to[b] = t;
    const Complex y = br.series_admittance;
    const Complex ysh = Complex(0.0, br.shunt_susceptance / 2.0);
    const Complex rho = br.tap_ratio;
    const double rho2 = std::norm(rho);

    // Standard pi-model two-port stamp; the transformer sits at the from end.
    model.ybus(f, f) += (y + ysh) / rho2;
    model.ybus(f, t) += -y / std::conj(rho);
    model.ybus(t, f) += -y / rho;
    model.ybus(t, t) += y + ysh;

    const Index rf = model.flow_row(b, BranchEnd::From);
    const Index rt = model.flow_row(b, BranchEnd::To);
    model.ybranch(rf, f) = (y + ysh) / rho2;
    model.ybranch(rf, t) = -y / std::conj(rho);
    model.ybranch(rt, t) = y + ysh;
    model.ybranch(rt, f) = -y / rho;
  }
  return model;
}

bool is_quadratic(MeasurementKind kind) {
  return kind != MeasurementKind::PmuV && kind != MeasurementKind::PmuI;
}

std::string kind_name(MeasurementKind kind) {
  switch (kind) {
    case MeasurementKind::PInj: return "p_inj";
    case MeasurementKind::QInj: return "q_inj";
    case MeasurementKind::Vmag2: return "vmag2";
    case MeasurementKind::PFlow: return "p_flow";
    case MeasurementKind::QFlow: return "q_flow";
    case MeasurementKind::PmuV: return "pmu_v";
    case MeasurementKind::PmuI: return "pmu_i";
  }
  return "?";
}

MeasurementKind kind_from_name(const std::string& name) {
  if (name == "p_inj") return MeasurementKind::PInj;
  if (name == "q_inj") return MeasurementKind::QInj;
  if (name == "vmag2") return MeasurementKind::Vmag2;
  if (name == "p_flow") return MeasurementKind::PFlow;
  if (name == "q_flow") return MeasurementKind::QFlow;
  if (name == "pmu_v") return MeasurementKind::PmuV;
  if (name == "pmu_i") return MeasurementKind::PmuI;
  throw InputError("unknown measurement kind: " + name);
}

namespace {

void check_bus(const AdmittanceModel& model, const MeterLocation& loc) {
  if (loc.bus < 0 || loc.bus >= model.bus_count)
    throw InputError("measurement location: bus index out of range");
}

void check_branch(const AdmittanceModel& model, const MeterLocation& loc) {
  if (loc.branch < 0 || loc.branch >= model.branch_count)
    throw InputError("measurement location: branch index out of range");
}

}  // namespace

CMat measurement_matrix(const AdmittanceModel& model, MeasurementKind kind,
                        const MeterLocation& loc) {
  const Index n = model.bus_count;
  CMat h = CMat::Zero(n, n);
  switch (kind) {
    case MeasurementKind::Vmag2:
      check_bus(model, loc);
      h(loc.bus, loc.bus) = 1.0;
      return h;
    case MeasurementKind::PInj:
    case MeasurementKind::QInj: {
      check_bus(model, loc);
      // e_n e_n' Y has the n-th row of Y and zeros elsewhere.
      CMat eY = CMat::Zero(n, n);
      eY.row(loc.bus) = model.ybus.row(loc.bus);
      if (kind == MeasurementKind::PInj)
        h = 0.5 * (eY + eY.adjoint());
      else
        // Sign chosen so v'Hv equals Q from the polar formulas: the form
        // v' (e e' Y) v evaluates S*, whose imaginary part is -Q.
        h = (eY.adjoint() - eY) / (2.0 * kImag);
      return h;
    }
    case MeasurementKind::PFlow:
    case MeasurementKind::QFlow: {
      check_branch(model, loc);
      // Same construction as the injections with e_n' Y replaced by the
      // branch row of Y_f; n is the sending bus of the metered end.
      const Index bus = model.sending_bus(loc.branch, loc.end);
      CMat eYf = CMat::Zero(n, n);
      eYf.row(bus) = model.ybranch.row(model.flow_row(loc.branch, loc.end));
      if (kind == MeasurementKind::PFlow)
        h = 0.5 * (eYf + eYf.adjoint());
      else
        h = (eYf.adjoint() - eYf) / (2.0 * kImag);
      return h;
    }
    default:
      throw InputError("measurement_matrix: PMU kinds are linear");
  }
}

CVec pmu_row(const AdmittanceModel& model, MeasurementKind kind,
             const MeterLocation& loc) {
  if (kind == MeasurementKind::PmuV) {
    check_bus(model, loc);
    CVec row = CVec::Zero(model.bus_count);
    row(loc.bus) = 1.0;
    return row;
  }
  if (kind == MeasurementKind::PmuI) {
    check_branch(model, loc);
    return model.ybranch.row(model.flow_row(loc.branch, loc.end));
  }
  throw InputError("pmu_row: not a PMU kind");
}

CMat graph_laplacian(const GridCase& grid) {
  const Index n = grid.bus_count();
  CMat h0 = CMat::Zero(n, n);
  for (Index b = 0; b < grid.branch_count(); ++b) {
    const double w = std::abs(grid.branches()[b].series_admittance.imag());
    const Index f = grid.from_index(b), t = grid.to_index(b);
    h0(f, f) += w;
    h0(t, t) += w;
    h0(f, t) -= w;
    h0(t, f) -= w;
  }
  return h0;
}

}  // namespace gridstate

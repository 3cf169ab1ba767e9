#include "gridstate/distributed.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "gridstate/psd_solver.hpp"
#include "gridstate/rng.hpp"
#include "gridstate/sdr.hpp"

namespace gridstate {

using nlohmann::json;

namespace {

std::vector<Index> entry_support(const MeasurementEntry& e) {
  std::vector<Index> sup;
  if (is_quadratic(e.kind)) {
    const double tol = 1e-14 * std::max(1.0, e.h.cwiseAbs().maxCoeff());
    for (Index c = 0; c < e.h.cols(); ++c)
      if (e.h.col(c).cwiseAbs().maxCoeff() > tol ||
          e.h.row(c).cwiseAbs().maxCoeff() > tol)
        sup.push_back(c);
  } else {
    const double tol = 1e-14 * std::max(1.0, e.phi.cwiseAbs().maxCoeff());
    for (Index c = 0; c < e.phi.size(); ++c)
      if (std::abs(e.phi(c)) > tol) sup.push_back(c);
  }
  return sup;
}

}  // namespace

namespace {

std::vector<MeterStub> stubs_from_plan(const GridCase& grid,
                                       const MeasurementPlan& plan) {
  std::vector<MeterStub> stubs;
  stubs.reserve(plan.size());
  for (Index m = 0; m < plan.size(); ++m) {
    const auto& e = plan.entry(m);
    MeterStub s;
    if (e.location.bus >= 0)
      s.owner_bus = e.location.bus;
    else
      s.owner_bus = grid.index_of(grid.branches()[e.location.branch].from);
    s.support = entry_support(e);
    stubs.push_back(std::move(s));
  }
  return stubs;
}

}  // namespace

AreaPartition::AreaPartition(const GridCase& grid, const MeasurementPlan& plan,
                             const std::vector<int>& bus_to_area)
    : AreaPartition(grid, stubs_from_plan(grid, plan), bus_to_area) {}

AreaPartition::AreaPartition(const GridCase& grid,
                             const std::vector<MeterStub>& meters,
                             const std::vector<int>& bus_to_area)
    : bus_count_(grid.bus_count()) {
  const Index n = grid.bus_count();
  if (static_cast<Index>(bus_to_area.size()) != n)
    throw InputError("partition: assignment must cover every bus");

  std::map<int, Index> area_index;
  for (int a : bus_to_area)
    if (!area_index.count(a)) {
      const Index k = static_cast<Index>(area_index.size());
      area_index[a] = k;
    }
  const Index k_count = static_cast<Index>(area_index.size());
  areas_.resize(k_count);
  for (auto& [id, k] : area_index) areas_[k].id = id;
  for (Index b = 0; b < n; ++b)
    areas_[area_index.at(bus_to_area[b])].own_buses.push_back(b);
  for (auto& a : areas_)
    if (a.own_buses.empty())
      throw InputError("partition: area " + std::to_string(a.id) +
                       " supervises no bus");

  // Measurement ownership: bus meters go to the supervising area, branch
  // meters to the area owning the from-end bus.
  std::vector<std::set<Index>> state(k_count);
  for (Index k = 0; k < k_count; ++k)
    state[k].insert(areas_[k].own_buses.begin(), areas_[k].own_buses.end());
  for (size_t m = 0; m < meters.size(); ++m) {
    const auto& stub = meters[m];
    const Index k = area_index.at(bus_to_area[stub.owner_bus]);
    areas_[k].measurements.push_back(static_cast<Index>(m));
    for (Index b : stub.support) state[k].insert(b);
  }

  for (Index k = 0; k < k_count; ++k)
    areas_[k].state_buses.assign(state[k].begin(), state[k].end());

  // Shared states; reject buses claimed by three or more areas.
  std::vector<std::vector<Index>> holders(n);
  for (Index k = 0; k < k_count; ++k)
    for (Index b : areas_[k].state_buses) holders[b].push_back(k);
  std::map<std::pair<Index, Index>, std::vector<Index>> pair_buses;
  for (Index b = 0; b < n; ++b) {
    if (holders[b].size() > 2)
      throw InputError("partition: bus " + std::to_string(grid.id_of(b)) +
                       " shared by three or more areas");
    if (holders[b].size() == 2)
      pair_buses[{holders[b][0], holders[b][1]}].push_back(b);
  }
  neighbors_.resize(k_count);
  for (auto& [kl, buses] : pair_buses) {
    SharedPair p;
    p.area_k = static_cast<int>(kl.first);
    p.area_l = static_cast<int>(kl.second);
    p.global_buses = buses;  // already sorted by global index
    for (Index g : buses) {
      const auto& sk = areas_[kl.first].state_buses;
      const auto& sl = areas_[kl.second].state_buses;
      p.local_k.push_back(std::lower_bound(sk.begin(), sk.end(), g) - sk.begin());
      p.local_l.push_back(std::lower_bound(sl.begin(), sl.end(), g) - sl.begin());
    }
    neighbors_[kl.first].push_back(static_cast<Index>(shared_.size()));
    neighbors_[kl.second].push_back(static_cast<Index>(shared_.size()));
    shared_.push_back(std::move(p));
  }
}

CVec AreaPartition::local_state(Index k, const CVec& global) const {
  const auto& sb = areas_[k].state_buses;
  CVec out(sb.size());
  for (size_t i = 0; i < sb.size(); ++i) out(i) = global(sb[i]);
  return out;
}

std::vector<int> load_partition_json(const GridCase& grid,
                                     const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw InputError(std::string("partition schema: ") + e.what());
  }
  std::vector<int> assign(grid.bus_count(), -1);
  try {
    for (const auto& ja : doc.at("areas")) {
      const int id = ja.at("id").get<int>();
      for (const auto& jb : ja.at("buses"))
        assign[grid.index_of(jb.get<int>())] = id;
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("partition schema: ") + e.what());
  }
  for (Index b = 0; b < grid.bus_count(); ++b)
    if (assign[b] < 0)
      throw InputError("partition: bus " + std::to_string(grid.id_of(b)) +
                       " left unassigned");
  return assign;
}

std::vector<int> load_partition_file(const GridCase& grid,
                                     const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("partition not found: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return load_partition_json(grid, ss.str());
}

std::vector<AreaModel> build_area_models(const AreaPartition& partition,
                                         const MeasurementPlan& plan,
                                         const MeasurementSet& set) {
  std::vector<AreaModel> models(partition.area_count());
  for (Index k = 0; k < partition.area_count(); ++k) {
    const Area& area = partition.areas()[k];
    const Index nk = static_cast<Index>(area.state_buses.size());
    std::map<Index, Index> local;
    for (Index i = 0; i < nk; ++i) local[area.state_buses[i]] = i;

    Index rows = 0;
    for (Index m : area.measurements)
      rows += is_quadratic(plan.entry(m).kind) ? 1 : 2;
    Mat h = Mat::Zero(rows, 2 * nk);
    Vec z(rows);
    Index r = 0;
    for (Index m : area.measurements) {
      const auto& e = plan.entry(m);
      if (is_quadratic(e.kind))
        throw InputError("build_area_models expects a linear (PMU) plan");
      const double w = std::sqrt(2.0) / e.sigma;  // prewhitened real rows
      for (Index c = 0; c < e.phi.size(); ++c) {
        if (e.phi(c) == Complex(0, 0)) continue;
        const Index lc = local.at(c);
        h(r, lc) += w * e.phi(c).real();
        h(r, nk + lc) += -w * e.phi(c).imag();
        h(r + 1, lc) += w * e.phi(c).imag();
        h(r + 1, nk + lc) += w * e.phi(c).real();
      }
      z(r) = w * set.values(m).real();
      z(r + 1) = w * set.values(m).imag();
      r += 2;
    }
    models[k] = AreaModel{std::move(h), std::move(z)};
  }
  return models;
}

double auto_penalty(const AreaPartition& partition,
                    const std::vector<AreaModel>& models) {
  double soft = std::numeric_limits<double>::infinity();
  for (Index k = 0; k < partition.area_count(); ++k) {
    const Index nk =
        static_cast<Index>(partition.areas()[k].state_buses.size());
    std::set<Index> shared_coords;
    for (Index p : partition.neighbors()[k]) {
      const auto& pr = partition.shared()[p];
      const auto& loc = pr.area_k == k ? pr.local_k : pr.local_l;
      for (Index i : loc) {
        shared_coords.insert(i);
        shared_coords.insert(i + nk);
      }
    }
    if (shared_coords.empty()) continue;
    const Mat a = models[k].h.transpose() * models[k].h;
    std::vector<Index> s(shared_coords.begin(), shared_coords.end()), priv;
    for (Index i = 0; i < 2 * nk; ++i)
      if (!shared_coords.count(i)) priv.push_back(i);
    Mat ass(s.size(), s.size());
    for (size_t i = 0; i < s.size(); ++i)
      for (size_t j = 0; j < s.size(); ++j) ass(i, j) = a(s[i], s[j]);
    Mat schur = ass;
    if (!priv.empty()) {
      Mat asp(s.size(), priv.size()), app(priv.size(), priv.size());
      for (size_t i = 0; i < s.size(); ++i)
        for (size_t j = 0; j < priv.size(); ++j) asp(i, j) = a(s[i], priv[j]);
      for (size_t i = 0; i < priv.size(); ++i)
        for (size_t j = 0; j < priv.size(); ++j) app(i, j) = a(priv[i], priv[j]);
      app.diagonal().array() += 1e-9 * (1.0 + app.trace());
      schur -= asp * app.ldlt().solve(asp.transpose());
    }
    Eigen::SelfAdjointEigenSolver<Mat> es(schur, Eigen::EigenvaluesOnly);
    soft = std::min(soft, std::max(es.eigenvalues().minCoeff(), 0.0));
  }
  if (!std::isfinite(soft) || soft <= 0.0) {
    double trace = 0.0, cols = 0.0;
    for (const auto& m : models) {
      trace += m.h.squaredNorm();
      cols += static_cast<double>(m.h.cols());
    }
    return cols > 0 ? std::max(trace / cols, 1e-12) : 1.0;
  }
  return 2.0 * soft;
}

ConsensusResult admm_consensus(const AreaPartition& partition,
                               const std::vector<AreaModel>& models,
                               const ConsensusOptions& opts,
                               const ConsensusReferences* refs) {
  const Index k_count = partition.area_count();
  if (static_cast<Index>(models.size()) != k_count)
    throw InputError("admm_consensus: one model per area required");
  const double mu = opts.mu > 0 ? opts.mu : auto_penalty(partition, models);

  ConsensusResult res;
  const auto& pairs = partition.shared();

  // Realified shared coordinate lists per (pair, side).
  struct Side {
    Index area;
    std::vector<Index> coords;  // realified local coordinates
  };
  std::vector<Side> side_k(pairs.size()), side_l(pairs.size());
  for (size_t p = 0; p < pairs.size(); ++p) {
    const auto& pr = pairs[p];
    const Index nk = partition.areas()[pr.area_k].state_buses.size();
    const Index nl = partition.areas()[pr.area_l].state_buses.size();
    side_k[p].area = pr.area_k;
    side_l[p].area = pr.area_l;
    for (size_t i = 0; i < pr.global_buses.size(); ++i) {
      side_k[p].coords.push_back(pr.local_k[i]);
      side_k[p].coords.push_back(pr.local_k[i] + nk);
      side_l[p].coords.push_back(pr.local_l[i]);
      side_l[p].coords.push_back(pr.local_l[i] + nl);
    }
  }

  // Cached normal-equation factorizations.
  std::vector<Eigen::LDLT<Mat>> facts(k_count);
  std::vector<Vec> htz(k_count);
  for (Index k = 0; k < k_count; ++k) {
    const Index nx = models[k].h.cols();
    Mat normal = models[k].h.transpose() * models[k].h;
    for (Index p : partition.neighbors()[k]) {
      const auto& side = side_k[p].area == k ? side_k[p] : side_l[p];
      for (Index c : side.coords) normal(c, c) += mu;
    }
    facts[k].compute(normal);
    if (facts[k].info() != Eigen::Success)
      throw InputError("area " + std::to_string(partition.areas()[k].id) +
                       " subproblem is singular");
    htz[k] = models[k].h.transpose() * models[k].z;
  }

  // Multipliers start at zero. Consensus variables start from a pre-round
  // exchange of unregularized local fits (flat profile where a local model
  // alone is singular), which avoids a long dual warm-up.
  std::vector<Vec> local_fit(k_count);
  for (Index k = 0; k < k_count; ++k) {
    const Index nx = models[k].h.cols();
    Eigen::LDLT<Mat> plain((models[k].h.transpose() * models[k].h).eval());
    Vec flat = Vec::Zero(nx);
    flat.head(nx / 2).setOnes();
    if (plain.info() == Eigen::Success) {
      const Vec fit = plain.solve(models[k].h.transpose() * models[k].z);
      local_fit[k] = fit.allFinite() && fit.cwiseAbs().maxCoeff() < 1e3
                         ? fit
                         : flat;
    } else {
      local_fit[k] = flat;
    }
  }
  std::vector<Vec> v_kl(pairs.size()), lam_k(pairs.size()), lam_l(pairs.size());
  for (size_t p = 0; p < pairs.size(); ++p) {
    const Index d = static_cast<Index>(side_k[p].coords.size());
    v_kl[p] = Vec::Zero(d);
    for (Index i = 0; i < d; ++i)
      v_kl[p](i) = 0.5 * (local_fit[side_k[p].area](side_k[p].coords[i]) +
                          local_fit[side_l[p].area](side_l[p].coords[i]));
    lam_k[p] = Vec::Zero(d);
    lam_l[p] = Vec::Zero(d);
  }

  std::vector<Vec> x(k_count);
  double prev_residual = std::numeric_limits<double>::infinity();
  int growth_streak = 0;

  for (int it = 0; it < opts.max_iters; ++it) {
    // (i) per-area updates; reads only the area's own consensus mailbox
    for (Index k = 0; k < k_count; ++k) {
      Vec rhs = htz[k];
      for (Index p : partition.neighbors()[k]) {
        const auto& side = side_k[p].area == k ? side_k[p] : side_l[p];
        const Vec& lam = side_k[p].area == k ? lam_k[p] : lam_l[p];
        for (size_t i = 0; i < side.coords.size(); ++i)
          rhs(side.coords[i]) += mu * (v_kl[p](i) - lam(i));
      }
      x[k] = facts[k].solve(rhs);
      if (!x[k].allFinite())
        throw InputError("area " + std::to_string(partition.areas()[k].id) +
                         " update failed (unobservable)");
    }

    // (ii) neighboring areas exchange shared states; auxiliary average
    Index messages = 0;
    double residual = 0.0;
    double antisym = 0.0;
    for (size_t p = 0; p < pairs.size(); ++p) {
      const Index d = static_cast<Index>(side_k[p].coords.size());
      Vec xk(d), xl(d);
      for (Index i = 0; i < d; ++i) {
        xk(i) = x[side_k[p].area](side_k[p].coords[i]);
        xl(i) = x[side_l[p].area](side_l[p].coords[i]);
      }
      messages += 2;
      v_kl[p] = 0.5 * (xk + xl);
      // (iii) multiplier updates from the local/auxiliary deviation
      lam_k[p] += xk - v_kl[p];
      lam_l[p] += xl - v_kl[p];
      residual = std::max(residual, (xk - v_kl[p]).cwiseAbs().maxCoeff());
      residual = std::max(residual, (xl - v_kl[p]).cwiseAbs().maxCoeff());
      if (opts.record_multipliers)
        antisym = std::max(antisym, (lam_k[p] + lam_l[p]).cwiseAbs().maxCoeff());
    }

    res.trace.consensus_residual.push_back(residual);
    res.trace.multiplier_antisymmetry.push_back(antisym);
    res.trace.messages.push_back(messages);
    if (refs) {
      Vec ekc = Vec::Zero(k_count), eko = Vec::Zero(k_count);
      for (Index k = 0; k < k_count; ++k) {
        const Index nk = partition.areas()[k].state_buses.size();
        const CVec vk = complexify_vector(x[k]);
        if (!refs->centralized.empty())
          ekc(k) = (vk - refs->centralized[k]).norm() / double(nk);
        if (!refs->truth.empty())
          eko(k) = (vk - refs->truth[k]).norm() / double(nk);
      }
      if (!refs->centralized.empty())
        res.trace.area_error_centralized.push_back(ekc);
      if (!refs->truth.empty()) res.trace.area_error_truth.push_back(eko);
    }

    res.iterations = it + 1;
    if (residual < opts.tol || pairs.empty()) {
      res.converged = true;
      break;
    }
    if (residual > prev_residual) {
      if (++growth_streak >= 50) {
        res.message = "diverging: consensus residual grew for 50 iterations";
        break;
      }
    } else {
      growth_streak = 0;
    }
    prev_residual = residual;
  }

  res.states.resize(k_count);
  for (Index k = 0; k < k_count; ++k) res.states[k] = complexify_vector(x[k]);
  if (res.message.empty())
    res.message = res.converged ? "ok" : "iteration limit reached";
  return res;
}

AntisymmetryReport check_antisymmetry(const ConsensusTrace& trace) {
  AntisymmetryReport rep;
  for (size_t i = 0; i < trace.multiplier_antisymmetry.size(); ++i) {
    if (trace.multiplier_antisymmetry[i] > rep.worst) {
      rep.worst = trace.multiplier_antisymmetry[i];
      rep.worst_iteration = static_cast<Index>(i);
    }
  }
  rep.holds = rep.worst <= 1e-12;
  return rep;
}

OverlapTopologyReport validate_overlap_topology(const AreaPartition& partition) {
  OverlapTopologyReport rep;
  const Index k = partition.area_count();
  const auto& pairs = partition.shared();

  // as4: tree over areas (acyclic and connected).
  std::vector<Index> parent(k);
  for (Index i = 0; i < k; ++i) parent[i] = i;
  auto find = [&](Index a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  bool acyclic = true;
  for (const auto& p : pairs) {
    const Index ra = find(p.area_k), rb = find(p.area_l);
    if (ra == rb) acyclic = false;
    parent[ra] = rb;
  }
  bool connected = true;
  for (Index i = 0; i < k; ++i)
    if (find(i) != find(0)) connected = false;
  rep.as4_tree = acyclic && connected;

  // as5: a bus in own_buses that appears in no shared pair.
  rep.as5_private_bus = true;
  for (Index a = 0; a < k; ++a) {
    std::set<Index> overlapped;
    for (const auto& p : pairs)
      if (p.area_k == a || p.area_l == a)
        overlapped.insert(p.global_buses.begin(), p.global_buses.end());
    bool has_private = false;
    for (Index b : partition.areas()[a].own_buses)
      if (!overlapped.count(b)) has_private = true;
    if (!has_private) rep.as5_private_bus = false;
  }
  return rep;
}

std::vector<MeasurementPlan> build_area_plans(const AreaPartition& partition,
                                              const MeasurementPlan& plan) {
  std::vector<MeasurementPlan> out;
  out.reserve(partition.area_count());
  for (Index k = 0; k < partition.area_count(); ++k) {
    const Area& area = partition.areas()[k];
    const Index nk = static_cast<Index>(area.state_buses.size());
    std::map<Index, Index> local;
    for (Index i = 0; i < nk; ++i) local[area.state_buses[i]] = i;

    std::vector<MeasurementEntry> entries;
    for (Index m : area.measurements) {
      const auto& e = plan.entry(m);
      MeasurementEntry le;
      le.kind = e.kind;
      le.location = e.location;
      le.sigma = e.sigma;
      if (is_quadratic(e.kind)) {
        le.h = CMat::Zero(nk, nk);
        for (Index b : entry_support(e))
          for (Index c : entry_support(e))
            le.h(local.at(b), local.at(c)) = e.h(b, c);
      } else {
        le.phi = CVec::Zero(nk);
        for (Index b : entry_support(e)) le.phi(local.at(b)) = e.phi(b);
      }
      entries.push_back(std::move(le));
    }
    AdmittanceModel dummy;
    dummy.bus_count = nk;
    out.emplace_back(dummy, std::move(entries));
  }
  return out;
}

DistributedSdrResult distributed_sdr(const AreaPartition& partition,
                                     const std::vector<MeasurementPlan>& plans,
                                     const std::vector<CVec>& z_per_area,
                                     const DistributedSdrOptions& opts,
                                     const ConsensusReferences* refs) {
  const Index k_count = partition.area_count();
  DistributedSdrResult res;
  res.topology = validate_overlap_topology(partition);

  const auto& pairs = partition.shared();
  // Realified shared coordinates per pair and side (block indices).
  std::vector<std::vector<Index>> coords_k(pairs.size()), coords_l(pairs.size());
  for (size_t p = 0; p < pairs.size(); ++p) {
    const auto& pr = pairs[p];
    const Index nk = partition.areas()[pr.area_k].state_buses.size();
    const Index nl = partition.areas()[pr.area_l].state_buses.size();
    for (size_t i = 0; i < pr.global_buses.size(); ++i) {
      coords_k[p].push_back(pr.local_k[i]);
      coords_l[p].push_back(pr.local_l[i]);
    }
    for (size_t i = 0; i < pr.global_buses.size(); ++i) {
      coords_k[p].push_back(pr.local_k[i] + nk);
      coords_l[p].push_back(pr.local_l[i] + nl);
    }
  }

  std::vector<Mat> w(k_count);       // per-area lifted iterates (realified)
  std::vector<Mat> v_block(pairs.size()), lam_k(pairs.size()),
      lam_l(pairs.size());
  for (Index k = 0; k < k_count; ++k) {
    const Index nk = partition.areas()[k].state_buses.size();
    w[k] = Mat::Identity(2 * nk, 2 * nk);
  }
  for (size_t p = 0; p < pairs.size(); ++p) {
    const Index d = static_cast<Index>(coords_k[p].size());
    v_block[p] = Mat::Identity(d, d);
    lam_k[p] = Mat::Zero(d, d);
    lam_l[p] = Mat::Zero(d, d);
  }

  auto extract = [](const Mat& m, const std::vector<Index>& idx) {
    Mat out(idx.size(), idx.size());
    for (size_t i = 0; i < idx.size(); ++i)
      for (size_t j = 0; j < idx.size(); ++j) out(i, j) = m(idx[i], idx[j]);
    return out;
  };

  // Inexact ADMM: every round advances each area's central path one notch
  // from a warm start instead of re-solving the barrier problem cold. The
  // final gap is pinned relative to the statistical cost floor (one unit of
  // whitened cost per measurement).
  std::vector<PsdProgram> progs(k_count);
  std::vector<double> tau(k_count), tau_final(k_count);
  for (Index k = 0; k < k_count; ++k) {
    progs[k] = lifted_program(plans[k], z_per_area[k]);
    const double nu = static_cast<double>(progs[k].n);
    tau[k] = (1.0 + std::abs(psd_data_objective(progs[k], w[k]))) / nu;
    tau_final[k] =
        opts.barrier_gap * (1.0 + static_cast<double>(plans[k].size())) / nu;
  }

  for (int it = 0; it < opts.max_iters; ++it) {
    // Per-area lifted subproblems with proximal consensus terms.
    for (Index k = 0; k < k_count; ++k) {
      PsdProgram prog = progs[k];
      for (Index p : partition.neighbors()[k]) {
        const bool is_k = pairs[p].area_k == k;
        PsdProxTerm prox;
        prox.indices = is_k ? coords_k[p] : coords_l[p];
        prox.rho = opts.mu;
        prox.target = v_block[p] - (is_k ? lam_k[p] : lam_l[p]);
        prog.prox.push_back(std::move(prox));
      }
      const double nu = static_cast<double>(prog.n);
      PsdOptions popts;
      popts.max_cg = opts.max_cg;
      popts.warm_start = w[k];
      if (pairs.empty()) {
        popts.gap_tol = tau_final[k] * nu;  // no rounds; solve outright
      } else {
        tau[k] = std::max(0.2 * tau[k], tau_final[k]);
        popts.tau0 = tau[k];  // single stage per round
        popts.gap_tol = tau[k] * nu;
      }
      PsdSolution sol = solve_psd(prog, popts);
      if (!sol.x.allFinite())
        throw InputError("distributed SDR subproblem failed in area " +
                         std::to_string(partition.areas()[k].id));
      w[k] = sol.x;
    }

    // Block consensus and dual updates.
    double residual = 0.0, antisym = 0.0;
    Index messages = 0;
    for (size_t p = 0; p < pairs.size(); ++p) {
      const Mat bk = extract(w[pairs[p].area_k], coords_k[p]);
      const Mat bl = extract(w[pairs[p].area_l], coords_l[p]);
      messages += 2;
      v_block[p] = 0.5 * (bk + bl);
      lam_k[p] += bk - v_block[p];
      lam_l[p] += bl - v_block[p];
      residual = std::max(residual, (bk - v_block[p]).cwiseAbs().maxCoeff());
      residual = std::max(residual, (bl - v_block[p]).cwiseAbs().maxCoeff());
      antisym = std::max(antisym, (lam_k[p] + lam_l[p]).cwiseAbs().maxCoeff());
    }
    res.trace.consensus_residual.push_back(residual);
    res.trace.multiplier_antisymmetry.push_back(antisym);
    res.trace.messages.push_back(messages);

    if (refs && !refs->truth.empty()) {
      Vec eko = Vec::Zero(k_count);
      for (Index k = 0; k < k_count; ++k) {
        const CMat vk = hermitian_from_lifted(w[k]);
        CVec vhat = rank1_recover(vk, RankOneMethod::Eig, 0);
        const CVec& truth = refs->truth[k];
        vhat = align_to_reference(vhat, truth, 0);
        eko(k) = (vhat - truth).norm();
      }
      res.trace.area_error_truth.push_back(eko);
    }

    res.iterations = it + 1;
    if (residual < opts.tol || pairs.empty()) {
      res.converged = true;
      break;
    }
  }

  res.lifted.resize(k_count);
  res.states.resize(k_count);
  for (Index k = 0; k < k_count; ++k) {
    res.lifted[k] = hermitian_from_lifted(w[k]);
    res.states[k] = rank1_recover(res.lifted[k], RankOneMethod::Eig, 0);
  }
  res.message = res.converged ? "ok" : "iteration limit reached";
  return res;
}

MultiAreaCase build_multi_area_case(const GridCase& cell, Index n_areas,
                                    Index extra_edges, std::uint64_t seed) {
  Rng rng(seed);
  const Index nc = cell.bus_count();

  // Connected area graph: random spanning tree plus extra chords.
  std::vector<std::pair<Index, Index>> edges;
  std::set<std::pair<Index, Index>> seen;
  for (Index a = 1; a < n_areas; ++a) {
    const Index b = static_cast<Index>(rng.integer(a));
    edges.push_back({b, a});
    seen.insert({b, a});
  }
  Index added = 0;
  while (added < extra_edges) {
    Index a = static_cast<Index>(rng.integer(n_areas));
    Index b = static_cast<Index>(rng.integer(n_areas));
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    if (seen.count({a, b})) continue;
    seen.insert({a, b});
    edges.push_back({a, b});
    ++added;
  }

  MultiAreaCase out{cell, {}};
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  std::vector<int> bus_to_area;
  for (Index a = 0; a < n_areas; ++a) {
    for (const Bus& b : cell.buses()) {
      Bus nb = b;
      nb.id = static_cast<int>(a) * 1000 + b.id;
      buses.push_back(nb);
      bus_to_area.push_back(static_cast<int>(a));
    }
    for (const Branch& br : cell.branches()) {
      Branch nb = br;
      nb.from = static_cast<int>(a) * 1000 + br.from;
      nb.to = static_cast<int>(a) * 1000 + br.to;
      branches.push_back(nb);
    }
  }
  // Inter-area lines with endpoints drawn inside each incident area. Retry
  // draws that would let one bus extend into a third area.
  std::map<Index, std::set<Index>> touching;  // global bus -> foreign areas
  for (const auto& [a, b] : edges) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      const Index ba = static_cast<Index>(rng.integer(nc));
      const Index bb = static_cast<Index>(rng.integer(nc));
      const Index gb = b * nc + bb;
      // Ownership: the from-end area meters the line, extending into the to
      // bus; keep each bus shared by at most two areas.
      auto& tb = touching[gb];
      if (!tb.empty() && !tb.count(a)) continue;
      Branch br;
      br.from = static_cast<int>(a) * 1000 + cell.buses()[ba].id;
      br.to = static_cast<int>(b) * 1000 + cell.buses()[bb].id;
      br.series_admittance =
          Complex(rng.uniform(0.5, 2.0), -rng.uniform(2.0, 8.0));
      br.shunt_susceptance = 0.0;
      branches.push_back(br);
      tb.insert(a);
      break;
    }
  }
  out.grid = GridCase(std::move(buses), std::move(branches),
                      cell.id_of(cell.reference_index()));
  out.bus_to_area = std::move(bus_to_area);
  return out;
}

}  // namespace gridstate

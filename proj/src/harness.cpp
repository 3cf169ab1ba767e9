#include "gridstate/harness.hpp"

#include <atomic>
#include <cmath>
#include <functional>
#include <thread>

#include <array>
#include <Eigen/Sparse>
#include <json.hpp>

#include "gridstate/io.hpp"

namespace gridstate {

using nlohmann::json;

CVec draw_state(Rng& rng, Index n, Index ref, double mag_lo, double mag_hi,
                double ang_max) {
  CVec v(n);
  for (Index i = 0; i < n; ++i)
    v(i) = std::polar(rng.uniform(mag_lo, mag_hi),
                      rng.uniform(-ang_max, ang_max));
  return anchor_phase(v, ref);
}

namespace {

/// Runs `body(run_index)` over a small worker pool; rejoin preserves order
/// because workers write into per-index slots only.
void parallel_runs(int runs, const std::function<void(int)>& body) {
  const unsigned workers =
      std::max(1u, std::min(std::thread::hardware_concurrency(), 8u));
  if (workers <= 1 || runs < 4) {
    for (int r = 0; r < runs; ++r) body(r);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      while (true) {
        const int r = next.fetch_add(1);
        if (r >= runs) break;
        body(r);
      }
    });
  for (auto& t : pool) t.join();
}

}  // namespace

MeasurementPlan sweep_plan(const AdmittanceModel& model, int prefix,
                           double sigma_power, double sigma_voltage) {
  static const char* kTokens[7] = {"vmag2_all", "pflow_to",  "pflow_from",
                                   "qflow_to",  "qflow_from", "pinj_all",
                                   "qinj_all"};
  if (prefix < 1 || prefix > 7) throw InputError("sweep prefix must be 1..7");
  std::string expr;
  for (int i = 0; i < prefix; ++i) {
    if (i) expr += "+";
    expr += kTokens[i];
  }
  return generate_plan(model, expr, sigma_power, sigma_voltage);
}

std::string SweepResult::to_csv() const {
  CsvTable t;
  t.header = {"types", "gn_mse", "sdr_mse", "fpp_mse", "crlb"};
  for (const auto& r : rows)
    t.rows.push_back({std::to_string(r.types), format_double(r.gn_mse),
                      format_double(r.sdr_mse), format_double(r.fpp_mse),
                      r.observable ? format_double(r.crlb) : "nan"});
  return t.dump();
}

SweepResult run_measurement_sweep(const GridCase& grid,
                                  const AdmittanceModel& model, int runs,
                                  std::uint64_t seed, bool with_sdr,
                                  bool with_fpp) {
  SweepResult result;
  const Index n = grid.bus_count();
  const Index ref = grid.reference_index();

  for (int prefix = 1; prefix <= 7; ++prefix) {
    const MeasurementPlan plan = sweep_plan(model, prefix);
    SweepRow row;
    row.types = prefix;

    std::vector<double> gn_err(runs, 0.0), sdr_err(runs, 0.0),
        fpp_err(runs, 0.0), crlb_tr(runs, 0.0);
    std::vector<char> observable(runs, 0);

    parallel_runs(runs, [&](int r) {
      Rng state_rng(seed, static_cast<std::uint64_t>(r));
      const CVec truth = draw_state(state_rng, n, ref);
      const MeasurementSet set =
          simulate(plan, truth, derive_seed(seed, 1000000 + r * 8 + prefix));

      try {
        crlb_tr[r] = crlb(plan, truth, ref).anchored_trace;
        observable[r] = 1;
      } catch (const InputError&) {
        observable[r] = 0;
      }

      StateEstimate gn = gauss_newton(plan, set, flat_start(n), ref);
      gn_err[r] = (align_to_reference(gn.v_hat, truth, ref) - truth).squaredNorm();

      // Solver tolerances at the Monte-Carlo level: estimation error is
      // noise-floored around 1e-2, so 1e-6-accurate states suffice.
      if (with_sdr) {
        SolverOptions so;
        so.barrier_gap = 1e-6;
        StateEstimate sd = sdr_solve(plan, set, ref, so);
        sdr_err[r] =
            (align_to_reference(sd.v_hat, truth, ref) - truth).squaredNorm();
      }
      if (with_fpp) {
        SolverOptions fo;
        fo.tol = 1e-5;
        fo.barrier_gap = 1e-6;
        StateEstimate fp = fpp_solve(plan, set, flat_start(n), ref, fo);
        fpp_err[r] =
            (align_to_reference(fp.v_hat, truth, ref) - truth).squaredNorm();
      }
    });

    int obs_count = 0;
    for (int r = 0; r < runs; ++r) {
      row.gn_mse += gn_err[r];
      row.sdr_mse += sdr_err[r];
      row.fpp_mse += fpp_err[r];
      if (observable[r]) {
        row.crlb += crlb_tr[r];
        ++obs_count;
      }
    }
    row.gn_mse /= runs;
    row.sdr_mse /= runs;
    row.fpp_mse /= runs;
    auto std_error = [&](const std::vector<double>& err, double mean) {
      double var = 0.0;
      for (int r = 0; r < runs; ++r) var += (err[r] - mean) * (err[r] - mean);
      return std::sqrt(var / std::max(runs - 1, 1)) / std::sqrt(double(runs));
    };
    row.gn_se = std_error(gn_err, row.gn_mse);
    row.sdr_se = std_error(sdr_err, row.sdr_mse);
    row.fpp_se = std_error(fpp_err, row.fpp_mse);
    row.observable = obs_count == runs;
    if (obs_count > 0) row.crlb /= obs_count;
    result.rows.push_back(row);
  }
  return result;
}

// --- bad data study ----------------------------------------------------------

std::string BadDataResult::to_csv() const {
  CsvTable t;
  t.header = {"scenario", "method", "mse"};
  for (const auto& r : rows) {
    t.rows.push_back({r.scenario, "ga_lse", format_double(r.ga_lse)});
    t.rows.push_back({r.scenario, "lse", format_double(r.lse)});
    t.rows.push_back({r.scenario, "lnrt", format_double(r.lnrt)});
    t.rows.push_back({r.scenario, "huber", format_double(r.huber)});
  }
  return t.dump();
}

namespace {

LinearModel realify_pmu_model(const MeasurementPlan& plan, const CVec& z) {
  const Index n = plan.bus_count();
  LinearModel model;
  model.h.resize(plan.real_size(), 2 * n);
  model.z.resize(plan.real_size());
  Index r = 0;
  for (Index m = 0; m < plan.size(); ++m) {
    const auto& e = plan.entry(m);
    if (is_quadratic(e.kind))
      throw InputError("bad-data study expects a PMU plan");
    const double w = std::sqrt(2.0) / e.sigma;
    model.h.row(r).head(n) = w * e.phi.real();
    model.h.row(r).tail(n) = -w * e.phi.imag();
    model.h.row(r + 1).head(n) = w * e.phi.imag();
    model.h.row(r + 1).tail(n) = w * e.phi.real();
    model.z(r) = w * z(m).real();
    model.z(r + 1) = w * z(m).imag();
    r += 2;
  }
  return model;
}

LinearModel drop_model_rows(const LinearModel& model,
                            const std::vector<Index>& rows) {
  std::vector<char> dead(model.h.rows(), 0);
  for (Index r : rows) dead[r] = 1;
  LinearModel out;
  const Index keep = model.h.rows() - static_cast<Index>(rows.size());
  out.h.resize(keep, model.h.cols());
  out.z.resize(keep);
  Index w = 0;
  for (Index r = 0; r < model.h.rows(); ++r) {
    if (dead[r]) continue;
    out.h.row(w) = model.h.row(r);
    out.z(w) = model.z(r);
    ++w;
  }
  return out;
}

}  // namespace

BadDataResult run_baddata_study(const GridCase& grid,
                                const MeasurementPlan& plan, int runs,
                                std::uint64_t seed) {
  const Index n = grid.bus_count();
  const Index ref = grid.reference_index();

  // Indices of the corruption targets inside the plan.
  auto find_entry = [&](MeasurementKind kind, int bus, int from,
                        int to) -> Index {
    for (Index m = 0; m < plan.size(); ++m) {
      const auto& e = plan.entry(m);
      if (e.kind != kind) continue;
      if (kind == MeasurementKind::PmuV && grid.id_of(e.location.bus) == bus)
        return m;
      if (kind == MeasurementKind::PmuI) {
        const Branch& br = grid.branches()[e.location.branch];
        if (br.from == from && br.to == to) return m;
      }
    }
    throw InputError("plan lacks the required corruption target");
  };
  const Index i47 = find_entry(MeasurementKind::PmuI, 0, 4, 7);
  const Index v5 = find_entry(MeasurementKind::PmuV, 5, 0, 0);
  const Index i1011 = find_entry(MeasurementKind::PmuI, 0, 10, 11);

  const std::vector<std::vector<Index>> scenarios = {
      {}, {i47}, {i47, v5}, {v5, i47, i1011}};
  const std::vector<std::string> names = {"S0", "S1", "S2", "S3"};

  BadDataResult result;
  for (size_t s = 0; s < scenarios.size(); ++s) {
    std::vector<double> e_ga(runs), e_lse(runs), e_lnrt(runs), e_huber(runs);
    parallel_runs(runs, [&](int r) {
      Rng state_rng(seed, static_cast<std::uint64_t>(r));
      // Near-flat operating points keep the 1.2x corruption at a realistic
      // multiple of the meter noise; wide-angle draws would turn tie-line
      // corruptions into hundreds of sigmas and change the regime entirely.
      const CVec truth = draw_state(state_rng, n, ref, 0.98, 1.02, 0.03);
      MeasurementSet set =
          simulate(plan, truth, derive_seed(seed, 500000 + r));
      for (Index m : scenarios[s]) set.values(m) *= 1.2;

      const LinearModel model = realify_pmu_model(plan, set.values);
      const Vec x_true = realify_vector(truth);

      // Genie-aided LSE: drop the corrupted rows outright.
      std::vector<Index> bad_rows;
      for (Index m : scenarios[s]) {
        bad_rows.push_back(2 * m);
        bad_rows.push_back(2 * m + 1);
      }
      e_ga[r] = (lse_solve(drop_model_rows(model, bad_rows)) - x_true).norm();
      e_lse[r] = (lse_solve(model) - x_true).norm();
      e_lnrt[r] = (lnr_iterate(model, 3.0).v_hat - x_true).norm();
      e_huber[r] = (huber_solve(model, 1.34).v_hat - x_true).norm();
    });
    BadDataRow row;
    row.scenario = names[s];
    for (int r = 0; r < runs; ++r) {
      row.ga_lse += e_ga[r];
      row.lse += e_lse[r];
      row.lnrt += e_lnrt[r];
      row.huber += e_huber[r];
    }
    row.ga_lse /= runs;
    row.lse /= runs;
    row.lnrt /= runs;
    row.huber /= runs;
    result.rows.push_back(row);
  }
  return result;
}

// --- distributed -------------------------------------------------------------

CVec centralized_lse(const MeasurementPlan& plan, const MeasurementSet& set) {
  const Index n = plan.bus_count();
  const Index nx = 2 * n;
  std::vector<Eigen::Triplet<double>> trips;
  Vec rhs = Vec::Zero(nx);

  for (Index m = 0; m < plan.size(); ++m) {
    const auto& e = plan.entry(m);
    if (is_quadratic(e.kind))
      throw InputError("centralized_lse expects a PMU plan");
    const double w2 = 2.0 / (e.sigma * e.sigma);
    std::vector<Index> sup;
    for (Index c = 0; c < n; ++c)
      if (e.phi(c) != Complex(0, 0)) sup.push_back(c);
    // Normal-equation contribution of the two real rows: w2 * Re(phi_a
    // conj(phi_b)) pattern on the realified blocks.
    for (Index a : sup)
      for (Index b : sup) {
        const Complex pab = e.phi(a) * std::conj(e.phi(b));
        trips.emplace_back(a, b, w2 * pab.real());
        trips.emplace_back(n + a, n + b, w2 * pab.real());
        trips.emplace_back(n + a, b, -w2 * pab.imag());
        trips.emplace_back(a, n + b, w2 * pab.imag());
      }
    for (Index a : sup) {
      const Complex t = std::conj(e.phi(a)) * set.values(m);
      rhs(a) += w2 * t.real();
      rhs(n + a) += w2 * t.imag();
    }
  }
  Eigen::SparseMatrix<double> normal(nx, nx);
  normal.setFromTriplets(trips.begin(), trips.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(normal);
  if (solver.info() != Eigen::Success)
    throw InputError("centralized model is unobservable");
  Vec x = solver.solve(rhs);
  return complexify_vector(x);
}

DistributedRunResult run_distributed_experiment(
    const GridCase& grid, const MeasurementPlan& plan,
    const std::vector<int>& assignment, std::uint64_t seed,
    const ConsensusOptions& opts, bool with_robust, bool with_centralized) {
  const Index n = grid.bus_count();
  const Index ref = grid.reference_index();

  Rng rng(seed);
  const CVec truth = draw_state(rng, n, ref, 0.95, 1.05, 0.3);
  const MeasurementSet set = simulate(plan, truth, derive_seed(seed, 77));

  AreaPartition partition(grid, plan, assignment);
  const auto models = build_area_models(partition, plan, set);

  ConsensusReferences refs;
  refs.truth.resize(partition.area_count());
  for (Index k = 0; k < partition.area_count(); ++k)
    refs.truth[k] = partition.local_state(k, truth);
  if (with_centralized) {
    const CVec central = centralized_lse(plan, set);
    refs.centralized.resize(partition.area_count());
    for (Index k = 0; k < partition.area_count(); ++k)
      refs.centralized[k] = partition.local_state(k, central);
  }

  DistributedRunResult out;
  out.consensus = admm_consensus(partition, models, opts, &refs);
  out.antisymmetry = check_antisymmetry(out.consensus.trace);
  if (with_robust)
    out.robust = admm_robust(partition, models, 1.34, opts, &refs);

  for (size_t it = 0; it < out.consensus.trace.area_error_truth.size(); ++it) {
    if (out.consensus.trace.area_error_truth[it].mean() <= 1e-3) {
      out.iters_to_1e3 = static_cast<int>(it) + 1;
      break;
    }
  }
  out.trace_csv = trace_to_csv(out.consensus.trace);
  return out;
}

DistributedRunResult run_multi_area_experiment(const GridCase& cell,
                                               Index n_areas, Index extra_edges,
                                               std::uint64_t seed, double sigma,
                                               const ConsensusOptions& opts,
                                               bool with_centralized) {
  const MultiAreaCase multi =
      build_multi_area_case(cell, n_areas, extra_edges, seed);
  const GridCase& grid = multi.grid;
  const Index n = grid.bus_count();
  const Index ref = grid.reference_index();

  // One voltage phasor per bus, one current phasor at every from end;
  // coefficients come straight from the branch parameters.
  struct Coeff {
    Index bus;
    Complex value;
  };
  struct Meter {
    MeterStub stub;
    std::array<Coeff, 2> coeffs;
    int n_coeffs = 1;
  };
  std::vector<Meter> meters;
  meters.reserve(n + grid.branch_count());
  for (Index b = 0; b < n; ++b) {
    Meter m;
    m.stub.owner_bus = b;
    m.stub.support = {b};
    m.coeffs[0] = {b, Complex(1.0, 0.0)};
    meters.push_back(m);
  }
  for (Index br = 0; br < grid.branch_count(); ++br) {
    const Branch& line = grid.branches()[br];
    const Index f = grid.from_index(br), t = grid.to_index(br);
    const Complex y = line.series_admittance;
    const Complex ysh(0.0, line.shunt_susceptance / 2.0);
    Meter m;
    m.stub.owner_bus = f;
    m.stub.support = {f, t};
    m.coeffs[0] = {f, (y + ysh) / std::norm(line.tap_ratio)};
    m.coeffs[1] = {t, -y / std::conj(line.tap_ratio)};
    m.n_coeffs = 2;
    meters.push_back(m);
  }

  Rng rng(seed);
  const CVec truth = draw_state(rng, n, ref, 0.95, 1.05, 0.3);
  Rng noise(derive_seed(seed, 77));
  CVec z(meters.size());
  for (size_t m = 0; m < meters.size(); ++m) {
    Complex value = 0.0;
    for (int c = 0; c < meters[m].n_coeffs; ++c)
      value += meters[m].coeffs[c].value * truth(meters[m].coeffs[c].bus);
    z(m) = value + noise.circular_gaussian(sigma);
  }

  std::vector<MeterStub> stubs;
  stubs.reserve(meters.size());
  for (const auto& m : meters) stubs.push_back(m.stub);
  AreaPartition partition(grid, stubs, multi.bus_to_area);

  // Per-area realified prewhitened models.
  std::vector<AreaModel> models(partition.area_count());
  const double w = std::sqrt(2.0) / sigma;
  for (Index k = 0; k < partition.area_count(); ++k) {
    const Area& area = partition.areas()[k];
    const Index nk = static_cast<Index>(area.state_buses.size());
    std::map<Index, Index> local;
    for (Index i = 0; i < nk; ++i) local[area.state_buses[i]] = i;
    Mat h = Mat::Zero(2 * area.measurements.size(), 2 * nk);
    Vec zr(2 * area.measurements.size());
    Index r = 0;
    for (Index m : area.measurements) {
      for (int c = 0; c < meters[m].n_coeffs; ++c) {
        const Index lc = local.at(meters[m].coeffs[c].bus);
        const Complex phi = meters[m].coeffs[c].value;
        h(r, lc) += w * phi.real();
        h(r, nk + lc) += -w * phi.imag();
        h(r + 1, lc) += w * phi.imag();
        h(r + 1, nk + lc) += w * phi.real();
      }
      zr(r) = w * z(m).real();
      zr(r + 1) = w * z(m).imag();
      r += 2;
    }
    models[k] = AreaModel{std::move(h), std::move(zr)};
  }

  ConsensusReferences refs;
  refs.truth.resize(partition.area_count());
  for (Index k = 0; k < partition.area_count(); ++k)
    refs.truth[k] = partition.local_state(k, truth);
  if (with_centralized) {
    // Sparse normal equations over the realified global state.
    std::vector<Eigen::Triplet<double>> trips;
    Vec rhs = Vec::Zero(2 * n);
    const double w2 = 2.0 / (sigma * sigma);
    for (size_t m = 0; m < meters.size(); ++m) {
      for (int a = 0; a < meters[m].n_coeffs; ++a)
        for (int b = 0; b < meters[m].n_coeffs; ++b) {
          const Index ia = meters[m].coeffs[a].bus,
                      ib = meters[m].coeffs[b].bus;
          const Complex pab =
              meters[m].coeffs[a].value * std::conj(meters[m].coeffs[b].value);
          trips.emplace_back(ia, ib, w2 * pab.real());
          trips.emplace_back(n + ia, n + ib, w2 * pab.real());
          trips.emplace_back(n + ia, ib, -w2 * pab.imag());
          trips.emplace_back(ia, n + ib, w2 * pab.imag());
        }
      for (int a = 0; a < meters[m].n_coeffs; ++a) {
        const Index ia = meters[m].coeffs[a].bus;
        const Complex t = std::conj(meters[m].coeffs[a].value) * z(m);
        rhs(ia) += w2 * t.real();
        rhs(n + ia) += w2 * t.imag();
      }
    }
    Eigen::SparseMatrix<double> normal(2 * n, 2 * n);
    normal.setFromTriplets(trips.begin(), trips.end());
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(normal);
    if (solver.info() != Eigen::Success)
      throw InputError("multi-area centralized model is unobservable");
    const CVec central = complexify_vector(solver.solve(rhs));
    refs.centralized.resize(partition.area_count());
    for (Index k = 0; k < partition.area_count(); ++k)
      refs.centralized[k] = partition.local_state(k, central);
  }

  DistributedRunResult out;
  out.consensus = admm_consensus(partition, models, opts, &refs);
  out.antisymmetry = check_antisymmetry(out.consensus.trace);
  for (size_t it = 0; it < out.consensus.trace.area_error_truth.size(); ++it) {
    if (out.consensus.trace.area_error_truth[it].mean() <= 1e-3) {
      out.iters_to_1e3 = static_cast<int>(it) + 1;
      break;
    }
  }
  out.trace_csv = trace_to_csv(out.consensus.trace);
  return out;
}

// --- tracking ----------------------------------------------------------------

TrackScenario load_track_scenario(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw InputError(std::string("scenario schema: ") + e.what());
  }
  TrackScenario s;
  s.steps = doc.value("steps", s.steps);
  s.kind = doc.value("kind", s.kind);
  s.mag_rate = doc.value("mag_rate", s.mag_rate);
  s.ang_rate = doc.value("ang_rate", s.ang_rate);
  s.sigma_power = doc.value("sigma_power", s.sigma_power);
  s.sigma_voltage = doc.value("sigma_voltage", s.sigma_voltage);
  s.holt_alpha = doc.value("holt_alpha", s.holt_alpha);
  s.holt_beta = doc.value("holt_beta", s.holt_beta);
  s.mhe_window = doc.value("mhe_window", s.mhe_window);
  s.mhe_lambda = doc.value("mhe_lambda", s.mhe_lambda);
  s.process_noise = doc.value("process_noise", s.process_noise);
  if (doc.contains("regret_checkpoints"))
    s.regret_checkpoints = doc["regret_checkpoints"].get<std::vector<int>>();
  return s;
}

std::string TrackResult::to_csv() const {
  CsvTable t;
  t.header = {"t", "method", "state_error", "cost", "regret"};
  for (const auto& r : rows)
    t.rows.push_back({std::to_string(r.t), r.method,
                      format_double(r.state_error), format_double(r.cost),
                      format_double(r.regret)});
  return t.dump();
}

TrackResult run_tracking(const GridCase& grid, const AdmittanceModel& model,
                         const TrackScenario& scenario, std::uint64_t seed) {
  const Index n = grid.bus_count();
  const Index ref = grid.reference_index();
  const MeasurementPlan plan = generate_plan(
      model, "vmag2_all+pflow_both_ends+qflow_both_ends",
      scenario.sigma_power, scenario.sigma_voltage);

  // Truth trajectory: per-bus magnitude and angle drifts.
  Rng rng(seed);
  CVec v0 = draw_state(rng, n, ref, 0.98, 1.02, 0.1);
  Vec dmag = Vec::Zero(n), dang = Vec::Zero(n);
  if (scenario.kind == "ramp") {
    for (Index i = 0; i < n; ++i) {
      dmag(i) = rng.uniform(-1.0, 1.0) * scenario.mag_rate;
      dang(i) = rng.uniform(-1.0, 1.0) * scenario.ang_rate;
    }
  }
  auto truth_at = [&](int t) {
    CVec v(n);
    for (Index i = 0; i < n; ++i)
      v(i) = std::polar(std::abs(v0(i)) + t * dmag(i),
                        std::arg(v0(i)) + t * dang(i));
    return v;
  };

  TrackResult result;
  OnlineTracker online(n);
  EkfState ekf = ekf_init(flat_start(n), 1.0);
  HoltSmoother holt(scenario.holt_alpha, scenario.holt_beta);
  holt.update(flat_start(n));

  std::vector<MheWindowStep> window;
  CVec mhe_predictor = flat_start(n);
  std::vector<CVec> mhe_estimates;

  size_t checkpoint = 0;
  std::vector<std::pair<int, double>> regrets;

  for (int t = 1; t <= scenario.steps; ++t) {
    const CVec truth = truth_at(t);
    const MeasurementSet set =
        simulate(plan, truth, derive_seed(seed, 9000 + t));

    // Online lifted tracker.
    online.step(plan, set.values);
    const CVec v_online =
        align_to_reference(online.state_estimate(ref), truth, ref);
    result.rows.push_back({t, "online", (v_online - truth).norm(),
                           online.losses().back(), 0.0});
    if (checkpoint < scenario.regret_checkpoints.size() &&
        t == scenario.regret_checkpoints[checkpoint]) {
      const auto reg = online.regret_report(1e-6);
      regrets.emplace_back(t, reg.value);
      ++checkpoint;
    }

    // EKF with Holt-identified dynamics.
    DynamicsModel dyn = holt.history() >= 2
                            ? holt.to_dynamics(n, scenario.process_noise)
                            : DynamicsModel::identity(n, scenario.process_noise);
    ekf = ekf_step(ekf, dyn, plan, set.values);
    holt.update(ekf.v);
    const CVec v_ekf = align_to_reference(ekf.v, truth, ref);
    result.rows.push_back({t, "ekf", (v_ekf - truth).norm(),
                           wls_cost(plan, set.values, ekf.v), 0.0});

    // Moving-horizon estimator over the last L+1 sets.
    MheWindowStep step;
    step.plan = &plan;
    step.z = set.values;
    step.f = dyn.f;
    window.push_back(step);
    if (static_cast<int>(window.size()) > scenario.mhe_window + 1)
      window.erase(window.begin());
    if (static_cast<int>(window.size()) == scenario.mhe_window + 1) {
      MheResult mhe = mhe_solve(window, mhe_predictor, scenario.mhe_lambda,
                                MheMode::GaussNewton, ref);
      const CVec v_mhe =
          align_to_reference(mhe.smoothed.back(), truth, ref);
      result.rows.push_back({t, "mhe", (v_mhe - truth).norm(), mhe.cost, 0.0});
      // Predictor for the next window start comes from this smoothing pass.
      mhe_predictor = mhe.smoothed[1];
    }
  }

  result.regret_at = regrets;
  for (auto& [t, r] : regrets)
    result.rows.push_back({t, "online_regret", 0.0, 0.0, r});
  return result;
}

}  // namespace gridstate

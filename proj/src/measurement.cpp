#include "gridstate/measurement.hpp"

#include <fstream>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <json.hpp>

namespace gridstate {

using nlohmann::json;

MeasurementPlan::MeasurementPlan(const AdmittanceModel& model,
                                 std::vector<MeasurementEntry> entries)
    : entries_(std::move(entries)), bus_count_(model.bus_count) {
  if (entries_.empty()) throw InputError("measurement plan is empty");
  for (const auto& e : entries_)
    if (!(e.sigma > 0.0)) throw InputError("sigma must be positive");
}

Index MeasurementPlan::real_size() const {
  Index m = 0;
  for (const auto& e : entries_) m += is_quadratic(e.kind) ? 1 : 2;
  return m;
}

bool MeasurementPlan::has_pmu() const {
  for (const auto& e : entries_)
    if (!is_quadratic(e.kind)) return true;
  return false;
}

void MeasurementPlan::set_quadratic_covariance(const Mat& sigma_eps) {
  Index nq = 0;
  for (const auto& e : entries_)
    if (is_quadratic(e.kind)) ++nq;
  if (sigma_eps.rows() != nq || sigma_eps.cols() != nq)
    throw InputError("covariance size must match quadratic entry count");
  if ((sigma_eps - sigma_eps.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw InputError("covariance must be symmetric");
  Eigen::LLT<Mat> llt(sigma_eps);
  if (llt.info() != Eigen::Success)
    throw InputError("covariance must be positive definite");
  cov_ = sigma_eps;
}

MeasurementEntry make_entry(const AdmittanceModel& model, MeasurementKind kind,
                            const MeterLocation& loc, double sigma) {
  MeasurementEntry e;
  e.kind = kind;
  e.location = loc;
  e.sigma = sigma;
  if (is_quadratic(kind))
    e.h = measurement_matrix(model, kind, loc);
  else
    e.phi = pmu_row(model, kind, loc);
  return e;
}

MeasurementPlan build_plan(const AdmittanceModel& model,
                           const std::vector<PlanSpec>& specs) {
  std::vector<MeasurementEntry> entries;
  entries.reserve(specs.size());
  for (const auto& s : specs)
    entries.push_back(make_entry(model, s.kind, s.location, s.sigma));
  return MeasurementPlan(model, std::move(entries));
}

MeasurementPlan generate_plan(const AdmittanceModel& model,
                              const std::string& expr, double sigma_power,
                              double sigma_voltage) {
  std::vector<PlanSpec> specs;
  auto all_buses = [&](MeasurementKind kind, double sigma) {
    for (Index i = 0; i < model.bus_count; ++i)
      specs.push_back({kind, MeterLocation{i, -1, BranchEnd::From}, sigma});
  };
  auto all_branches = [&](MeasurementKind kind, BranchEnd end, double sigma) {
    for (Index b = 0; b < model.branch_count; ++b)
      specs.push_back({kind, MeterLocation{-1, b, end}, sigma});
  };

  std::stringstream ss(expr);
  std::string token;
  while (std::getline(ss, token, '+')) {
    // trim
    const auto b = token.find_first_not_of(" \t");
    const auto e = token.find_last_not_of(" \t");
    if (b == std::string::npos) continue;
    token = token.substr(b, e - b + 1);

    if (token == "vmag2_all")
      all_buses(MeasurementKind::Vmag2, sigma_voltage);
    else if (token == "pinj_all")
      all_buses(MeasurementKind::PInj, sigma_power);
    else if (token == "qinj_all")
      all_buses(MeasurementKind::QInj, sigma_power);
    else if (token == "pmu_v_all")
      all_buses(MeasurementKind::PmuV, sigma_voltage);
    else if (token == "pflow_from")
      all_branches(MeasurementKind::PFlow, BranchEnd::From, sigma_power);
    else if (token == "pflow_to")
      all_branches(MeasurementKind::PFlow, BranchEnd::To, sigma_power);
    else if (token == "qflow_from")
      all_branches(MeasurementKind::QFlow, BranchEnd::From, sigma_power);
    else if (token == "qflow_to")
      all_branches(MeasurementKind::QFlow, BranchEnd::To, sigma_power);
    else if (token == "pmu_i_from")
      all_branches(MeasurementKind::PmuI, BranchEnd::From, sigma_voltage);
    else if (token == "pflow_both_ends") {
      all_branches(MeasurementKind::PFlow, BranchEnd::From, sigma_power);
      all_branches(MeasurementKind::PFlow, BranchEnd::To, sigma_power);
    } else if (token == "qflow_both_ends") {
      all_branches(MeasurementKind::QFlow, BranchEnd::From, sigma_power);
      all_branches(MeasurementKind::QFlow, BranchEnd::To, sigma_power);
    } else {
      throw InputError("unknown plan token: " + token);
    }
  }
  return build_plan(model, specs);
}

MeasurementPlan load_plan_json(const AdmittanceModel& model,
                               const GridCase& grid,
                               const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw InputError(std::string("plan schema: ") + e.what());
  }
  const json& list = doc.is_array() ? doc : doc.at("measurements");
  std::vector<PlanSpec> specs;
  try {
    for (const auto& jm : list) {
      PlanSpec s{};
      s.kind = kind_from_name(jm.at("kind").get<std::string>());
      s.sigma = jm.at("sigma").get<double>();
      if (jm.contains("bus")) {
        s.location.bus = grid.index_of(jm.at("bus").get<int>());
      }
      if (jm.contains("branch")) {
        const auto& jb = jm.at("branch");
        Index br = grid.find_branch(jb.at(0).get<int>(), jb.at(1).get<int>());
        if (br < 0)
          throw InputError("plan references missing branch " +
                           std::to_string(jb.at(0).get<int>()) + "-" +
                           std::to_string(jb.at(1).get<int>()));
        s.location.branch = br;
        s.location.end = jm.value("end", std::string("from")) == "to"
                             ? BranchEnd::To
                             : BranchEnd::From;
      }
      specs.push_back(s);
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("plan schema: ") + e.what());
  }
  return build_plan(model, specs);
}

MeasurementPlan load_plan_file(const AdmittanceModel& model,
                               const GridCase& grid, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("plan not found: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return load_plan_json(model, grid, ss.str());
}

CVec evaluate(const MeasurementPlan& plan, const CVec& v) {
  if (v.size() != plan.bus_count())
    throw InputError("evaluate: state dimension mismatch");
  CVec out(plan.size());
  for (Index m = 0; m < plan.size(); ++m) {
    const auto& e = plan.entry(m);
    if (is_quadratic(e.kind)) {
      const Complex q = v.dot(e.h * v);  // v^H H v
      out(m) = q.real();
    } else {
      out(m) = (e.phi.transpose() * v).value();  // row map, no conjugation
    }
  }
  return out;
}

CMat jacobian(const MeasurementPlan& plan, const CVec& v) {
  if (v.size() != plan.bus_count())
    throw InputError("jacobian: state dimension mismatch");
  CMat j(plan.size(), plan.bus_count());
  for (Index m = 0; m < plan.size(); ++m) {
    const auto& e = plan.entry(m);
    if (is_quadratic(e.kind))
      j.row(m) = (e.h * v).adjoint();
    else
      j.row(m) = e.phi.transpose();
  }
  return j;
}

Mat real_jacobian(const MeasurementPlan& plan, const CVec& v) {
  const Index n = plan.bus_count();
  Mat j(plan.real_size(), 2 * n);
  Index r = 0;
  for (Index m = 0; m < plan.size(); ++m) {
    const auto& e = plan.entry(m);
    if (is_quadratic(e.kind)) {
      const CVec g = e.h * v;
      j.row(r).head(n) = 2.0 * g.real();
      j.row(r).tail(n) = 2.0 * g.imag();
      ++r;
    } else {
      j.row(r).head(n) = e.phi.real();
      j.row(r).tail(n) = -e.phi.imag();
      j.row(r + 1).head(n) = e.phi.imag();
      j.row(r + 1).tail(n) = e.phi.real();
      r += 2;
    }
  }
  return j;
}

Vec real_residual(const MeasurementPlan& plan, const CVec& v, const CVec& z) {
  const CVec h = evaluate(plan, v);
  Vec out(plan.real_size());
  Index r = 0;
  for (Index m = 0; m < plan.size(); ++m) {
    const Complex d = z(m) - h(m);
    if (is_quadratic(plan.entry(m).kind)) {
      out(r++) = d.real();
    } else {
      out(r++) = d.real();
      out(r++) = d.imag();
    }
  }
  return out;
}

Vec real_weights(const MeasurementPlan& plan) {
  Vec w(plan.real_size());
  Index r = 0;
  for (Index m = 0; m < plan.size(); ++m) {
    const auto& e = plan.entry(m);
    const double inv = 1.0 / (e.sigma * e.sigma);
    if (is_quadratic(e.kind)) {
      w(r++) = inv;
    } else {
      w(r++) = 2.0 * inv;
      w(r++) = 2.0 * inv;
    }
  }
  return w;
}

double wls_cost(const MeasurementPlan& plan, const CVec& z, const CVec& v) {
  const Vec r = real_residual(plan, v, z);
  const Vec w = real_weights(plan);
  return r.dot(w.asDiagonal() * r);
}

MeasurementSet simulate(const MeasurementPlan& plan, const CVec& v_true,
                        std::uint64_t seed) {
  Rng rng(seed);
  MeasurementSet set;
  set.values = evaluate(plan, v_true);
  for (Index m = 0; m < plan.size(); ++m) {
    const auto& e = plan.entry(m);
    if (is_quadratic(e.kind))
      set.values(m) += rng.gaussian(e.sigma);
    else
      set.values(m) += rng.circular_gaussian(e.sigma);
  }
  return set;
}

MeasurementSet simulate_noiseless(const MeasurementPlan& plan,
                                  const CVec& v_true) {
  return MeasurementSet{evaluate(plan, v_true), 0};
}

WhitenedProblem prewhiten(const MeasurementPlan& plan,
                          const MeasurementSet& set) {
  std::vector<MeasurementEntry> entries = plan.entries();
  CVec z = set.values;

  if (plan.quadratic_covariance()) {
    // Full covariance over the quadratic block: transform by Sigma^{-1/2},
    // which mixes the Hermitian matrices but keeps entries quadratic.
    std::vector<Index> qidx;
    for (Index m = 0; m < plan.size(); ++m)
      if (is_quadratic(entries[m].kind)) qidx.push_back(m);
    const Mat& cov = *plan.quadratic_covariance();
    Eigen::SelfAdjointEigenSolver<Mat> es(cov);
    Mat w = es.eigenvectors() *
            es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
            es.eigenvectors().transpose();  // Sigma^{-1/2}
    const Index nq = static_cast<Index>(qidx.size());
    std::vector<CMat> mixed(nq);
    Vec zq(nq);
    for (Index i = 0; i < nq; ++i) {
      mixed[i] = CMat::Zero(plan.bus_count(), plan.bus_count());
      double zi = 0;
      for (Index k = 0; k < nq; ++k) {
        mixed[i] += w(i, k) * entries[qidx[k]].h;
        zi += w(i, k) * set.values(qidx[k]).real();
      }
      zq(i) = zi;
    }
    for (Index i = 0; i < nq; ++i) {
      entries[qidx[i]].h = mixed[i];
      entries[qidx[i]].sigma = 1.0;
      z(qidx[i]) = zq(i);
    }
  } else {
    for (Index m = 0; m < plan.size(); ++m) {
      if (!is_quadratic(entries[m].kind)) continue;
      const double s = entries[m].sigma;
      entries[m].h /= s;
      z(m) /= s;
      entries[m].sigma = 1.0;
    }
  }
  // PMU entries stay diagonal.
  for (Index m = 0; m < static_cast<Index>(entries.size()); ++m) {
    auto& e = entries[m];
    if (is_quadratic(e.kind)) continue;
    const double s = e.sigma;
    e.phi /= s;
    z(m) /= s;
    e.sigma = 1.0;
  }

  AdmittanceModel dummy;
  dummy.bus_count = plan.bus_count();
  WhitenedProblem out{MeasurementPlan(dummy, std::move(entries)),
                      MeasurementSet{z, set.timestamp}};
  return out;
}

FisherInformation fim(const MeasurementPlan& plan, const CVec& v) {
  const Index n = plan.bus_count();
  CMat f = CMat::Zero(2 * n, 2 * n);
  for (Index m = 0; m < plan.size(); ++m) {
    const auto& e = plan.entry(m);
    const double w = 1.0 / (e.sigma * e.sigma);
    if (is_quadratic(e.kind)) {
      CVec g(2 * n);
      g.head(n) = e.h * v;
      g.tail(n) = (e.h * v).conjugate();
      f += w * g * g.adjoint();
    } else {
      // Exact linear-model blocks for circular complex noise: the conjugate
      // cross blocks vanish.
      f.topLeftCorner(n, n) += w * e.phi.conjugate() * e.phi.transpose();
      f.bottomRightCorner(n, n) += w * e.phi * e.phi.adjoint();
    }
  }
  f = 0.5 * (f + f.adjoint()).eval();
  return FisherInformation{f};
}

CrlbResult crlb(const MeasurementPlan& plan, const CVec& v, Index ref_bus) {
  const Index n = plan.bus_count();
  const FisherInformation info = fim(plan, v);

  Eigen::SelfAdjointEigenSolver<CMat> es(info.f);
  const Vec evals = es.eigenvalues();
  const double cutoff = 1e-10 * evals.cwiseAbs().maxCoeff();

  // Structural deficiency from the global phase is exactly one null
  // direction for SCADA plans; anything more means the plan cannot identify
  // the state. PMU plans have no structural deficiency.
  const Index allowed_null = plan.has_pmu() ? 0 : 1;
  Index null_count = 0;
  for (Index i = 0; i < evals.size(); ++i)
    if (evals(i) <= cutoff) ++null_count;
  if (null_count > allowed_null) throw InputError("unobservable plan");

  CMat pinv = CMat::Zero(2 * n, 2 * n);
  for (Index i = 0; i < evals.size(); ++i) {
    if (evals(i) <= cutoff) continue;
    pinv += es.eigenvectors().col(i) * es.eigenvectors().col(i).adjoint() /
            evals(i);
  }

  CrlbResult out;
  out.bound = pinv.topLeftCorner(n, n);
  out.trace = out.bound.trace().real();

  // Anchored variant: real-coordinate FIM with the reference imaginary
  // coordinate removed, then a plain inverse.
  const Mat jr = real_jacobian(plan, v);
  const Vec w = real_weights(plan);
  Mat fr = jr.transpose() * w.asDiagonal() * jr;
  const Index drop = n + ref_bus;
  std::vector<Index> keep;
  keep.reserve(2 * n - 1);
  for (Index i = 0; i < 2 * n; ++i)
    if (i != drop) keep.push_back(i);
  Mat fa(keep.size(), keep.size());
  for (size_t a = 0; a < keep.size(); ++a)
    for (size_t b = 0; b < keep.size(); ++b) fa(a, b) = fr(keep[a], keep[b]);
  Eigen::SelfAdjointEigenSolver<Mat> esa(fa);
  if (esa.eigenvalues().minCoeff() <=
      1e-10 * esa.eigenvalues().cwiseAbs().maxCoeff())
    throw InputError("unobservable plan");
  Mat inv = esa.eigenvectors() *
            esa.eigenvalues().cwiseInverse().asDiagonal() *
            esa.eigenvectors().transpose();
  out.anchored_real = inv;
  out.anchored_trace = inv.trace();
  return out;
}

}  // namespace gridstate

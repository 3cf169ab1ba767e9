#include "gridstate/robust.hpp"

#include <algorithm>
#include <functional>

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include "gridstate/stats.hpp"

namespace gridstate {

namespace {

bool full_column_rank(const Mat& h) {
  if (h.rows() < h.cols()) return false;
  Eigen::ColPivHouseholderQR<Mat> qr(h);
  qr.setThreshold(1e-10);
  return qr.rank() == h.cols();
}

}  // namespace

Vec lse_solve(const LinearModel& model) {
  if (!full_column_rank(model.h)) throw InputError("unobservable model");
  return (model.h.transpose() * model.h)
      .ldlt()
      .solve(model.h.transpose() * model.z);
}

Mat projection_matrix(const LinearModel& model) {
  if (!full_column_rank(model.h)) throw InputError("unobservable model");
  const Mat gram_inv = (model.h.transpose() * model.h)
                           .ldlt()
                           .solve(Mat::Identity(model.h.cols(), model.h.cols()));
  Mat p = Mat::Identity(model.h.rows(), model.h.rows()) -
          model.h * gram_inv * model.h.transpose();
  return 0.5 * (p + p.transpose());
}

BadDataReport chi_square_test(const LinearModel& model, double alpha) {
  const Mat p = projection_matrix(model);
  const Vec r = p * model.z;
  BadDataReport rep;
  rep.test = "chi_square";
  rep.statistic = r.squaredNorm();
  const double dof = static_cast<double>(model.h.rows() - model.h.cols());
  rep.threshold = chi_square_quantile(dof, alpha);
  rep.reject = rep.statistic > rep.threshold;
  return rep;
}

BadDataReport lnr_test(const LinearModel& model, double threshold) {
  const Mat p = projection_matrix(model);
  const Vec r = p * model.z;
  BadDataReport rep;
  rep.test = "lnr";
  rep.threshold = threshold;
  rep.normalized_residuals = Vec::Zero(model.h.rows());
  Index best = -1;
  for (Index m = 0; m < model.h.rows(); ++m) {
    if (p(m, m) <= 1e-9) {
      rep.critical.push_back(m);  // no residual capacity, excluded
      continue;
    }
    rep.normalized_residuals(m) = std::abs(r(m)) / std::sqrt(p(m, m));
    if (best < 0 || rep.normalized_residuals(m) > rep.normalized_residuals(best))
      best = m;
  }
  if (best >= 0) {
    rep.statistic = rep.normalized_residuals(best);
    rep.reject = rep.statistic > threshold;
    if (rep.reject) rep.flagged.push_back(best);
  }
  return rep;
}

namespace {

LinearModel drop_rows(const LinearModel& model, const std::vector<Index>& rows) {
  std::vector<char> dead(model.h.rows(), 0);
  for (Index r : rows) dead[r] = 1;
  const Index keep = model.h.rows() - static_cast<Index>(rows.size());
  LinearModel out;
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

LnrIterationResult lnr_iterate(const LinearModel& model, double threshold) {
  LnrIterationResult res;
  std::vector<Index> alive(model.h.rows());
  for (Index i = 0; i < model.h.rows(); ++i) alive[i] = i;

  LinearModel cur = model;
  while (true) {
    BadDataReport rep = lnr_test(cur, threshold);
    if (!rep.reject) break;
    const Index local = rep.flagged.front();
    LinearModel next = drop_rows(cur, {local});
    if (!full_column_rank(next.h)) {
      res.blocked = true;
      res.message = "identifiability lost after " +
                    std::to_string(res.removed.size()) + " removals";
      break;
    }
    res.removed.push_back(alive[local]);
    alive.erase(alive.begin() + local);
    cur = std::move(next);
  }
  res.v_hat = lse_solve(cur);
  if (res.message.empty()) res.message = "ok";
  return res;
}

double soft_threshold(double x, double lambda) {
  const double mag = std::abs(x) - lambda;
  return mag > 0.0 ? (x > 0 ? mag : -mag) : 0.0;
}

HuberResult huber_solve(const LinearModel& model, double lambda) {
  if (!full_column_rank(model.h)) throw InputError("unobservable model");
  HuberResult res;
  const Eigen::LDLT<Mat> fact((model.h.transpose() * model.h).eval());
  Vec o = Vec::Zero(model.h.rows());
  Vec v = fact.solve(model.h.transpose() * model.z);
  auto cost = [&](const Vec& vv, const Vec& oo) {
    return 0.5 * (model.z - model.h * vv - oo).squaredNorm() +
           lambda * oo.lpNorm<1>();
  };
  res.cost_trace.push_back(cost(v, o));

  // Each alternating pass moves v by O(lambda), so tiny lambdas are reached
  // by continuation: warm-start through a decreasing lambda schedule.
  std::vector<double> schedule;
  for (double lam = std::max(lambda, 0.01); lam > lambda * (1.0 + 1e-12);
       lam *= 0.1)
    schedule.push_back(lam);
  schedule.push_back(lambda);

  double prev = res.cost_trace.front();
  for (double lam : schedule) {
    for (long it = 0; it < 100000; ++it) {
      // Exact v-step on z - o, then exact o-step by soft-thresholding.
      const Vec v_new = fact.solve(model.h.transpose() * (model.z - o));
      const Vec resid = model.z - model.h * v_new;
      double o_step = 0.0;
      for (Index m = 0; m < o.size(); ++m) {
        const double next = soft_threshold(resid(m), lam);
        o_step = std::max(o_step, std::abs(next - o(m)));
        o(m) = next;
      }
      const double v_step = (v_new - v).cwiseAbs().maxCoeff();
      v = v_new;
      ++res.iterations;
      if (lam == lambda) {
        const double c = cost(v, o);
        if (res.cost_trace.size() < 5000) res.cost_trace.push_back(c);
        const bool stalled =
            std::max(v_step, o_step) < 1e-12 * (1.0 + v.norm());
        if (prev - c < 1e-14 * (1.0 + std::abs(prev)) && stalled) break;
        prev = c;
      } else if (std::max(v_step, o_step) < 1e-10 * (1.0 + v.norm())) {
        break;
      }
    }
  }
  res.v_hat = v;
  res.o_hat = o;
  return res;
}

LavResult lav_solve(const LinearModel& model) {
  if (!full_column_rank(model.h)) throw InputError("unobservable model");
  LavResult res;
  Vec v = lse_solve(model);
  double prev = (model.z - model.h * v).lpNorm<1>();
  for (int it = 0; it < 500; ++it) {
    const Vec r = model.z - model.h * v;
    Vec w = r.cwiseAbs().cwiseMax(1e-6).cwiseInverse();
    const Mat hw = model.h.transpose() * w.asDiagonal();
    v = (hw * model.h).ldlt().solve(hw * model.z);
    const double cost = (model.z - model.h * v).lpNorm<1>();
    res.iterations = it + 1;
    if (std::abs(prev - cost) < 1e-8 * (1.0 + prev)) {
      prev = cost;
      break;
    }
    prev = cost;
  }
  res.v_hat = v;
  res.cost = prev;
  // Subgradient certificate: H' sign(r) with interpolated residuals free.
  const Vec r = model.z - model.h * v;
  Vec s(r.size());
  for (Index m = 0; m < r.size(); ++m)
    s(m) = std::abs(r(m)) > 1e-6 ? (r(m) > 0 ? 1.0 : -1.0) : 0.0;
  res.subgradient_norm = (model.h.transpose() * s).norm();
  return res;
}

std::vector<Index> critical_measurements(const LinearModel& model) {
  if (!full_column_rank(model.h)) throw InputError("unobservable model");
  const Mat p = projection_matrix(model);
  std::vector<Index> out;
  for (Index m = 0; m < model.h.rows(); ++m)
    if (p(m, m) <= 1e-9) out.push_back(m);
  return out;
}

MeasurementDistance measurement_distance(const LinearModel& model, int limit) {
  const Index m_rows = model.h.rows();
  MeasurementDistance res;
  if (!full_column_rank(model.h)) {
    res.distance = 0;
    res.k_observable = -1;
    res.k_identifiable = -1;
    return res;
  }

  // D(h) = smallest row subset whose deletion collapses column rank.
  std::vector<Index> subset;
  int best = -1;
  auto rank_drops = [&](const std::vector<Index>& rows) {
    return !full_column_rank(drop_rows(model, rows).h);
  };
  std::function<bool(Index, int)> search = [&](Index start, int remaining) {
    if (remaining == 0) return rank_drops(subset);
    for (Index r = start; r < m_rows; ++r) {
      subset.push_back(r);
      if (search(r + 1, remaining - 1)) return true;
      subset.pop_back();
    }
    return false;
  };
  for (int size = 1; size <= std::min<int>(limit, static_cast<int>(m_rows));
       ++size) {
    subset.clear();
    if (search(0, size)) {
      best = size;
      break;
    }
  }
  if (best < 0) {
    // No subset up to the cap collapses rank: D exceeds the searched sizes.
    res.distance = limit + 1;
    res.exact = false;
  } else {
    res.distance = best;
  }
  res.k_observable = res.distance - 1;
  res.k_identifiable = (res.distance - 1) / 2;
  return res;
}

Vec stealth_attack(const LinearModel& model, const Vec& delta_v) {
  if (delta_v.norm() == 0.0)
    throw InputError("stealth_attack: state shift must be nonzero");
  return model.h * delta_v;
}

RobustConsensusResult admm_robust(const AreaPartition& partition,
                                  const std::vector<AreaModel>& models,
                                  double lambda, const ConsensusOptions& opts,
                                  const ConsensusReferences* refs) {
  const Index k_count = partition.area_count();
  // Boundary consensus penalty scales with the boundary stiffness; the
  // outlier split keeps unit penalty, matching the identity curvature of the
  // whitened data term in o.
  const double mu = opts.mu > 0 ? opts.mu : auto_penalty(partition, models);
  const double mu_o = 1.0;
  RobustConsensusResult res;
  const auto& pairs = partition.shared();

  struct Side {
    Index area;
    std::vector<Index> coords;
  };
  std::vector<Side> side_k(pairs.size()), side_l(pairs.size());
  for (size_t p = 0; p < pairs.size(); ++p) {
    const auto& pr = pairs[p];
    const Index nk = static_cast<Index>(
        partition.areas()[pr.area_k].state_buses.size());
    const Index nl = static_cast<Index>(
        partition.areas()[pr.area_l].state_buses.size());
    side_k[p].area = pr.area_k;
    side_l[p].area = pr.area_l;
    for (size_t i = 0; i < pr.global_buses.size(); ++i) {
      side_k[p].coords.push_back(pr.local_k[i]);
      side_k[p].coords.push_back(pr.local_k[i] + nk);
      side_l[p].coords.push_back(pr.local_l[i]);
      side_l[p].coords.push_back(pr.local_l[i] + nl);
    }
  }

  // x-block solves with the o variables eliminated in closed form: the data
  // term becomes a scaled least squares on z - omega_tilde.
  const double data_w = mu_o / (1.0 + mu_o);
  std::vector<Eigen::LDLT<Mat>> facts(k_count);
  for (Index k = 0; k < k_count; ++k) {
    Mat normal = data_w * models[k].h.transpose() * models[k].h;
    for (Index p : partition.neighbors()[k]) {
      const auto& side = side_k[p].area == k ? side_k[p] : side_l[p];
      for (Index c : side.coords) normal(c, c) += mu;
    }
    facts[k].compute(normal);
    if (facts[k].info() != Eigen::Success)
      throw InputError("area " + std::to_string(partition.areas()[k].id) +
                       " subproblem is singular");
  }

  std::vector<Vec> v_kl(pairs.size()), lam_k(pairs.size()), lam_l(pairs.size());
  for (size_t p = 0; p < pairs.size(); ++p) {
    const Index d = static_cast<Index>(side_k[p].coords.size());
    v_kl[p] = Vec::Zero(d);
    for (Index i = 0; i < d; i += 2) v_kl[p](i) = 1.0;
    lam_k[p] = Vec::Zero(d);
    lam_l[p] = Vec::Zero(d);
  }
  std::vector<Vec> x(k_count), o(k_count), omega(k_count), lam_o(k_count);
  for (Index k = 0; k < k_count; ++k) {
    o[k] = Vec::Zero(models[k].z.size());
    omega[k] = Vec::Zero(models[k].z.size());
    lam_o[k] = Vec::Zero(models[k].z.size());
  }

  for (int it = 0; it < opts.max_iters; ++it) {
    for (Index k = 0; k < k_count; ++k) {
      const Vec omega_tilde = omega[k] - lam_o[k];
      Vec rhs =
          data_w * models[k].h.transpose() * (models[k].z - omega_tilde);
      for (Index p : partition.neighbors()[k]) {
        const auto& side = side_k[p].area == k ? side_k[p] : side_l[p];
        const Vec& lam = side_k[p].area == k ? lam_k[p] : lam_l[p];
        for (size_t i = 0; i < side.coords.size(); ++i)
          rhs(side.coords[i]) += mu * (v_kl[p](i) - lam(i));
      }
      x[k] = facts[k].solve(rhs);
      o[k] = ((models[k].z - models[k].h * x[k]) + mu_o * omega_tilde) /
             (1.0 + mu_o);
    }

    double residual = 0.0, antisym = 0.0;
    Index messages = 0;
    for (size_t p = 0; p < pairs.size(); ++p) {
      const Index d = static_cast<Index>(side_k[p].coords.size());
      Vec xk(d), xl(d);
      for (Index i = 0; i < d; ++i) {
        xk(i) = x[side_k[p].area](side_k[p].coords[i]);
        xl(i) = x[side_l[p].area](side_l[p].coords[i]);
      }
      messages += 2;
      v_kl[p] = 0.5 * (xk + xl);
      lam_k[p] += xk - v_kl[p];
      lam_l[p] += xl - v_kl[p];
      residual = std::max(residual, (xk - v_kl[p]).cwiseAbs().maxCoeff());
      residual = std::max(residual, (xl - v_kl[p]).cwiseAbs().maxCoeff());
      antisym = std::max(antisym, (lam_k[p] + lam_l[p]).cwiseAbs().maxCoeff());
    }
    // omega update: entrywise soft-thresholding; dual update on o.
    for (Index k = 0; k < k_count; ++k) {
      const Vec arg = o[k] + lam_o[k];
      for (Index m = 0; m < arg.size(); ++m)
        omega[k](m) = soft_threshold(arg(m), lambda / mu_o);
      lam_o[k] += o[k] - omega[k];
      residual =
          std::max(residual, (o[k] - omega[k]).cwiseAbs().maxCoeff());
    }

    res.trace.consensus_residual.push_back(residual);
    res.trace.multiplier_antisymmetry.push_back(antisym);
    res.trace.messages.push_back(messages);
    if (refs && !refs->truth.empty()) {
      Vec eko = Vec::Zero(k_count);
      for (Index k = 0; k < k_count; ++k) {
        const Index nk = static_cast<Index>(
            partition.areas()[k].state_buses.size());
        eko(k) = (complexify_vector(x[k]) - refs->truth[k]).norm() /
                 static_cast<double>(nk);
      }
      res.trace.area_error_truth.push_back(eko);
    }

    res.iterations = it + 1;
    if (residual < opts.tol) {
      res.converged = true;
      break;
    }
  }

  res.states = std::move(x);
  res.outliers = std::move(o);
  res.message = res.converged ? "ok" : "iteration limit reached";
  return res;
}

}  // namespace gridstate

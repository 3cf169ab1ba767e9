#include <doctest.h>

#include "gridstate/harness.hpp"
#include "gridstate/io.hpp"
#include "support/cases.hpp"
#include "support/oracles.hpp"

using namespace gridstate;
namespace gt = gridstate::testing;

namespace {

MeasurementPlan fig3_plan(const GridCase& grid, const AdmittanceModel& model) {
  return load_plan_file(model, grid, gt::data_path("fig3_plan.json"));
}

std::vector<int> fig3_assignment(const GridCase& grid) {
  return load_partition_file(grid, gt::data_path("fig3_partition.json"));
}

}  // namespace

TEST_SUITE("distributed") {

TEST_CASE("four-area partition matches the published layout") {
  const GridCase grid = gt::ieee14();
  const AdmittanceModel model = build_admittance(grid);
  const MeasurementPlan plan = fig3_plan(grid, model);
  const AreaPartition part(grid, plan, fig3_assignment(grid));
  CHECK(part.area_count() == 4);

  // Area 4 supervises {9,10,14} and extends to bus 11 via the (10,11) meter.
  const Area* a4 = nullptr;
  for (const auto& a : part.areas())
    if (a.id == 4) a4 = &a;
  REQUIRE(a4 != nullptr);
  CHECK(a4->own_buses.size() == 3);
  bool has11 = false;
  for (Index b : a4->state_buses)
    if (grid.id_of(b) == 11) has11 = true;
  CHECK(has11);

  // Shared maps are symmetric: each pair indexes identical global buses.
  for (const auto& p : part.shared())
    for (size_t i = 0; i < p.global_buses.size(); ++i) {
      CHECK(part.areas()[p.area_k].state_buses[p.local_k[i]] ==
            p.global_buses[i]);
      CHECK(part.areas()[p.area_l].state_buses[p.local_l[i]] ==
            p.global_buses[i]);
    }
}

TEST_CASE("partition rejects unassigned buses and triple sharing") {
  const GridCase grid = gt::ieee14();
  const AdmittanceModel model = build_admittance(grid);
  const MeasurementPlan plan = fig3_plan(grid, model);
  std::vector<int> assign = fig3_assignment(grid);

  CHECK_THROWS_WITH_AS(
      load_partition_json(grid, R"({"areas":[{"id":1,"buses":[1,2]}]})"),
      doctest::Contains("unassigned"), InputError);

  // Every bus its own area: tie-line meters then stretch across many pairs,
  // and some bus ends up claimed by three areas.
  std::vector<int> singleton(grid.bus_count());
  for (size_t b = 0; b < singleton.size(); ++b)
    singleton[b] = static_cast<int>(b);
  CHECK_THROWS_WITH_AS(AreaPartition(grid, plan, singleton),
                       doctest::Contains("three or more"), InputError);
  (void)assign;
}

TEST_CASE("single-area consensus is the centralized fit after one round") {
  const GridCase grid = gt::ieee14();
  const AdmittanceModel model = build_admittance(grid);
  const MeasurementPlan plan = fig3_plan(grid, model);
  Rng rng(3);
  const CVec truth = draw_state(rng, 14, 0, 0.95, 1.05, 0.3);
  const MeasurementSet set = simulate(plan, truth, 5);

  const AreaPartition part(grid, plan, std::vector<int>(14, 1));
  const auto models = build_area_models(part, plan, set);
  const ConsensusResult res = admm_consensus(part, models, {});
  CHECK(res.converged);
  CHECK(res.iterations == 1);
  CHECK((res.states[0] - centralized_lse(plan, set)).cwiseAbs().maxCoeff() <
        1e-9);
}

TEST_CASE("four-area consensus reaches the centralized solution") {
  const GridCase grid = gt::ieee14();
  const AdmittanceModel model = build_admittance(grid);
  const MeasurementPlan plan = fig3_plan(grid, model);
  ConsensusOptions opts;
  opts.max_iters = 200;
  opts.tol = 1e-10;
  const DistributedRunResult run = run_distributed_experiment(
      grid, plan, fig3_assignment(grid), 11, opts);

  REQUIRE_FALSE(run.consensus.trace.area_error_centralized.empty());
  const Vec last = run.consensus.trace.area_error_centralized.back();
  CHECK(last.maxCoeff() <= 1e-4);
  CHECK(run.antisymmetry.holds);
  CHECK(run.antisymmetry.worst <= 1e-12);
}

TEST_CASE("messages flow only between neighbors") {
  const GridCase grid = gt::ieee14();
  const AdmittanceModel model = build_admittance(grid);
  const MeasurementPlan plan = fig3_plan(grid, model);
  const AreaPartition part(grid, plan, fig3_assignment(grid));
  // Three shared pairs for the chain 1-2-4-3: per iteration each pair
  // exchanges two messages, and nothing else moves.
  CHECK(part.shared().size() == 3);
  Rng rng(7);
  const CVec truth = draw_state(rng, 14, 0, 0.95, 1.05, 0.3);
  const MeasurementSet set = simulate(plan, truth, 9);
  const auto models = build_area_models(part, plan, set);
  ConsensusOptions opts;
  opts.max_iters = 10;
  const ConsensusResult res = admm_consensus(part, models, opts);
  for (Index m : res.trace.messages) CHECK(m == 6);
}

TEST_CASE("perturbed multipliers break antisymmetry, zero init keeps it") {
  ConsensusTrace trace;
  trace.multiplier_antisymmetry = {0.0, 1e-15, 5e-13};
  CHECK(check_antisymmetry(trace).holds);
  trace.multiplier_antisymmetry.push_back(1e-6);
  const AntisymmetryReport rep = check_antisymmetry(trace);
  CHECK_FALSE(rep.holds);
  CHECK(rep.worst_iteration == 3);
}

TEST_CASE("overlap topology report on the four-area chain") {
  const GridCase grid = gt::ieee14();
  const AdmittanceModel model = build_admittance(grid);
  const MeasurementPlan plan = fig3_plan(grid, model);
  const AreaPartition part(grid, plan, fig3_assignment(grid));
  const OverlapTopologyReport rep = validate_overlap_topology(part);
  CHECK(rep.as4_tree);
  CHECK(rep.as5_private_bus);
}

TEST_CASE("a ring of three areas fails the tree condition") {
  // Triangle grid, three single-bus areas, every line metered: the overlap
  // graph is a 3-cycle.
  std::vector<Bus> buses{{1, {0, 0}}, {2, {0, 0}}, {3, {0, 0}}};
  std::vector<Branch> branches{{1, 2, {1.0, -3.0}, 0, {1, 0}},
                               {2, 3, {1.0, -3.0}, 0, {1, 0}},
                               {3, 1, {1.0, -3.0}, 0, {1, 0}}};
  const GridCase grid(std::move(buses), std::move(branches), 1);
  const AdmittanceModel model = build_admittance(grid);
  const MeasurementPlan plan = generate_plan(model, "pmu_v_all+pmu_i_from");
  const AreaPartition part(grid, plan, {0, 1, 2});
  const OverlapTopologyReport rep = validate_overlap_topology(part);
  CHECK_FALSE(rep.as4_tree);
  // Single-bus areas reached by a neighbor meter have no private bus left.
  CHECK_FALSE(rep.as5_private_bus);
}

TEST_CASE("distributed sdr with one area equals the centralized solver") {
  const GridCase grid = gt::radial6();
  const AdmittanceModel model = build_admittance(grid);
  const MeasurementPlan plan =
      generate_plan(model, "vmag2_all+pflow_both_ends+qflow_both_ends");
  Rng rng(11);
  const CVec truth = draw_state(rng, 6, 0, 0.95, 1.05, 0.2);
  const MeasurementSet set = simulate(plan, truth, 13);

  const AreaPartition part(grid, plan, std::vector<int>(6, 1));
  const auto plans = build_area_plans(part, plan);
  REQUIRE(plans.size() == 1);
  std::vector<CVec> z = {set.values};

  DistributedSdrOptions opts;
  opts.max_iters = 3;
  opts.barrier_gap = 1e-8;
  const DistributedSdrResult dist = distributed_sdr(part, plans, z, opts);
  SolverOptions so;
  so.barrier_gap = 1e-8;
  const StateEstimate central = sdr_solve(plan, set, 0, so);
  CHECK((dist.lifted[0] - central.v_lifted).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("three-area distributed sdr consensus residual decays") {
  const GridCase grid = gt::ieee14();
  const AdmittanceModel model = build_admittance(grid);
  const MeasurementPlan plan =
      generate_plan(model, "vmag2_all+pflow_both_ends+qflow_both_ends",
                    0.01, 0.004);
  Rng rng(17);
  const CVec truth = draw_state(rng, 14, 0, 0.97, 1.03, 0.15);
  const MeasurementSet set = simulate(plan, truth, 19);

  // Three contiguous areas over the 14-bus system.
  std::vector<int> assign(14);
  for (int b = 0; b < 14; ++b) assign[b] = b < 5 ? 1 : (b < 10 ? 2 : 3);
  const AreaPartition part(grid, plan, assign);
  const auto plans = build_area_plans(part, plan);
  std::vector<CVec> z(part.area_count());
  for (Index k = 0; k < part.area_count(); ++k) {
    const auto& idx = part.areas()[k].measurements;
    z[k].resize(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) z[k](i) = set.values(idx[i]);
  }

  ConsensusReferences refs;
  refs.truth.resize(part.area_count());
  for (Index k = 0; k < part.area_count(); ++k)
    refs.truth[k] = part.local_state(k, truth);

  DistributedSdrOptions opts;
  opts.max_iters = 12;
  opts.barrier_gap = 1e-5;
  const DistributedSdrResult dist =
      distributed_sdr(part, plans, z, opts, &refs);

  // Trailing average of the consensus residual decays.
  const auto& res = dist.trace.consensus_residual;
  REQUIRE(res.size() >= 8);
  double early = 0.0, late = 0.0;
  for (int i = 0; i < 4; ++i) early += res[i];
  for (size_t i = res.size() - 4; i < res.size(); ++i) late += res[i];
  CHECK(late < early);
  // And the recovered states approach the truth area by area.
  const Vec final_err = dist.trace.area_error_truth.back();
  CHECK(final_err.maxCoeff() < 0.15);
}

TEST_CASE("multi-area synthetic grid builder is deterministic and valid") {
  const GridCase cell = gt::ieee14();
  const MultiAreaCase a = build_multi_area_case(cell, 20, 8, 99);
  const MultiAreaCase b = build_multi_area_case(cell, 20, 8, 99);
  CHECK(a.grid.bus_count() == 20 * 14);
  CHECK(a.grid.branch_count() >= 20 * 20 + 19);
  CHECK(case_to_json(a.grid) == case_to_json(b.grid));
  CHECK(a.bus_to_area.size() == static_cast<size_t>(a.grid.bus_count()));
}

TEST_CASE("small multi-area consensus experiment reaches the truth") {
  const GridCase cell = gt::ieee14();
  ConsensusOptions opts;
  opts.max_iters = 40;
  const DistributedRunResult run =
      run_multi_area_experiment(cell, 12, 5, 7, 0.01, opts);
  REQUIRE_FALSE(run.consensus.trace.area_error_truth.empty());
  CHECK(run.iters_to_1e3 > 0);
  CHECK(run.iters_to_1e3 <= 20);
  CHECK(run.antisymmetry.holds);
  // Deterministic for a fixed seed.
  const DistributedRunResult again =
      run_multi_area_experiment(cell, 12, 5, 7, 0.01, opts);
  CHECK(run.trace_csv == again.trace_csv);
}

TEST_CASE("trace csv round-trips through the loader") {
  ConsensusTrace trace;
  trace.consensus_residual = {0.5, 0.25};
  trace.multiplier_antisymmetry = {0.0, 0.0};
  trace.messages = {6, 6};
  trace.area_error_truth = {Vec::Constant(2, 0.1), Vec::Constant(2, 0.05)};
  const std::string csv = trace_to_csv(trace);
  const CsvTable t = CsvTable::parse(csv);
  CHECK(t.rows.size() == 4);
  CHECK(t.header.size() == 5);
  CHECK(std::stod(t.rows[3][t.column("e_ko")]) == 0.05);
}

}  // TEST_SUITE

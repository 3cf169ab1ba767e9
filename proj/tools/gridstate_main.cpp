#include <filesystem>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "gridstate/harness.hpp"
#include "gridstate/io.hpp"

namespace gs = gridstate;
namespace fs = std::filesystem;

namespace {

struct CommonArgs {
  std::string case_path;
  std::string plan;
  std::string partition;
  std::uint64_t seed = 1;
  int runs = 100;
  std::string out_dir = ".";
  std::vector<std::string> estimators = {"gn"};
  bool noiseless = false;
  bool strict = false;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_plan = true) {
  cmd->add_option("--case", args.case_path, "grid case JSON")->required();
  auto* plan = cmd->add_option("--plan", args.plan,
                               "measurement plan JSON or generator expression");
  if (needs_plan) plan->required();
  cmd->add_option("--partition", args.partition, "area partition JSON");
  cmd->add_option("--seed", args.seed, "global seed");
  cmd->add_option("--runs", args.runs, "Monte Carlo run count");
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--est", args.estimators, "estimators (gn,sdr,fpp)")
      ->delimiter(',');
  cmd->add_flag("--noiseless", args.noiseless, "simulate without noise");
  cmd->add_flag("--strict", args.strict,
                "exit 1 when a solver fails to converge");
}

gs::MeasurementPlan resolve_plan(const gs::GridCase& grid,
                                 const gs::AdmittanceModel& model,
                                 const std::string& spec) {
  if (fs::exists(spec)) return gs::load_plan_file(model, grid, spec);
  return gs::generate_plan(model, spec);
}

std::string out_path(const CommonArgs& args, const std::string& name) {
  fs::create_directories(args.out_dir);
  return (fs::path(args.out_dir) / name).string();
}

int run_estimate(const CommonArgs& args) {
  const gs::GridCase grid = gs::load_case_file(args.case_path);
  const gs::AdmittanceModel model = gs::build_admittance(grid);
  gs::MeasurementPlan plan = resolve_plan(grid, model, args.plan);
  const gs::Index ref = grid.reference_index();

  gs::Rng rng(args.seed);
  const gs::CVec truth = gs::draw_state(rng, grid.bus_count(), ref);
  gs::MeasurementSet set =
      args.noiseless ? gs::simulate_noiseless(plan, truth)
                     : gs::simulate(plan, truth, gs::derive_seed(args.seed, 1));
  gs::write_file(out_path(args, "measurements.csv"),
                 gs::measurement_set_to_csv(grid, plan, set));

  bool all_converged = true;
  for (const std::string& est : args.estimators) {
    gs::StateEstimate result;
    if (est == "gn") {
      result = gs::gauss_newton(plan, set, gs::flat_start(grid.bus_count()), ref);
    } else if (est == "sdr") {
      result = gs::sdr_solve(plan, set, ref);
    } else if (est == "fpp") {
      result = gs::fpp_solve(plan, set, gs::flat_start(grid.bus_count()), ref);
    } else {
      throw gs::InputError("unknown estimator: " + est);
    }
    all_converged = all_converged && result.converged;
    gs::write_file(out_path(args, "estimate_" + est + ".json"),
                   gs::estimate_to_json(result));
    std::cout << est << ": cost " << result.final_cost() << ", "
              << result.message << "\n";
  }
  return all_converged || !args.strict ? 0 : 1;
}

int run_montecarlo(const CommonArgs& args) {
  const gs::GridCase grid = gs::load_case_file(args.case_path);
  const gs::AdmittanceModel model = gs::build_admittance(grid);
  bool sdr = false, fpp = false;
  for (const auto& e : args.estimators) {
    if (e == "sdr") sdr = true;
    if (e == "fpp") fpp = true;
  }
  const gs::SweepResult result =
      gs::run_measurement_sweep(grid, model, args.runs, args.seed, sdr, fpp);
  gs::write_file(out_path(args, "montecarlo.csv"), result.to_csv());
  std::cout << result.to_csv();
  for (size_t i = 1; i < result.rows.size(); ++i) {
    if (result.rows[i].gn_mse > result.rows[i - 1].gn_mse &&
        result.rows[i - 1].gn_mse > 0.0) {
      std::cerr << "warning: gn mse increased from " << result.rows[i - 1].types
                << " to " << result.rows[i].types
                << " measurement types (Monte Carlo noise)\n";
    }
  }
  return 0;
}

int run_baddata(const CommonArgs& args) {
  const gs::GridCase grid = gs::load_case_file(args.case_path);
  const gs::AdmittanceModel model = gs::build_admittance(grid);
  gs::MeasurementPlan plan = resolve_plan(grid, model, args.plan);
  const gs::BadDataResult result =
      gs::run_baddata_study(grid, plan, args.runs, args.seed);
  gs::write_file(out_path(args, "baddata.csv"), result.to_csv());
  std::cout << result.to_csv();
  return 0;
}

int run_distributed(const CommonArgs& args) {
  const gs::GridCase grid = gs::load_case_file(args.case_path);
  const gs::AdmittanceModel model = gs::build_admittance(grid);
  gs::MeasurementPlan plan = resolve_plan(grid, model, args.plan);
  if (args.partition.empty())
    throw gs::InputError("distributed command needs --partition");
  const std::vector<int> assignment =
      gs::load_partition_file(grid, args.partition);

  gs::ConsensusOptions opts;
  opts.max_iters = std::max(args.runs, 1);
  const gs::DistributedRunResult result = gs::run_distributed_experiment(
      grid, plan, assignment, args.seed, opts);
  gs::write_file(out_path(args, "trace.csv"), result.trace_csv);

  std::cout << "iterations: " << result.consensus.iterations << " ("
            << result.consensus.message << ")\n";
  std::cout << "multiplier antisymmetry: worst "
            << result.antisymmetry.worst
            << (result.antisymmetry.holds ? " (clean)" : " (violated)") << "\n";
  if (result.iters_to_1e3 > 0)
    std::cout << "avg truth error reached 1e-3 at iteration "
              << result.iters_to_1e3 << "\n";
  return result.consensus.converged || !args.strict ? 0 : 1;
}

int run_track(const CommonArgs& args) {
  const gs::GridCase grid = gs::load_case_file(args.case_path);
  const gs::AdmittanceModel model = gs::build_admittance(grid);
  gs::TrackScenario scenario;
  if (!args.plan.empty() && fs::exists(args.plan))
    scenario = gs::load_track_scenario(gs::read_file(args.plan));
  const gs::TrackResult result =
      gs::run_tracking(grid, model, scenario, args.seed);
  gs::write_file(out_path(args, "track.csv"), result.to_csv());
  for (auto& [t, r] : result.regret_at)
    std::cout << "regret R(" << t << ") = " << r << ", R/T = " << r / t << "\n";
  return 0;
}

int run_crlb(const CommonArgs& args) {
  const gs::GridCase grid = gs::load_case_file(args.case_path);
  const gs::AdmittanceModel model = gs::build_admittance(grid);
  gs::MeasurementPlan plan = resolve_plan(grid, model, args.plan);
  const gs::Index ref = grid.reference_index();
  gs::Rng rng(args.seed);
  const gs::CVec state = gs::draw_state(rng, grid.bus_count(), ref);
  const gs::CrlbResult bound = gs::crlb(plan, state, ref);
  nlohmann::json doc;
  doc["trace"] = bound.trace;
  doc["anchored_trace"] = bound.anchored_trace;
  gs::write_file(out_path(args, "crlb.json"), doc.dump(2));
  std::cout << "crlb trace " << bound.trace << ", anchored "
            << bound.anchored_trace << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"power system state estimation toolkit"};
  app.require_subcommand(1);

  CommonArgs args;
  auto* estimate = app.add_subcommand("estimate", "single-shot estimation");
  add_common(estimate, args);
  auto* montecarlo =
      app.add_subcommand("montecarlo", "measurement-type sweep study");
  add_common(montecarlo, args, /*needs_plan=*/false);
  auto* baddata = app.add_subcommand("baddata", "bad-data method comparison");
  add_common(baddata, args);
  auto* distributed =
      app.add_subcommand("distributed", "multi-area consensus estimation");
  add_common(distributed, args);
  auto* track = app.add_subcommand("track", "dynamic state tracking");
  add_common(track, args, /*needs_plan=*/false);
  auto* crlb = app.add_subcommand("crlb", "estimation lower bound");
  add_common(crlb, args);

  try {
    app.parse(argc, argv);
    if (estimate->parsed()) return run_estimate(args);
    if (montecarlo->parsed()) return run_montecarlo(args);
    if (baddata->parsed()) return run_baddata(args);
    if (distributed->parsed()) return run_distributed(args);
    if (track->parsed()) return run_track(args);
    if (crlb->parsed()) return run_crlb(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  } catch (const gs::InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}

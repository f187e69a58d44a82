#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "latent/io.hpp"

namespace fs = std::filesystem;
using latent::io::json;

namespace {

enum Exit : int { kOk = 0, kInput = 2, kDomain = 3, kVerification = 4, kNumeric = 5 };

int exit_code_for(latent::Errc code) {
  using latent::Errc;
  switch (code) {
    case Errc::kBelowFloor:
    case Errc::kInvariantViolation:
    case Errc::kInfiniteDivergence:
      return kDomain;
    case Errc::kNonFiniteValue:
      return kNumeric;
    default:
      return kInput;
  }
}

void require_finite(const latent::RunMetrics& metrics) {
  for (const auto& r : metrics.records) {
    for (double v : {r.goal_rate, r.mean_len, r.surrogate, r.clip_frac, r.kl_ref, r.mlr_rate}) {
      if (!std::isfinite(v)) {
        throw latent::Error(latent::Errc::kNonFiniteValue, "non-finite metric at step " + std::to_string(r.step));
      }
    }
  }
}

void check_policy_finite(const latent::TabularPolicy& policy) {
  for (const auto& [state, row] : policy.table()) {
    if (!row.allFinite()) {
      throw latent::Error(latent::Errc::kNonFiniteValue, "non-finite logits at state " + std::to_string(state));
    }
  }
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw latent::Error(latent::Errc::kIo, "cannot write '" + path.string() + "'");
  return out;
}

latent::TrainConfig load_config(const std::string& path) {
  return path.empty() ? latent::TrainConfig{} : latent::io::train_config_from_text(latent::io::read_file(path));
}

// waterfill ---------------------------------------------------------------

struct WaterfillArgs {
  std::string input;
  double tol = latent::kDefaultTauTolerance;
};

int cmd_waterfill(const WaterfillArgs& args) {
  const json doc = latent::io::parse_json(latent::io::read_file(args.input), args.input);
  const latent::StateInstance inst = latent::io::state_instance_from_json(doc);
  const latent::WaterfillResult result = latent::waterfill_update(inst, args.tol);
  json out = latent::io::to_json(result);
  if (doc.contains("u_star")) out["decomposition"] = latent::io::to_json(latent::delta_j_decomposition(result, inst));
  std::cout << out.dump() << '\n';
  return kOk;
}

// verify ------------------------------------------------------------------

struct VerifyArgs {
  std::string theorem = "all";
  int seeds = 100;
  int vocab_min = 2;
  int vocab_max = 64;
  std::vector<double> eps{0.1, 0.2, 0.5};
  std::vector<double> beta{0.01};
  std::vector<int> resolutions{64, 128, 256, 512};
  std::uint64_t seed = 0;
  std::string out;
};

struct SectionTally {
  int instances = 0;
  int passed = 0;
  double worst_margin = std::numeric_limits<double>::infinity();
  std::map<std::string, double> worst_by_check;
  int vs_prop_failures = 0;

  void add(const latent::VerificationReport& report) {
    ++instances;
    if (report.passed()) ++passed;
    worst_margin = std::min(worst_margin, report.worst_margin);
    for (const auto& c : report.checks) {
      auto [it, inserted] = worst_by_check.emplace(latent::to_string(c.kind), c.margin);
      if (!inserted) it->second = std::min(it->second, c.margin);
      if (c.kind == latent::CheckKind::kImprovementVsProp && !c.passed) ++vs_prop_failures;
    }
  }

  json to_json() const {
    return {{"instances", instances},
            {"passed", passed},
            {"failed", instances - passed},
            {"worst_margin", instances == 0 ? 0.0 : worst_margin},
            {"worst_margin_by_check", worst_by_check},
            {"improvement_vs_prop_failures", vs_prop_failures}};
  }
};

int cmd_verify(const VerifyArgs& args) {
  const bool run1 = args.theorem == "1" || args.theorem == "all";
  const bool run2 = args.theorem == "2" || args.theorem == "all";
  if (args.seeds < 1) throw latent::Error(latent::Errc::kInvalidArgument, "--seeds must be positive");

  std::ofstream file;
  if (!args.out.empty()) file = open_output(args.out);
  std::ostream& lines = args.out.empty() ? std::cout : file;

  json summary{{"summary", true}};
  bool ok = true;

  if (run1) {
    latent::VerificationConfig config;
    config.vocab_min = args.vocab_min;
    config.vocab_max = args.vocab_max;
    config.eps_grid = args.eps;
    config.beta_grid = args.beta;
    SectionTally tally;
    for (int i = 0; i < args.seeds; ++i) {
      const auto report = latent::verify_theorem1(args.seed + static_cast<std::uint64_t>(i), config);
      lines << latent::io::to_json(report).dump() << '\n';
      tally.add(report);
    }
    ok = ok && tally.passed == tally.instances;

    // Controls violate the ordering hypothesis on purpose; they never affect the exit code.
    SectionTally controls;
    const auto fixed = latent::verify_instance(0, latent::anti_mlr_control(), config, "anti_mlr");
    lines << latent::io::to_json(fixed).dump() << '\n';
    controls.add(fixed);
    for (int i = 0; i < std::min(args.seeds, 100); ++i) {
      const std::uint64_t id = args.seed + static_cast<std::uint64_t>(i);
      const int v = config.vocab_min + static_cast<int>(id % static_cast<std::uint64_t>(config.vocab_max - config.vocab_min + 1));
      const auto report = latent::verify_instance(
          id, latent::sample_anti_mlr_instance(id, v, config.eps_grid[id % config.eps_grid.size()], config.beta_grid[0]),
          config, "anti_mlr");
      lines << latent::io::to_json(report).dump() << '\n';
      controls.add(report);
    }
    json c = controls.to_json();
    c["violations"] = controls.instances - controls.passed;
    summary["theorem1"] = tally.to_json();
    summary["anti_mlr"] = std::move(c);
  }

  if (run2) {
    SectionTally tally;
    int decreasing = 0;
    std::map<int, std::vector<double>> gaps;
    for (int i = 0; i < args.seeds; ++i) {
      const auto report = latent::verify_theorem2_discretized(args.seed + static_cast<std::uint64_t>(i), args.resolutions);
      lines << latent::io::to_json(report).dump() << '\n';
      tally.add(report);
      if (report.tau_differences_decreasing) ++decreasing;
      for (std::size_t k = 1; k < report.refinement.size(); ++k) {
        gaps[report.refinement[k].resolution].push_back(
            std::abs(report.refinement[k].tau - report.refinement[k - 1].tau));
      }
    }
    ok = ok && tally.passed == tally.instances;
    json table = json::array();
    for (const auto& [n, g] : gaps) {
      table.push_back({{"resolution", n},
                       {"median_tau_gap", latent::median_of(g)},
                       {"max_tau_gap", *std::max_element(g.begin(), g.end())}});
    }
    json section = tally.to_json();
    section["tau_gaps_decreasing"] = decreasing;
    section["refinement"] = std::move(table);
    summary["theorem2"] = std::move(section);
  }

  summary["passed"] = ok;
  lines << summary.dump() << '\n';
  if (!args.out.empty()) std::cout << summary.dump() << '\n';
  return ok ? kOk : kVerification;
}

// train / compare ---------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& args) {
  latent::TrainConfig config = load_config(args.config);
  if (args.seed) config.seed = *args.seed;
  const latent::Maze maze = latent::build_maze(config.maze);
  const latent::PhaseResult result = latent::run_regime(maze, config);
  require_finite(result.metrics);
  check_policy_finite(result.policy);

  const fs::path dir(args.out);
  {
    std::ofstream csv = open_output(dir / "metrics.csv");
    latent::write_metrics_csv(csv, result.metrics);
  }
  {
    std::ofstream policy = open_output(dir / "policy.json");
    policy << latent::io::to_json(result.policy).dump(2) << '\n';
  }
  const auto& first = result.metrics.records.front();
  const auto& last = result.metrics.records.back();
  std::cout << "regime=" << latent::to_string(config.regime) << " seed=" << config.seed
            << " goal_rate " << first.goal_rate << " -> " << last.goal_rate << " (step " << last.step << ")\n";
  return kOk;
}

int cmd_compare(const TrainArgs& args) {
  latent::TrainConfig config = load_config(args.config);
  if (args.seed) config.seed = *args.seed;
  const latent::ComparisonReport report = latent::run_experiment(config.maze, config);
  for (const auto& s : report.regimes) {
    for (double g : s.final_goal_rates) {
      if (!std::isfinite(g)) throw latent::Error(latent::Errc::kNonFiniteValue, "non-finite goal rate");
    }
  }
  const fs::path dir(args.out);
  {
    std::ofstream out = open_output(dir / "comparison.json");
    json doc = latent::io::to_json(report);
    doc["config"] = latent::io::to_json(config);
    out << doc.dump(2) << '\n';
  }
  std::cout << "base=" << report.base_median;
  for (const auto& s : report.regimes) std::cout << ' ' << latent::to_string(s.regime) << '=' << s.median;
  std::cout << " (median final goal-rate over " << report.seeds.size() << " seeds)\n";
  return kOk;
}

// export ------------------------------------------------------------------

struct ExportArgs {
  std::string maze;
  std::string policy;
  int episodes = 10;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_export(const ExportArgs& args) {
  const latent::MazeSpec spec = args.maze.empty()
                                    ? latent::default_maze_spec()
                                    : latent::io::maze_spec_from_json(
                                          latent::io::parse_json(latent::io::read_file(args.maze), args.maze));
  const latent::Maze maze = latent::build_maze(spec);
  const latent::TabularPolicy policy =
      args.policy.empty() ? latent::TabularPolicy(latent::kNumActions)
                          : latent::io::policy_from_json(latent::io::parse_json(latent::io::read_file(args.policy), args.policy));
  if (args.episodes < 1) throw latent::Error(latent::Errc::kInvalidArgument, "--episodes must be positive");

  std::ofstream file;
  if (!args.out.empty()) file = open_output(args.out);
  std::ostream& out = args.out.empty() ? std::cout : file;
  json header{{"maze", latent::io::to_json(spec)}};
  json distances = json::array();
  for (int d : maze.distance_field()) distances.push_back(d);
  header["distance_field"] = std::move(distances);
  out << header.dump() << '\n';
  for (int e = 0; e < args.episodes; ++e) {
    const auto traj = latent::rollout(maze, policy, latent::mix_seed(args.seed, 0x65787074, static_cast<std::uint64_t>(e)));
    json line = latent::io::to_json(traj, maze);
    line["episode"] = e;
    out << line.dump() << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Water-filling verification and unrewarded GRPO experiments on a tabular maze."};
  app.require_subcommand(1);

  WaterfillArgs wf;
  auto* waterfill = app.add_subcommand("waterfill", "Solve one water-filling instance given as JSON");
  waterfill->add_option("instance", wf.input, "Instance file {pi_ref, pi_prop, eps, u_star?, beta?}")->required();
  waterfill->add_option("--tol", wf.tol, "Bisection tolerance on tau")->check(CLI::PositiveNumber);
  waterfill->footer("Exit codes: 0 ok, 2 malformed input, 3 domain violation (e.g. reference entry below floor).");

  VerifyArgs va;
  auto* verify = app.add_subcommand("verify", "Run randomized verification batches");
  verify->add_option("--theorem", va.theorem, "Which population to verify")->check(CLI::IsMember({"1", "2", "all"}));
  verify->add_option("--seeds", va.seeds, "Instances per population");
  verify->add_option("--vocab-min", va.vocab_min, "Smallest vocabulary size");
  verify->add_option("--vocab-max", va.vocab_max, "Largest vocabulary size");
  verify->add_option("--eps", va.eps, "Clip widths to draw from")->delimiter(',');
  verify->add_option("--beta", va.beta, "KL strengths to draw from")->delimiter(',');
  verify->add_option("--resolutions", va.resolutions, "Density discretization sweep")->delimiter(',');
  verify->add_option("--seed", va.seed, "Base seed; instance i uses seed + i");
  verify->add_option("--out", va.out, "JSON-lines report path (default: stdout)");
  verify->footer("Exit codes: 0 all ordered-population checks pass, 2 bad flags, 4 a check failed.");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train one regime and write metrics.csv and policy.json");
  train->add_option("--config", ta.config, "JSON or key = value config file")->check(CLI::ExistingFile);
  train->add_option("--out", ta.out, "Output directory");
  train->add_option("--seed", ta.seed, "Override the config seed");
  train->footer("Exit codes: 0 ok, 2 malformed config, 5 non-finite values during training.");

  TrainArgs ca;
  auto* compare = app.add_subcommand("compare", "Run all four regimes over several seeds");
  compare->add_option("--config", ca.config, "JSON or key = value config file")->check(CLI::ExistingFile);
  compare->add_option("--out", ca.out, "Output directory for comparison.json");
  compare->add_option("--seed", ca.seed, "Override the config seed");
  compare->footer("Exit codes: 0 ok, 2 malformed config, 5 non-finite values during training.");

  ExportArgs ea;
  auto* exp = app.add_subcommand("export", "Sample trajectories from a policy as JSON lines");
  exp->add_option("--maze", ea.maze, "Maze JSON (default: the built-in 8x8 maze)");
  exp->add_option("--policy", ea.policy, "policy.json written by train (default: uniform)");
  exp->add_option("--episodes", ea.episodes, "Number of trajectories");
  exp->add_option("--seed", ea.seed, "Sampling seed");
  exp->add_option("--out", ea.out, "Output path (default: stdout)");
  exp->footer("Exit codes: 0 ok, 2 malformed input.");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInput;
  }

  try {
    if (*waterfill) return cmd_waterfill(wf);
    if (*verify) return cmd_verify(va);
    if (*train) return cmd_train(ta);
    if (*compare) return cmd_compare(ca);
    if (*exp) return cmd_export(ea);
  } catch (const latent::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInput;
  }
  return kInput;
}

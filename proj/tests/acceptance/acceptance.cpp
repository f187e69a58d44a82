// Acceptance suite: one PASS/FAIL line per criterion. Thresholds and runtime
// limits are pinned below.
//
//   acceptance                 run everything
//   acceptance --criterion 4   run one criterion
//
// Exit status is 0 when every criterion passes, except clauses listed as known
// unattainable: those print FAIL with their measured margin and are excluded
// from the exit status as long as they stay red.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "latent/io.hpp"
#include "latent/oracle.hpp"
#include "latent/trainer.hpp"
#include "latent/waterfill.hpp"
#include "test_support.hpp"

using namespace latent;

namespace {

struct Outcome {
  bool passed = true;
  std::string detail;
  // Known-unattainable clause that is still red. Printed, but not counted.
  bool known_red = false;
  std::string known_red_detail;
  // A known-unattainable clause that unexpectedly turned green.
  bool known_red_flipped = false;
};

struct Criterion {
  int id;
  const char* name;
  double time_limit_s;
  std::function<Outcome()> run;
};

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

// ---- 1 -------------------------------------------------------------------

Outcome waterfill_correctness() {
  constexpr double kTol = 1e-10;
  constexpr double kExampleTol = 1e-9;
  // Capped entries equal the cap up to the final normalization's rounding.
  constexpr double kCapTol = 1e-15;
  const std::array<double, 3> eps_set{0.1, 0.2, 0.5};
  double worst_sum = 0.0;
  double worst_cap = 0.0;
  double worst_residual = 0.0;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    std::mt19937_64 rng(mix_seed(101, i));
    const int v = 2 + static_cast<int>(i % 63);
    const auto inst = latent::testing::random_instance(rng, v, eps_set[i % 3]);
    const auto r = waterfill_update(inst);
    worst_sum = std::max(worst_sum, std::abs(r.pi_star.probs().sum() - 1.0));
    worst_cap = std::max(worst_cap, (r.pi_star.probs() - inst.caps()).maxCoeff());
    worst_residual = std::max(worst_residual, std::abs(r.mass_residual));
  }
  const double tau2 = waterfill_update(latent::testing::instance({0.5, 0.5}, {0.7, 0.3}, 0.2)).tau;
  const double tau3 = waterfill_update(latent::testing::instance({1, 1, 1}, {0.6, 0.3, 0.1}, 0.5)).tau;
  Outcome o;
  o.passed = worst_sum <= kTol && worst_cap <= kCapTol && worst_residual <= kTol && std::abs(tau2 - 1.28) <= kExampleTol &&
             std::abs(tau3 - 1.275) <= kExampleTol;
  o.detail = fmt("max|sum-1|=%.2e max(pi*-cap)=%.2e max|residual|=%.2e tau2=%.12f tau3=%.12f", worst_sum,
                 worst_cap, worst_residual, tau2, tau3);
  return o;
}

// ---- 2 -------------------------------------------------------------------

Outcome monotone_improvement() {
  constexpr double kTol = 1e-12;
  constexpr double kDecompositionTol = 1e-10;
  VerificationConfig config;
  int vs_ref_fail = 0;
  int vs_prop_fail = 0;
  int assoc_fail = 0;
  int decomposition_fail = 0;
  double worst_vs_prop = std::numeric_limits<double>::infinity();
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const auto report = verify_theorem1(i, config);
    for (const auto& c : report.checks) {
      if (c.kind == CheckKind::kImprovementVsRef && c.margin < -kTol) ++vs_ref_fail;
      if (c.kind == CheckKind::kAssociationInequality && c.margin < -kTol) ++assoc_fail;
      if (c.kind == CheckKind::kImprovementVsProp) {
        worst_vs_prop = std::min(worst_vs_prop, c.margin);
        if (c.margin < -kTol) ++vs_prop_fail;
      }
    }
  }
  // Decomposition against the direct difference on the same sampler.
  double worst_decomposition = 0.0;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const double eps = config.eps_grid[i % config.eps_grid.size()];
    const auto inst = sample_mlr_instance(i, 2 + static_cast<int>(i % 63), eps, 0.01);
    const auto r = waterfill_update(inst);
    const auto d = delta_j_decomposition(r, inst);
    const double direct = expected_utility(r.pi_star, inst.u_star) - expected_utility(inst.pi_ref, inst.u_star);
    const double err = d.degenerate() ? std::abs(direct) : std::abs(d.delta_j - direct);
    worst_decomposition = std::max(worst_decomposition, err);
    if (err > kDecompositionTol) ++decomposition_fail;
  }
  const auto control = anti_mlr_control();
  const auto control_report = verify_instance(0, control, config, "anti_mlr");
  const auto control_delta = delta_j_decomposition(waterfill_update(control), control).delta_j;
  const bool control_flagged = !control_report.passed() && std::abs(control_delta + 0.14) <= 1e-9;

  Outcome o;
  o.passed = vs_ref_fail == 0 && assoc_fail == 0 && decomposition_fail == 0 && control_flagged;
  o.detail = fmt("J*>=J_ref fails=%d assoc fails=%d decomposition fails=%d (max err %.2e) anti-MLR dJ=%.6f flagged=%s",
                 vs_ref_fail, assoc_fail, decomposition_fail, worst_decomposition, control_delta,
                 control_flagged ? "yes" : "no");
  // J(pi*) >= J(pi_prop) does not follow from the construction: on the ordered
  // two-token instance pi* = (0.64, 0.36) sits between pi_ref and pi_prop.
  if (vs_prop_fail > 0) {
    o.known_red = true;
    o.known_red_detail = fmt("J*>=J_prop holds in %d/1000 (worst margin %.4f)", 1000 - vs_prop_fail, worst_vs_prop);
  } else {
    o.known_red_flipped = true;
  }
  return o;
}

// ---- 3 -------------------------------------------------------------------

Outcome surrogate_optimality() {
  constexpr double kTol = 1e-8;
  int failures = 0;
  double worst = std::numeric_limits<double>::infinity();
  const std::array<double, 3> betas{0.01, 0.005, 0.001};
  const std::array<double, 3> eps_set{0.1, 0.2, 0.5};
  for (std::uint64_t i = 0; i < 200; ++i) {
    const auto inst = sample_mlr_instance(mix_seed(303, i), 2 + static_cast<int>(i % 2), eps_set[i % 3], betas[(i / 3) % 3]);
    const auto r = waterfill_update(inst);
    const double margin =
        per_state_surrogate(r.pi_star, inst) - per_state_surrogate(brute_force_maximizer(inst, 1e-3), inst);
    worst = std::min(worst, margin);
    if (margin < -kTol) ++failures;
  }
  return {failures == 0, fmt("failures=%d/200 worst margin=%.3e", failures, worst)};
}

// ---- 4 -------------------------------------------------------------------

Outcome discretized_improvement() {
  const std::vector<int> resolutions{64, 128, 256, 512};
  int improvement_fail = 0;
  int decreasing = 0;
  for (std::uint64_t i = 0; i < 50; ++i) {
    const auto report = verify_theorem2_discretized(i, resolutions);
    for (const auto& c : report.checks) {
      if (c.kind == CheckKind::kImprovementVsRef && !c.passed) ++improvement_fail;
    }
    decreasing += report.tau_differences_decreasing ? 1 : 0;
  }
  const bool ok = improvement_fail == 0 && decreasing >= 45;
  return {ok, fmt("improvement failures=%d, |tau(2N)-tau(N)| strictly decreasing in %d/50 (need >= 45)",
                  improvement_fail, decreasing)};
}

// ---- 5 -------------------------------------------------------------------

Outcome kl_estimator() {
  constexpr int kSamples = 100000;
  int outside = 0;
  double worst_z = 0.0;
  for (std::uint64_t pair = 0; pair < 20; ++pair) {
    std::mt19937_64 rng(mix_seed(505, pair));
    const int v = 2 + static_cast<int>(pair % 9);
    const Distribution p = latent::testing::random_distribution(rng, v);
    const Distribution q = latent::testing::random_distribution(rng, v);
    std::discrete_distribution<int> draw(p.probs().data(), p.probs().data() + p.size());
    double sum = 0.0;
    double sq = 0.0;
    for (int k = 0; k < kSamples; ++k) {
      const int i = draw(rng);
      const double val = k3_term(q[i] / p[i]);
      sum += val;
      sq += val * val;
    }
    const double mean = sum / kSamples;
    const double se = std::sqrt(std::max(sq / kSamples - mean * mean, 0.0) / kSamples);
    const double z = std::abs(mean - exact_kl(p, q)) / se;
    worst_z = std::max(worst_z, z);
    if (z > 3.0) ++outside;
  }
  return {outside == 0, fmt("pairs outside 3 SE=%d/20 worst |z|=%.2f", outside, worst_z)};
}

// ---- 6 -------------------------------------------------------------------

Outcome gradient_correctness() {
  constexpr double kTol = 1e-5;
  constexpr double kKinkMargin = 1e-4;
  std::mt19937_64 rng(606);
  int failures = 0;
  double worst = 0.0;
  for (ObjectiveMode mode : {ObjectiveMode::kRewarded, ObjectiveMode::kUnrewarded}) {
    int checked = 0;
    while (checked < 100) {
      const auto c = latent::testing::random_gradient_case(rng, mode == ObjectiveMode::kRewarded);
      if (latent::testing::kink_distance(c, mode) < kKinkMargin) continue;
      const double err = latent::testing::gradient_relative_error(surrogate_gradient(c.policy, c.group, mode, c.options),
                                                                  latent::testing::finite_difference_gradient(c, mode),
                                                                  c.policy.num_actions());
      worst = std::max(worst, err);
      if (err > kTol) ++failures;
      ++checked;
    }
  }
  return {failures == 0, fmt("configurations over tolerance=%d/200 worst relative error=%.2e", failures, worst)};
}

// ---- 7 -------------------------------------------------------------------

Outcome dynamics_consistency() {
  constexpr double kTv = 0.01;
  constexpr int kInstances = 20;
  constexpr int kGroup = 10;
  double worst = 0.0;
  int failures = 0;
  for (std::uint64_t k = 0; k < kInstances; ++k) {
    std::mt19937_64 rng(mix_seed(707, k));
    const int a = 2 + static_cast<int>(k % 2);
    // Proposal on the 1/G grid with every token sampled at least once.
    std::vector<double> counts(static_cast<std::size_t>(a), 1.0);
    std::uniform_int_distribution<int> pick(0, a - 1);
    for (int extra = a; extra < kGroup; ++extra) counts[static_cast<std::size_t>(pick(rng))] += 1.0;
    const Distribution prop = make_distribution(std::span<const double>(counts));
    const auto inst = StateInstance::make(latent::testing::random_distribution(rng, a, 0.2), prop,
                                          UtilityVector::zeros(a), 0.2, 0.001);
    const double tv = total_variation(simulate_single_state(inst, DynamicsOptions{}), waterfill_update(inst).pi_star);
    worst = std::max(worst, tv);
    if (tv > kTv) ++failures;
  }
  return {failures == 0, fmt("instances over TV %.2f=%d/%d worst TV=%.2e", kTv, failures, kInstances, worst)};
}

// ---- 8 -------------------------------------------------------------------

Outcome latent_learning() {
  constexpr double kSoftMargin = 0.02;
  const TrainConfig config;
  const ComparisonReport report = run_experiment(config.maze, config);
  const double unrewarded = report.summary(Regime::kUnrewarded).median;
  const double two = report.summary(Regime::kTwoStage).median;
  const double thr = report.summary(Regime::kRewardedThroughout).median;
  const bool hard = unrewarded > report.base_median;
  const bool soft = two >= thr - kSoftMargin;
  const bool budgets = report.trajectories_per_seed[2] == report.trajectories_per_seed[3] &&
                       report.gradient_steps_per_seed[2] == report.gradient_steps_per_seed[3];
  return {hard && soft && budgets,
          fmt("(a) unrewarded median %.4f vs base %.4f [%s]; (b) two_stage %.4f vs throughout %.4f - %.2f [%s], "
              "paired diff median %.4f CI95 [%.4f, %.4f]; rewarded median %.4f",
              unrewarded, report.base_median, hard ? "hard pass" : "hard FAIL", two, thr, kSoftMargin,
              soft ? "soft pass" : "soft FAIL", report.paired_difference_median, report.paired_difference_ci_low,
              report.paired_difference_ci_high, report.summary(Regime::kRewarded).median)};
}

// ---- 9 -------------------------------------------------------------------

Outcome reward_invariance() {
  std::mt19937_64 rng(909);
  std::uniform_real_distribution<double> wild(-1e6, 1e6);
  int surrogate_mismatch = 0;
  for (int trial = 0; trial < 200; ++trial) {
    auto c = latent::testing::random_gradient_case(rng, false);
    const auto before = evaluate_surrogate(c.policy, c.group, ObjectiveMode::kUnrewarded, c.options);
    const auto grad_before = surrogate_gradient(c.policy, c.group, ObjectiveMode::kUnrewarded, c.options);
    for (auto& t : c.group.trajectories) {
      t.reward = trial % 3 == 0 ? std::numeric_limits<double>::quiet_NaN() : wild(rng);
    }
    const auto after = evaluate_surrogate(c.policy, c.group, ObjectiveMode::kUnrewarded, c.options);
    const auto grad_after = surrogate_gradient(c.policy, c.group, ObjectiveMode::kUnrewarded, c.options);
    if (!(before == after) || grad_before != grad_after) ++surrogate_mismatch;
  }

  const Maze maze = build_maze(default_maze_spec());
  TrainConfig config;
  config.regime = Regime::kUnrewarded;
  config.steps_phase1 = 40;
  const PhaseResult honest = run_regime(maze, config);
  bool poisoned_ok = true;
  try {
    const RewardFn poisoned = [](const Trajectory&) -> double { throw std::logic_error("reward requested"); };
    const PhaseResult out = run_regime(maze, config, poisoned);
    poisoned_ok = out.metrics == honest.metrics && out.policy == honest.policy;
  } catch (const std::exception&) {
    poisoned_ok = false;
  }
  const RewardFn inverted = [](const Trajectory& t) { return 1.0 - accuracy_reward(t); };
  const PhaseResult swapped = run_regime(maze, config, inverted);
  const bool swapped_ok = swapped.metrics == honest.metrics && swapped.policy == honest.policy;
  return {surrogate_mismatch == 0 && poisoned_ok && swapped_ok,
          fmt("surrogate mismatches=%d/200, poisoned-reward phase identical=%s, substituted-reward phase identical=%s",
              surrogate_mismatch, poisoned_ok ? "yes" : "no", swapped_ok ? "yes" : "no")};
}

// ---- 10 ------------------------------------------------------------------

std::string training_csv(const TrainConfig& config) {
  std::ostringstream out;
  write_metrics_csv(out, run_regime(build_maze(config.maze), config).metrics);
  return out.str();
}

std::string verification_dump() {
  std::ostringstream out;
  VerificationConfig config;
  for (std::uint64_t i = 0; i < 100; ++i) out << io::to_json(verify_theorem1(i, config)).dump() << '\n';
  for (std::uint64_t i = 0; i < 5; ++i) out << io::to_json(verify_theorem2_discretized(i, {64, 128, 256, 512})).dump() << '\n';
  return out.str();
}

Outcome determinism() {
  TrainConfig config;
  config.steps_phase1 = 40;
  config.steps_phase2 = 40;
  config.seed = 3;
  const std::string csv_a = training_csv(config);
  const std::string csv_b = training_csv(config);
  const std::string ver_a = verification_dump();
  const std::string ver_b = verification_dump();
  return {csv_a == csv_b && ver_a == ver_b && !csv_a.empty(),
          fmt("metrics CSV identical=%s (%zu bytes), verification reports identical=%s (%zu bytes)",
              csv_a == csv_b ? "yes" : "no", csv_a.size(), ver_a == ver_b ? "yes" : "no", ver_a.size())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  int only = 0;
  app.add_option("--criterion", only, "run a single criterion (1-10)")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria{
      {1, "waterfill correctness", 5.0, waterfill_correctness},
      {2, "monotone improvement on MLR instances", 30.0, monotone_improvement},
      {3, "surrogate optimality vs grid", 120.0, surrogate_optimality},
      {4, "discretized density improvement", 120.0, discretized_improvement},
      {5, "k3 KL estimator", 30.0, kl_estimator},
      {6, "gradient correctness", 60.0, gradient_correctness},
      {7, "waterfill-dynamics consistency", 60.0, dynamics_consistency},
      {8, "latent learning on the default maze", 600.0, latent_learning},
      {9, "reward invariance", 0.0, reward_invariance},
      {10, "determinism", 0.0, determinism},
  };

  int status = 0;
  for (const auto& c : criteria) {
    if (only != 0 && c.id != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = c.time_limit_s <= 0.0 || secs < c.time_limit_s;
    const bool ok = o.passed && in_time;
    std::string timing = fmt("%.2fs", secs);
    if (c.time_limit_s > 0.0) timing += fmt(" (limit %.0fs)", c.time_limit_s);
    if (o.known_red) {
      std::printf("FAIL [%d] %s: %s | remaining clauses %s: %s | %s\n", c.id, c.name, o.known_red_detail.c_str(),
                  ok ? "pass" : "FAIL", o.detail.c_str(), timing.c_str());
    } else {
      std::printf("%s [%d] %s: %s | %s\n", ok ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), timing.c_str());
    }
    if (o.known_red_flipped) {
      std::printf("NOTE [%d] a clause recorded as unattainable now passes; update the known-red list\n", c.id);
      status = 1;
    }
    if (!ok) status = 1;
    std::fflush(stdout);
  }
  return status;
}

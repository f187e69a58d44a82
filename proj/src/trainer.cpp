#include "latent/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <random>

namespace latent {
namespace {

constexpr std::uint64_t kRolloutStream = 0x726f6c6c;  // "roll"
constexpr std::uint64_t kEvalStream = 0x6576616c;     // "eval"
constexpr std::uint64_t kEpisodeStream = 0x65706973;  // "epis"
constexpr std::uint64_t kDiagStream = 0x64696167;     // "diag"
constexpr std::uint64_t kBootstrapStream = 0x626f6f74;  // "boot"

std::uint64_t rollout_index(int global_step, int group, int member) {
  return (static_cast<std::uint64_t>(global_step) << 32) | (static_cast<std::uint64_t>(group) << 16) |
         static_cast<std::uint64_t>(member);
}

ObjectiveMode mode_of(Phase phase) {
  return phase == Phase::kRewarded ? ObjectiveMode::kRewarded : ObjectiveMode::kUnrewarded;
}

std::vector<RolloutGroup> sample_batch(const TabularPolicy& behavior, const TabularPolicy& reference, const Maze& maze,
                                       const TrainConfig& config, Phase phase, std::uint64_t stream, int global_step,
                                       const RewardFn& reward) {
  std::vector<RolloutGroup> batch;
  batch.reserve(static_cast<std::size_t>(config.batch_prompts));
  for (int g = 0; g < config.batch_prompts; ++g) {
    RolloutGroup group;
    group.prompt_id = maze.state_of(maze.start());
    for (int j = 0; j < config.group_size; ++j) {
      const Trajectory traj =
          rollout(maze, behavior, mix_seed(config.seed, stream, rollout_index(global_step, g, j)));
      GroupTrajectory o;
      o.states = traj.states;
      o.actions = traj.actions;
      o.old_probs = traj.behavior_probs;
      o.ref_probs.reserve(traj.actions.size());
      for (std::size_t t = 0; t < traj.actions.size(); ++t) {
        o.ref_probs.push_back(reference.prob(traj.states[t], traj.actions[t]));
      }
      if (phase == Phase::kRewarded) o.reward = reward(traj);
      group.trajectories.push_back(std::move(o));
    }
    batch.push_back(std::move(group));
  }
  return batch;
}

struct BatchEval {
  double surrogate = 0.0;
  double clip_frac = 0.0;
};

BatchEval evaluate_batch(const TabularPolicy& policy, const std::vector<RolloutGroup>& batch, Phase phase,
                         const SurrogateOptions& options) {
  BatchEval out;
  for (const auto& group : batch) {
    const SurrogateEval e = evaluate_surrogate(policy, group, mode_of(phase), options);
    out.surrogate += e.value;
    out.clip_frac += e.clip_fraction;
  }
  const double n = static_cast<double>(batch.size());
  out.surrogate /= n;
  out.clip_frac /= n;
  return out;
}

MetricsRecord make_record(int step, Phase phase, const TabularPolicy& policy, const TabularPolicy& reference,
                          const Maze& maze, const TrainConfig& config, const BatchEval& batch) {
  const EvalStats stats = evaluate_detailed(policy, maze, config.eval_episodes,
                                            mix_seed(config.seed, kEvalStream, static_cast<std::uint64_t>(step)));
  return {step,
          phase,
          stats.goal_rate,
          stats.mean_len,
          batch.surrogate,
          batch.clip_frac,
          mean_kl_to_reference(policy, reference, maze),
          mlr_diagnostic(policy, reference, maze)};
}

}  // namespace

const char* to_string(Regime r) {
  switch (r) {
    case Regime::kUnrewarded: return "unrewarded";
    case Regime::kRewarded: return "rewarded";
    case Regime::kTwoStage: return "two_stage";
    case Regime::kRewardedThroughout: return "rewarded_throughout";
  }
  return "unknown";
}

const char* to_string(Phase p) { return p == Phase::kRewarded ? "rewarded" : "unrewarded"; }

const char* to_string(ReferenceAnchor a) { return a == ReferenceAnchor::kInitial ? "initial" : "phase_entry"; }

const char* to_string(KlEstimator k) { return k == KlEstimator::kRatioWeighted ? "ratio_weighted" : "per_token"; }

Regime regime_from_string(const std::string& name) {
  for (Regime r : {Regime::kUnrewarded, Regime::kRewarded, Regime::kTwoStage, Regime::kRewardedThroughout}) {
    if (name == to_string(r)) return r;
  }
  throw Error(Errc::kParse, "unknown regime '" + name + "'");
}

ReferenceAnchor anchor_from_string(const std::string& name) {
  if (name == "phase_entry") return ReferenceAnchor::kPhaseEntry;
  if (name == "initial") return ReferenceAnchor::kInitial;
  throw Error(Errc::kParse, "unknown reference anchor '" + name + "'");
}

KlEstimator kl_estimator_from_string(const std::string& name) {
  if (name == "per_token") return KlEstimator::kPerToken;
  if (name == "ratio_weighted") return KlEstimator::kRatioWeighted;
  throw Error(Errc::kParse, "unknown kl estimator '" + name + "'");
}

void TrainConfig::validate() const {
  auto fail = [](const char* what) { throw Error(Errc::kInvalidArgument, what); };
  if (steps_phase1 < 0 || steps_phase2 < 0) fail("step counts must be nonnegative");
  if (regime == Regime::kTwoStage && (steps_phase1 == 0) != (steps_phase2 == 0)) {
    fail("two_stage needs both phase step counts positive (or both zero)");
  }
  if (group_size < 2) fail("group_size must be at least 2");
  if (batch_prompts < 1) fail("batch_prompts must be positive");
  if (!(eps > 0.0 && eps < 1.0)) fail("eps must lie in (0, 1)");
  if (!(beta >= 0.0) || !std::isfinite(beta)) fail("beta must be nonnegative");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be nonnegative");
  if (!(temperature > 0.0)) fail("temperature must be positive");
  if (eval_every < 1) fail("eval_every must be positive");
  if (eval_episodes < 1) fail("eval_episodes must be positive");
  if (inner_epochs < 1) fail("inner_epochs must be positive");
  if (num_seeds < 1) fail("num_seeds must be positive");
}

void RunMetrics::append(const RunMetrics& other) {
  records.insert(records.end(), other.records.begin(), other.records.end());
}

EvalStats evaluate_detailed(const TabularPolicy& policy, const Maze& maze, int episodes, std::uint64_t seed) {
  if (episodes < 1) throw Error(Errc::kInvalidArgument, "evaluate: episodes must be positive");
  long reached = 0;
  long total_len = 0;
  for (int e = 0; e < episodes; ++e) {
    const Trajectory traj = rollout(maze, policy, mix_seed(seed, kEpisodeStream, static_cast<std::uint64_t>(e)));
    reached += traj.reached_goal ? 1 : 0;
    total_len += traj.length();
  }
  return {static_cast<double>(reached) / episodes, static_cast<double>(total_len) / episodes};
}

double evaluate(const TabularPolicy& policy, const Maze& maze, int episodes, std::uint64_t seed) {
  return evaluate_detailed(policy, maze, episodes, seed).goal_rate;
}

double mlr_diagnostic(const TabularPolicy& current, const TabularPolicy& reference, const Maze& maze) {
  long agree = 0;
  long total = 0;
  for (StateId s = 0; s < maze.num_cells(); ++s) {
    const Cell cell = maze.cell_of(s);
    if (cell == maze.goal()) continue;
    const Vector h = current.action_prob_vector(s).cwiseQuotient(reference.action_prob_vector(s));
    const Vector u = latent_utility_row(maze, cell);
    const double tie = 1e-12 * h.maxCoeff();
    for (int a = 0; a < kNumActions; ++a) {
      for (int b = a + 1; b < kNumActions; ++b) {
        ++total;
        const double dh = std::abs(h[a] - h[b]) <= tie ? 0.0 : h[a] - h[b];
        if (dh * (u[a] - u[b]) >= 0.0) ++agree;
      }
    }
  }
  return total == 0 ? 1.0 : static_cast<double>(agree) / static_cast<double>(total);
}

double mean_kl_to_reference(const TabularPolicy& current, const TabularPolicy& reference, const Maze& maze) {
  double sum = 0.0;
  int count = 0;
  for (StateId s = 0; s < maze.num_cells(); ++s) {
    if (maze.cell_of(s) == maze.goal()) continue;
    sum += exact_kl(current.action_probs(s), reference.action_probs(s));
    ++count;
  }
  return count == 0 ? 0.0 : sum / count;
}

PhaseResult run_phase(const TabularPolicy& policy, const Maze& maze, const TrainConfig& config, Phase phase, int steps,
                      const PhaseContext& context, const RewardFn& reward) {
  config.validate();
  if (steps < 0) throw Error(Errc::kInvalidArgument, "run_phase: negative step count");
  const TabularPolicy reference = context.reference != nullptr ? *context.reference : policy;
  const SurrogateOptions options = config.surrogate_options();

  PhaseResult result{policy, {}};
  if (context.record_entry) {
    const auto diag = sample_batch(policy, reference, maze, config, phase, kDiagStream, context.step_offset, reward);
    result.metrics.records.push_back(make_record(context.step_offset, phase, policy, reference, maze, config,
                                                 evaluate_batch(policy, diag, phase, options)));
  }

  TabularPolicy& current = result.policy;
  for (int k = 1; k <= steps; ++k) {
    const int global_step = context.step_offset + k;
    const TabularPolicy behavior = current;
    const auto batch = sample_batch(behavior, reference, maze, config, phase, kRolloutStream, global_step, reward);
    for (int epoch = 0; epoch < config.inner_epochs; ++epoch) {
      PolicyGradient gradient;
      for (const auto& group : batch) {
        accumulate(gradient, surrogate_gradient(current, group, mode_of(phase), options),
                   1.0 / static_cast<double>(batch.size()));
      }
      current = policy_step(current, gradient, config.learning_rate);
    }
    if (k % config.eval_every == 0 || k == steps) {
      result.metrics.records.push_back(make_record(global_step, phase, current, reference, maze, config,
                                                   evaluate_batch(current, batch, phase, options)));
    }
  }
  return result;
}

TabularPolicy initial_policy(const TrainConfig& config) { return TabularPolicy(kNumActions, config.temperature); }

PhaseResult run_regime(const Maze& maze, const TrainConfig& config, const RewardFn& reward) {
  config.validate();
  const TabularPolicy start = initial_policy(config);
  PhaseContext entry;
  entry.record_entry = true;
  switch (config.regime) {
    case Regime::kUnrewarded:
      return run_phase(start, maze, config, Phase::kUnrewarded, config.steps_phase1, entry, reward);
    case Regime::kRewarded:
      return run_phase(start, maze, config, Phase::kRewarded, config.steps_phase1, entry, reward);
    case Regime::kRewardedThroughout:
      return run_phase(start, maze, config, Phase::kRewarded, config.steps_phase1 + config.steps_phase2, entry, reward);
    case Regime::kTwoStage: {
      PhaseResult first = run_phase(start, maze, config, Phase::kUnrewarded, config.steps_phase1, entry, reward);
      PhaseContext second_ctx;
      second_ctx.step_offset = config.steps_phase1;
      if (config.reference_anchor == ReferenceAnchor::kInitial) second_ctx.reference = &start;
      PhaseResult second = run_phase(first.policy, maze, config, Phase::kRewarded, config.steps_phase2, second_ctx, reward);
      first.metrics.append(second.metrics);
      return {std::move(second.policy), std::move(first.metrics)};
    }
  }
  throw Error(Errc::kInvalidArgument, "unknown regime");
}

double quantile_of(std::vector<double> values, double q) {
  if (values.empty()) throw Error(Errc::kEmptyInput, "quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

double median_of(std::vector<double> values) { return quantile_of(std::move(values), 0.5); }

ComparisonReport run_experiment(const MazeSpec& maze_spec, const TrainConfig& config) {
  config.validate();
  const Maze maze = build_maze(maze_spec);
  ComparisonReport report;
  constexpr std::array<Regime, 4> kRegimes{Regime::kUnrewarded, Regime::kRewarded, Regime::kTwoStage,
                                           Regime::kRewardedThroughout};
  for (std::size_t r = 0; r < kRegimes.size(); ++r) report.regimes[r].regime = kRegimes[r];

  const long per_step = static_cast<long>(config.batch_prompts) * config.group_size;
  const std::array<long, 4> steps{config.steps_phase1, config.steps_phase1,
                                  static_cast<long>(config.steps_phase1) + config.steps_phase2,
                                  static_cast<long>(config.steps_phase1) + config.steps_phase2};
  for (std::size_t r = 0; r < 4; ++r) {
    report.gradient_steps_per_seed[r] = steps[r] * config.inner_epochs;
    report.trajectories_per_seed[r] = steps[r] * per_step;
  }

  for (int k = 0; k < config.num_seeds; ++k) {
    TrainConfig run = config;
    run.seed = config.seed + static_cast<std::uint64_t>(k);
    report.seeds.push_back(run.seed);
    report.base_goal_rates.push_back(
        evaluate(initial_policy(run), maze, run.eval_episodes, mix_seed(run.seed, kEvalStream, 0)));
    for (std::size_t r = 0; r < kRegimes.size(); ++r) {
      run.regime = kRegimes[r];
      const PhaseResult out = run_regime(maze, run);
      report.regimes[r].final_goal_rates.push_back(out.metrics.records.back().goal_rate);
    }
  }

  report.base_median = median_of(report.base_goal_rates);
  report.base_best = *std::max_element(report.base_goal_rates.begin(), report.base_goal_rates.end());
  for (auto& s : report.regimes) {
    s.median = median_of(s.final_goal_rates);
    s.q1 = quantile_of(s.final_goal_rates, 0.25);
    s.q3 = quantile_of(s.final_goal_rates, 0.75);
    s.best = *std::max_element(s.final_goal_rates.begin(), s.final_goal_rates.end());
    s.delta_vs_base = s.median - report.base_median;
  }
  report.unrewarded_vs_base = report.summary(Regime::kUnrewarded).median - report.base_median;
  report.two_stage_vs_throughout =
      report.summary(Regime::kTwoStage).median - report.summary(Regime::kRewardedThroughout).median;

  std::vector<double> paired;
  const auto& two = report.summary(Regime::kTwoStage).final_goal_rates;
  const auto& thr = report.summary(Regime::kRewardedThroughout).final_goal_rates;
  for (std::size_t i = 0; i < two.size(); ++i) paired.push_back(two[i] - thr[i]);
  report.paired_difference_median = median_of(paired);
  std::mt19937_64 rng(mix_seed(config.seed, kBootstrapStream));
  std::uniform_int_distribution<std::size_t> pick(0, paired.size() - 1);
  std::vector<double> medians;
  constexpr int kResamples = 2000;
  for (int b = 0; b < kResamples; ++b) {
    std::vector<double> sample(paired.size());
    for (auto& v : sample) v = paired[pick(rng)];
    medians.push_back(median_of(std::move(sample)));
  }
  report.paired_difference_ci_low = quantile_of(medians, 0.025);
  report.paired_difference_ci_high = quantile_of(medians, 0.975);
  return report;
}

void write_metrics_csv(std::ostream& out, const RunMetrics& metrics) {
  out << "step,phase,goal_rate,mean_len,surrogate,clip_frac,kl_ref,mlr_rate\n";
  const auto flags = out.flags();
  const auto precision = out.precision();
  out << std::setprecision(10);
  for (const auto& r : metrics.records) {
    out << r.step << ',' << to_string(r.phase) << ',' << r.goal_rate << ',' << r.mean_len << ',' << r.surrogate << ','
        << r.clip_frac << ',' << r.kl_ref << ',' << r.mlr_rate << '\n';
  }
  out.flags(flags);
  out.precision(precision);
}

}  // namespace latent

#ifndef LATENT_TRAINER_HPP_
#define LATENT_TRAINER_HPP_

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "latent/grpo.hpp"
#include "latent/maze.hpp"

namespace latent {

enum class Regime { kUnrewarded, kRewarded, kTwoStage, kRewardedThroughout };
enum class Phase { kUnrewarded, kRewarded };

/// Which policy anchors the KL term of a phase.
enum class ReferenceAnchor { kPhaseEntry, kInitial };

const char* to_string(Regime r);
const char* to_string(Phase p);
const char* to_string(ReferenceAnchor a);
Regime regime_from_string(const std::string& name);
ReferenceAnchor anchor_from_string(const std::string& name);
KlEstimator kl_estimator_from_string(const std::string& name);
const char* to_string(KlEstimator k);

struct TrainConfig {
  Regime regime = Regime::kTwoStage;
  int steps_phase1 = 200;
  int steps_phase2 = 200;
  int group_size = 5;
  int batch_prompts = 8;
  double eps = 0.2;
  double beta = 0.01;
  double learning_rate = 8.0;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  int eval_every = 20;
  int eval_episodes = 200;
  /// Gradient steps per sampled batch; 1 is fully on-policy.
  int inner_epochs = 1;
  KlEstimator kl = KlEstimator::kPerToken;
  ReferenceAnchor reference_anchor = ReferenceAnchor::kPhaseEntry;
  /// Seeds used by run_experiment: seed, seed + 1, ...
  int num_seeds = 10;
  MazeSpec maze = default_maze_spec();

  /// Throws Error(kInvalidArgument) on out-of-range fields.
  void validate() const;
  SurrogateOptions surrogate_options() const { return {eps, beta, kl}; }
};

struct MetricsRecord {
  int step;
  Phase phase;
  double goal_rate;
  double mean_len;
  double surrogate;
  double clip_frac;
  double kl_ref;
  double mlr_rate;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

struct RunMetrics {
  std::vector<MetricsRecord> records;

  void append(const RunMetrics& other);
  friend bool operator==(const RunMetrics&, const RunMetrics&) = default;
};

using RewardFn = std::function<double(const Trajectory&)>;

struct PhaseResult {
  TabularPolicy policy;
  RunMetrics metrics;
};

struct EvalStats {
  double goal_rate = 0.0;
  double mean_len = 0.0;
};

/// Fraction of sampled episodes that reach the goal; seeds come from a stream
/// disjoint from training rollouts.
double evaluate(const TabularPolicy& policy, const Maze& maze, int episodes, std::uint64_t seed);
EvalStats evaluate_detailed(const TabularPolicy& policy, const Maze& maze, int episodes, std::uint64_t seed);

/// Share of (state, unordered action pair) combinations where h = current / reference
/// is ordered like the latent utility. Ties count as agreement.
double mlr_diagnostic(const TabularPolicy& current, const TabularPolicy& reference, const Maze& maze);

/// Mean exact KL(current || reference) over the non-goal cells.
double mean_kl_to_reference(const TabularPolicy& current, const TabularPolicy& reference, const Maze& maze);

struct PhaseContext {
  /// Global step at phase entry.
  int step_offset = 0;
  /// Emit a baseline record at phase entry.
  bool record_entry = false;
  /// KL anchor; defaults to the phase-entry policy when empty.
  const TabularPolicy* reference = nullptr;
};

/// Runs `steps` sampling rounds of the phase's objective. Rewards are requested
/// from `reward` only in the rewarded phase.
PhaseResult run_phase(const TabularPolicy& policy, const Maze& maze, const TrainConfig& config, Phase phase, int steps,
                      const PhaseContext& context = {}, const RewardFn& reward = accuracy_reward);

/// Uniform initial policy over the maze alphabet.
TabularPolicy initial_policy(const TrainConfig& config);

/// Runs one regime from the initial policy with `config.seed`.
PhaseResult run_regime(const Maze& maze, const TrainConfig& config, const RewardFn& reward = accuracy_reward);

struct RegimeSummary {
  Regime regime;
  std::vector<double> final_goal_rates;  // one per seed, seed order
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double best = 0.0;
  double delta_vs_base = 0.0;  // median - base median
};

struct ComparisonReport {
  std::vector<std::uint64_t> seeds;
  std::vector<double> base_goal_rates;
  double base_median = 0.0;
  double base_best = 0.0;
  std::array<RegimeSummary, 4> regimes;
  /// Median of unrewarded minus median of base.
  double unrewarded_vs_base = 0.0;
  /// Median of two_stage minus median of rewarded_throughout.
  double two_stage_vs_throughout = 0.0;
  /// Paired per-seed differences two_stage - rewarded_throughout: median and a
  /// 95% percentile-bootstrap interval.
  double paired_difference_median = 0.0;
  double paired_difference_ci_low = 0.0;
  double paired_difference_ci_high = 0.0;
  /// Total sampled trajectories per regime and seed.
  std::array<long, 4> trajectories_per_seed{};
  std::array<long, 4> gradient_steps_per_seed{};

  const RegimeSummary& summary(Regime r) const { return regimes[static_cast<std::size_t>(r)]; }
};

/// Runs all four regimes over `config.num_seeds` seeds from the same initial policy.
/// unrewarded and rewarded use steps_phase1; two_stage runs phase1 unrewarded then
/// phase2 rewarded; rewarded_throughout runs phase1 + phase2 rewarded steps.
ComparisonReport run_experiment(const MazeSpec& maze_spec, const TrainConfig& config);

/// Writes `step,phase,goal_rate,mean_len,surrogate,clip_frac,kl_ref,mlr_rate` rows.
void write_metrics_csv(std::ostream& out, const RunMetrics& metrics);

double median_of(std::vector<double> values);
double quantile_of(std::vector<double> values, double q);

}  // namespace latent

#endif  // LATENT_TRAINER_HPP_

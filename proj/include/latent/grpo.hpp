#ifndef LATENT_GRPO_HPP_
#define LATENT_GRPO_HPP_

#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <vector>

#include "latent/core.hpp"

namespace latent {

using StateId = std::int64_t;

/// Per-state logits over a fixed action alphabet; action_probs is softmax(logits / T).
/// States never written resolve to a zero-logit (uniform) row.
class TabularPolicy {
 public:
  explicit TabularPolicy(int num_actions, double temperature = 1.0);

  int num_actions() const noexcept { return num_actions_; }
  double temperature() const noexcept { return temperature_; }

  const Vector& logits(StateId state) const;
  void set_logits(StateId state, Vector logits);
  Vector action_prob_vector(StateId state) const;
  Distribution action_probs(StateId state) const;
  double prob(StateId state, int action) const;

  const std::map<StateId, Vector>& table() const noexcept { return logits_; }

  friend bool operator==(const TabularPolicy&, const TabularPolicy&) = default;

 private:
  int num_actions_;
  double temperature_;
  Vector zero_row_;
  std::map<StateId, Vector> logits_;
};

/// Sparse gradient over policy logits, keyed like TabularPolicy::table().
using PolicyGradient = std::map<StateId, Vector>;

/// One sampled response o_i: the state each token was emitted from, the token,
/// and the behavior (old) and reference probabilities captured at sampling time.
struct GroupTrajectory {
  std::vector<StateId> states;
  std::vector<int> actions;
  std::vector<double> old_probs;
  std::vector<double> ref_probs;
  double reward = 0.0;

  std::size_t size() const noexcept { return actions.size(); }
};

struct RolloutGroup {
  StateId prompt_id = 0;
  std::vector<GroupTrajectory> trajectories;

  /// Throws on G < 2, empty or oversized responses, probabilities outside (0, 1],
  /// ragged token records, or tokens outside the alphabet.
  void validate(int num_actions, std::size_t max_response_length = std::numeric_limits<std::size_t>::max()) const;
  std::vector<double> rewards() const;
};

enum class ObjectiveMode { kRewarded, kUnrewarded };

/// kPerToken applies psi(pi_ref / pi_theta) to every sampled token as written in
/// the GRPO objective. kRatioWeighted multiplies it by pi_theta / pi_old, which
/// makes the penalty an unbiased estimate of KL(pi_theta || pi_ref) when the
/// tokens were drawn from a stale policy.
enum class KlEstimator { kPerToken, kRatioWeighted };

struct SurrogateOptions {
  double eps = 0.2;
  double beta = 0.01;
  KlEstimator kl = KlEstimator::kPerToken;
};

struct SurrogateEval {
  double value = 0.0;
  std::vector<double> per_token_ratios;
  /// Length-normalized mean of the KL estimator terms (without beta).
  double kl_penalty = 0.0;
  double clip_fraction = 0.0;

  friend bool operator==(const SurrogateEval&, const SurrogateEval&) = default;
};

/// (r - mean) / population std; all zeros when every reward is equal. Throws for G < 2.
Vector group_advantages(const Eigen::Ref<const Vector>& rewards);

SurrogateEval rewarded_surrogate(const TabularPolicy& policy, const RolloutGroup& group, double eps, double beta);
SurrogateEval unrewarded_surrogate(const TabularPolicy& policy, const RolloutGroup& group, double eps, double beta);

SurrogateEval evaluate_surrogate(const TabularPolicy& policy, const RolloutGroup& group, ObjectiveMode mode,
                                 const SurrogateOptions& options);

/// Analytic gradient of the surrogate w.r.t. the logits. At a clip kink the
/// unclipped branch is used.
PolicyGradient surrogate_gradient(const TabularPolicy& policy, const RolloutGroup& group, ObjectiveMode mode,
                                  const SurrogateOptions& options);

/// Evaluation and gradient in a single pass.
SurrogateEval evaluate_with_gradient(const TabularPolicy& policy, const RolloutGroup& group, ObjectiveMode mode,
                                     const SurrogateOptions& options, PolicyGradient* gradient);

/// logits + learning_rate * gradient. Throws on non-finite or mis-shaped gradients.
TabularPolicy policy_step(const TabularPolicy& policy, const PolicyGradient& gradient, double learning_rate);

/// Accumulates `scale * other` into `into`.
void accumulate(PolicyGradient& into, const PolicyGradient& other, double scale = 1.0);

}  // namespace latent

#endif  // LATENT_GRPO_HPP_

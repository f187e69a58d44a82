#include "latent/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace latent {

TabularPolicy::TabularPolicy(int num_actions, double temperature)
    : num_actions_(num_actions), temperature_(temperature), zero_row_(Vector::Zero(num_actions)) {
  if (num_actions < 1) throw Error(Errc::kInvalidArgument, "policy needs at least one action");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw Error(Errc::kInvalidArgument, "policy temperature must be positive");
  }
}

const Vector& TabularPolicy::logits(StateId state) const {
  const auto it = logits_.find(state);
  return it == logits_.end() ? zero_row_ : it->second;
}

void TabularPolicy::set_logits(StateId state, Vector logits) {
  if (logits.size() != num_actions_) throw Error(Errc::kLengthMismatch, "logit row has the wrong length");
  if (!logits.allFinite()) throw Error(Errc::kNonFiniteValue, "logit row has non-finite entries");
  logits_[state] = std::move(logits);
}

Vector TabularPolicy::action_prob_vector(StateId state) const { return softmax(logits(state), temperature_); }

Distribution TabularPolicy::action_probs(StateId state) const { return make_distribution(action_prob_vector(state)); }

double TabularPolicy::prob(StateId state, int action) const {
  if (action < 0 || action >= num_actions_) throw Error(Errc::kInvalidArgument, "action outside the alphabet");
  return action_prob_vector(state)[action];
}

void RolloutGroup::validate(int num_actions, std::size_t max_response_length) const {
  if (trajectories.size() < 2) throw Error(Errc::kInvalidArgument, "rollout group needs G >= 2");
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const auto& o = trajectories[i];
    const std::size_t n = o.actions.size();
    if (n == 0) throw Error(Errc::kInvalidArgument, "rollout group contains an empty response");
    if (n > max_response_length) throw Error(Errc::kInvalidArgument, "response exceeds the maximum length");
    if (o.states.size() != n || o.old_probs.size() != n || o.ref_probs.size() != n) {
      throw Error(Errc::kLengthMismatch, "response token records have different lengths");
    }
    for (std::size_t t = 0; t < n; ++t) {
      if (o.actions[t] < 0 || o.actions[t] >= num_actions) {
        throw Error(Errc::kInvalidArgument, "token outside the action alphabet");
      }
      const double old_p = o.old_probs[t];
      const double ref_p = o.ref_probs[t];
      if (!(old_p > 0.0 && old_p <= 1.0) || !(ref_p > 0.0 && ref_p <= 1.0)) {
        std::ostringstream os;
        os << "stored probability outside (0, 1] at response " << i << ", token " << t;
        throw Error(Errc::kInvalidArgument, os.str());
      }
    }
  }
}

std::vector<double> RolloutGroup::rewards() const {
  std::vector<double> out;
  out.reserve(trajectories.size());
  for (const auto& o : trajectories) out.push_back(o.reward);
  return out;
}

Vector group_advantages(const Eigen::Ref<const Vector>& rewards) {
  if (rewards.size() < 2) throw Error(Errc::kInvalidArgument, "group_advantages: need at least two rewards");
  if (rewards.maxCoeff() == rewards.minCoeff()) return Vector::Zero(rewards.size());
  const double mean = rewards.mean();
  const Vector centered = rewards.array() - mean;
  const double stddev = std::sqrt(centered.squaredNorm() / static_cast<double>(rewards.size()));
  return centered / stddev;
}

SurrogateEval evaluate_with_gradient(const TabularPolicy& policy, const RolloutGroup& group, ObjectiveMode mode,
                                     const SurrogateOptions& options, PolicyGradient* gradient) {
  group.validate(policy.num_actions());
  const double eps = options.eps;
  const double beta = options.beta;
  const double lo = 1.0 - eps;
  const double hi = 1.0 + eps;
  const double inv_temperature = 1.0 / policy.temperature();

  Vector advantages;
  if (mode == ObjectiveMode::kRewarded) {
    const std::vector<double> rewards = group.rewards();
    advantages = group_advantages(Eigen::Map<const Vector>(rewards.data(), static_cast<Index>(rewards.size())));
  }

  std::map<StateId, Vector> probs_cache;
  auto probs_at = [&](StateId s) -> const Vector& {
    auto it = probs_cache.find(s);
    if (it == probs_cache.end()) it = probs_cache.emplace(s, policy.action_prob_vector(s)).first;
    return it->second;
  };

  SurrogateEval eval;
  std::size_t clipped = 0;
  std::size_t tokens = 0;
  const double group_weight = 1.0 / static_cast<double>(group.trajectories.size());
  for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
    const GroupTrajectory& o = group.trajectories[i];
    // Unrewarded mode never touches o.reward.
    const double advantage = mode == ObjectiveMode::kRewarded ? advantages[static_cast<Index>(i)] : 1.0;
    const double weight = group_weight / static_cast<double>(o.size());
    for (std::size_t t = 0; t < o.size(); ++t) {
      const Vector& probs = probs_at(o.states[t]);
      const int action = o.actions[t];
      const double pi = probs[action];
      const double ratio = pi / o.old_probs[t];
      const double clipped_ratio = std::clamp(ratio, lo, hi);
      eval.per_token_ratios.push_back(ratio);
      ++tokens;
      if (ratio < lo || ratio > hi) ++clipped;

      const double policy_term = std::min(ratio * advantage, clipped_ratio * advantage);
      const double ref_ratio = o.ref_probs[t] / pi;
      const double psi = k3_term(ref_ratio);
      const double kl_term = options.kl == KlEstimator::kRatioWeighted ? ratio * psi : psi;
      eval.value += weight * (policy_term - beta * kl_term);
      eval.kl_penalty += weight * kl_term;

      if (gradient == nullptr) continue;
      // d(term)/d(log pi) for the sampled token.
      double policy_coef = 0.0;
      if (advantage > 0.0) {
        policy_coef = ratio <= hi ? advantage * ratio : 0.0;
      } else if (advantage < 0.0) {
        policy_coef = ratio >= lo ? advantage * ratio : 0.0;
      }
      const double dpsi = 1.0 - ref_ratio;
      const double kl_coef = options.kl == KlEstimator::kRatioWeighted ? ratio * (psi + dpsi) : dpsi;
      const double coef = weight * (policy_coef - beta * kl_coef) * inv_temperature;

      auto [it, inserted] = gradient->try_emplace(o.states[t], Vector::Zero(policy.num_actions()));
      Vector& row = it->second;
      row.noalias() -= coef * probs;
      row[action] += coef;
    }
  }
  eval.clip_fraction = tokens == 0 ? 0.0 : static_cast<double>(clipped) / static_cast<double>(tokens);
  return eval;
}

SurrogateEval evaluate_surrogate(const TabularPolicy& policy, const RolloutGroup& group, ObjectiveMode mode,
                                 const SurrogateOptions& options) {
  return evaluate_with_gradient(policy, group, mode, options, nullptr);
}

SurrogateEval rewarded_surrogate(const TabularPolicy& policy, const RolloutGroup& group, double eps, double beta) {
  return evaluate_surrogate(policy, group, ObjectiveMode::kRewarded, {eps, beta, KlEstimator::kPerToken});
}

SurrogateEval unrewarded_surrogate(const TabularPolicy& policy, const RolloutGroup& group, double eps, double beta) {
  return evaluate_surrogate(policy, group, ObjectiveMode::kUnrewarded, {eps, beta, KlEstimator::kPerToken});
}

PolicyGradient surrogate_gradient(const TabularPolicy& policy, const RolloutGroup& group, ObjectiveMode mode,
                                  const SurrogateOptions& options) {
  PolicyGradient gradient;
  evaluate_with_gradient(policy, group, mode, options, &gradient);
  return gradient;
}

TabularPolicy policy_step(const TabularPolicy& policy, const PolicyGradient& gradient, double learning_rate) {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw Error(Errc::kInvalidArgument, "learning rate must be nonnegative and finite");
  }
  for (const auto& [state, row] : gradient) {
    if (row.size() != policy.num_actions()) throw Error(Errc::kLengthMismatch, "gradient row has the wrong length");
    if (!row.allFinite()) throw Error(Errc::kNonFiniteValue, "gradient has non-finite entries");
  }
  TabularPolicy next = policy;
  if (learning_rate == 0.0) return next;
  for (const auto& [state, row] : gradient) {
    if (row.isZero(0.0)) continue;
    next.set_logits(state, policy.logits(state) + learning_rate * row);
  }
  return next;
}

void accumulate(PolicyGradient& into, const PolicyGradient& other, double scale) {
  for (const auto& [state, row] : other) {
    auto [it, inserted] = into.try_emplace(state, Vector::Zero(row.size()));
    it->second += scale * row;
  }
}

}  // namespace latent

#include "latent/waterfill.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace latent {

StateInstance StateInstance::make(Distribution pi_ref, Distribution pi_prop, UtilityVector u_star, double eps,
                                  double beta) {
  if (pi_ref.size() < 2) throw Error(Errc::kInvalidArgument, "state instance needs at least two tokens");
  if (pi_prop.size() != pi_ref.size() || u_star.size() != pi_ref.size()) {
    throw Error(Errc::kLengthMismatch, "pi_ref, pi_prop and u_star must share one length");
  }
  if (!(eps > 0.0) || !std::isfinite(eps)) throw Error(Errc::kInvalidArgument, "eps must be positive");
  if (!(beta > 0.0) || !std::isfinite(beta)) throw Error(Errc::kInvalidArgument, "beta must be positive");
  require_strictly_positive(pi_ref);
  return StateInstance{std::move(pi_ref), std::move(pi_prop), std::move(u_star), eps, beta};
}

Vector StateInstance::likelihood_ratio() const {
  return pi_prop.probs().cwiseQuotient(pi_ref.probs());
}

Vector StateInstance::caps() const { return (1.0 + eps) * pi_prop.probs(); }

double phi(double tau, const StateInstance& inst) {
  if (!(tau >= 0.0)) throw Error(Errc::kInvalidArgument, "phi: tau must be nonnegative");
  return inst.caps().cwiseMin(tau * inst.pi_ref.probs()).sum();
}

double solve_tau(const StateInstance& inst, double tol) {
  if (!(tol > 0.0)) throw Error(Errc::kInvalidArgument, "solve_tau: tolerance must be positive");
  double lo = 0.0;
  double hi = (1.0 + inst.eps) * inst.likelihood_ratio().maxCoeff();
  if (phi(hi, inst) < 1.0 - tol) {
    throw Error(Errc::kInvariantViolation, "solve_tau: upper bracket does not reach unit mass");
  }
  double best = hi;
  double best_gap = std::abs(phi(hi, inst) - 1.0);
  for (int it = 0; it < kTauIterationCap; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double gap = phi(mid, inst) - 1.0;
    if (std::abs(gap) < best_gap) {
      best = mid;
      best_gap = std::abs(gap);
    }
    if (best_gap <= tol) return best;
    if (mid <= lo || mid >= hi) return best;  // interval exhausted at double resolution
    (gap < 0.0 ? lo : hi) = mid;
  }
  throw Error(Errc::kInvariantViolation, "solve_tau: iteration cap reached");
}

double solve_tau_sorted(const StateInstance& inst) {
  const Vector h = inst.likelihood_ratio();
  const Index n = inst.size();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) { return h[a] < h[b]; });

  const double scale = 1.0 + inst.eps;
  double capped_mass = 0.0;
  double free_ref_mass = 1.0;
  for (Index k = 0; k < n; ++k) {
    // First k tokens in h-order are capped.
    if (k > 0) {
      const Index j = order[static_cast<std::size_t>(k - 1)];
      capped_mass += scale * inst.pi_prop[j];
      free_ref_mass -= inst.pi_ref[j];
    }
    if (free_ref_mass <= 0.0) break;
    const double tau = (1.0 - capped_mass) / free_ref_mass;
    const bool lower_ok = k == 0 || scale * h[order[static_cast<std::size_t>(k - 1)]] <= tau;
    const bool upper_ok = tau < scale * h[order[static_cast<std::size_t>(k)]];
    if (lower_ok && upper_ok) return tau;
  }
  throw Error(Errc::kInvariantViolation, "solve_tau_sorted: no consistent capped prefix");
}

std::vector<bool> capped_mask_for(const StateInstance& inst, double tau) {
  const Vector caps = inst.caps();
  std::vector<bool> mask(static_cast<std::size_t>(inst.size()));
  for (Index i = 0; i < inst.size(); ++i) mask[static_cast<std::size_t>(i)] = caps[i] <= tau * inst.pi_ref[i];
  return mask;
}

WaterfillResult waterfill_update(const StateInstance& inst, double tol) {
  double tau = solve_tau(inst, tol);
  const std::vector<bool> mask = capped_mask_for(inst, tau);
  const Vector caps = inst.caps();
  // With the capped set known, tau has a closed form; capped entries then sit exactly on the cap.
  double capped_mass = 0.0;
  double free_ref = 0.0;
  for (Index i = 0; i < inst.size(); ++i) {
    if (mask[static_cast<std::size_t>(i)]) {
      capped_mass += caps[i];
    } else {
      free_ref += inst.pi_ref[i];
    }
  }
  if (free_ref > 0.0 && capped_mass < 1.0) tau = (1.0 - capped_mass) / free_ref;
  Vector raw(inst.size());
  for (Index i = 0; i < inst.size(); ++i) raw[i] = mask[static_cast<std::size_t>(i)] ? caps[i] : tau * inst.pi_ref[i];
  WaterfillResult result{make_distribution(raw), tau, mask, 0.0, raw.sum() - 1.0};
  result.mass_residual = mass_balance_residual(result, inst);
  return result;
}

double mass_balance_residual(const WaterfillResult& result, const StateInstance& inst) {
  if (static_cast<Index>(result.capped_mask.size()) != inst.size()) {
    throw Error(Errc::kLengthMismatch, "mass_balance_residual: mask does not match the instance");
  }
  double residual = 0.0;
  for (Index i = 0; i < inst.size(); ++i) {
    if (result.capped_mask[static_cast<std::size_t>(i)]) {
      residual += (1.0 + inst.eps) * inst.pi_prop[i] - inst.pi_ref[i];
    } else {
      residual += (result.tau - 1.0) * inst.pi_ref[i];
    }
  }
  return residual;
}

double expected_utility(const Distribution& pi, const UtilityVector& u) {
  if (pi.size() != u.size()) throw Error(Errc::kLengthMismatch, "expected_utility: length mismatch");
  return pi.probs().dot(u.utils());
}

DeltaJDecomposition delta_j_decomposition(const WaterfillResult& result, const StateInstance& inst) {
  if (static_cast<Index>(result.capped_mask.size()) != inst.size()) {
    throw Error(Errc::kLengthMismatch, "delta_j_decomposition: mask does not match the instance");
  }
  double released = 0.0;  // sum_S (pi_ref - (1+eps) pi_prop)
  double released_u = 0.0;
  double transfer = 0.0;  // sum_T (tau - 1) pi_ref
  double transfer_u = 0.0;
  bool any_capped = false;
  bool any_free = false;
  for (Index i = 0; i < inst.size(); ++i) {
    const double u = inst.u_star[i];
    if (result.capped_mask[static_cast<std::size_t>(i)]) {
      any_capped = true;
      const double w = inst.pi_ref[i] - (1.0 + inst.eps) * inst.pi_prop[i];
      released += w;
      released_u += w * u;
    } else {
      any_free = true;
      const double w = (result.tau - 1.0) * inst.pi_ref[i];
      transfer += w;
      transfer_u += w * u;
    }
  }
  DeltaJDecomposition out;
  if (!any_capped || !any_free || released == 0.0 || transfer == 0.0) return out;
  out.transfer = transfer;
  out.u_plus = released_u / released;
  out.u_minus = transfer_u / transfer;
  out.delta_j = -transfer * (*out.u_plus - *out.u_minus);
  return out;
}

double per_state_surrogate(const Distribution& pi, const StateInstance& inst) {
  if (pi.size() != inst.size()) throw Error(Errc::kLengthMismatch, "per_state_surrogate: length mismatch");
  return pi.probs().cwiseMin(inst.caps()).sum() - inst.beta * exact_kl(pi, inst.pi_ref);
}

}  // namespace latent

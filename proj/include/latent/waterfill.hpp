#ifndef LATENT_WATERFILL_HPP_
#define LATENT_WATERFILL_HPP_

#include <optional>
#include <vector>

#include "latent/core.hpp"

namespace latent {

/// One token state: reference and proposal distributions, latent utility,
/// clip width and KL strength. The proposal doubles as the old policy.
struct StateInstance {
  Distribution pi_ref;
  Distribution pi_prop;
  UtilityVector u_star;
  double eps;
  double beta;

  /// Validates shapes, the reference floor and eps, beta > 0.
  static StateInstance make(Distribution pi_ref, Distribution pi_prop, UtilityVector u_star, double eps,
                            double beta);

  Index size() const noexcept { return pi_ref.size(); }
  /// Likelihood ratio h = pi_prop / pi_ref.
  Vector likelihood_ratio() const;
  /// Cap vector (1 + eps) * pi_prop.
  Vector caps() const;
};

struct WaterfillResult {
  Distribution pi_star;
  double tau;
  /// true = token in the capped set S, i.e. (1 + eps) pi_prop <= tau pi_ref.
  std::vector<bool> capped_mask;
  double mass_residual;
  double phi_residual;
};

inline constexpr double kDefaultTauTolerance = 1e-12;
inline constexpr int kTauIterationCap = 200;

/// Phi(tau) = sum_i min((1 + eps) pi_prop_i, tau pi_ref_i).
double phi(double tau, const StateInstance& inst);

/// Bisection for Phi(tau) = 1 on [0, (1 + eps) max h].
double solve_tau(const StateInstance& inst, double tol = kDefaultTauTolerance);

/// Exact solve by sorting tokens on h and scanning the capped prefix.
double solve_tau_sorted(const StateInstance& inst);

WaterfillResult waterfill_update(const StateInstance& inst, double tol = kDefaultTauTolerance);

/// Capped mask for a given tau; ties go to the capped set.
std::vector<bool> capped_mask_for(const StateInstance& inst, double tau);

/// sum_S ((1+eps) pi_prop - pi_ref) + sum_T (tau - 1) pi_ref.
double mass_balance_residual(const WaterfillResult& result, const StateInstance& inst);

double expected_utility(const Distribution& pi, const UtilityVector& u);

struct DeltaJDecomposition {
  double transfer = 0.0;  // M
  std::optional<double> u_plus;
  std::optional<double> u_minus;
  double delta_j = 0.0;

  bool degenerate() const noexcept { return !u_plus.has_value(); }
};

/// Splits J(pi*) - J(pi_ref) into -M (u_plus - u_minus). An empty S or T (or zero
/// transfer) yields M = 0, delta_j = 0 and absent means.
DeltaJDecomposition delta_j_decomposition(const WaterfillResult& result, const StateInstance& inst);

/// l(pi) = sum_i min(pi_i, (1 + eps) pi_prop_i) - beta KL(pi || pi_ref).
double per_state_surrogate(const Distribution& pi, const StateInstance& inst);

}  // namespace latent

#endif  // LATENT_WATERFILL_HPP_

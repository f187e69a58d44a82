#ifndef LATENT_ORACLE_HPP_
#define LATENT_ORACLE_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "latent/grpo.hpp"
#include "latent/waterfill.hpp"

namespace latent {

enum class CheckKind {
  kSurrogateOptimality,
  kImprovementVsRef,
  kImprovementVsProp,
  kAssociationInequality,
  kMassBalance,
  kFirstOrderCovariance,
};

const char* to_string(CheckKind kind);

struct CheckResult {
  CheckKind kind;
  bool passed;
  double margin;
  /// Discretization resolution N for density checks, 0 for discrete instances.
  int resolution = 0;
  /// Informational checks are reported but do not decide the instance verdict.
  bool required = true;
};

struct RefinementStep {
  int resolution;
  double tau;
  double delta_j;
};

struct VerificationReport {
  std::uint64_t instance_id = 0;
  /// "theorem1", "theorem2" or "anti_mlr".
  std::string population;
  std::vector<CheckResult> checks;
  /// Smallest margin over required checks.
  double worst_margin = 0.0;
  /// Filled by the discretized density verifier only.
  std::vector<RefinementStep> refinement;
  bool tau_differences_decreasing = true;
  bool refinement_within_bound = true;

  bool passed() const;
  void add(CheckResult check);
};

/// Tolerances applied to each check's margin.
inline constexpr double kVerificationTolerance = 1e-12;
inline constexpr double kSurrogateTolerance = 1e-8;
inline constexpr double kMassBalanceTolerance = 1e-10;

struct VerificationConfig {
  int vocab_min = 2;
  int vocab_max = 64;
  std::vector<double> eps_grid{0.1, 0.2, 0.5};
  std::vector<double> beta_grid{0.01};
  /// Simplex grid step for the brute-force maximizer (V <= 3).
  double grid_resolution = 1e-3;
  /// Above this vocabulary size the surrogate check uses projected ascent.
  int brute_force_max_vocab = 3;
  /// Skip the surrogate_optimality check entirely above this size (cost control).
  int surrogate_check_max_vocab = 64;
};

/// Random instance whose h = pi_prop / pi_ref is nondecreasing in u_star.
StateInstance sample_mlr_instance(std::uint64_t seed, int vocab_size, double eps, double beta);

/// Same population as sample_mlr_instance with the utility order reversed.
StateInstance sample_anti_mlr_instance(std::uint64_t seed, int vocab_size, double eps, double beta);

/// pi_prop = (0.7, 0.3), pi_ref = (0.5, 0.5), u = (0, 1): the violating control.
StateInstance anti_mlr_control(double eps = 0.2, double beta = 0.01);

/// Maximizes per_state_surrogate directly: exhaustive simplex grid for V <= 3,
/// projected subgradient ascent otherwise. `resolution` above 0.1 is rejected.
Distribution brute_force_maximizer(const StateInstance& inst, double resolution = 1e-3);

/// Projected subgradient ascent on the simplex from pi_ref.
Distribution projected_ascent_maximizer(const StateInstance& inst, int max_iterations = 20000);

/// E_ref[w u] - E_ref[w] E_ref[u] with w = pi* / pi_ref.
double association_check(const StateInstance& inst, const WaterfillResult& result);

/// Cov under pi_ref of min(tau, (1 + eps) h) and u_star.
double first_order_covariance(const StateInstance& inst, const WaterfillResult& result);

/// Runs every registered check on one instance.
VerificationReport verify_instance(std::uint64_t instance_id, const StateInstance& inst,
                                   const VerificationConfig& config, std::string population = "theorem1");

/// Draws V, eps and beta from the seed, builds an MLR instance and verifies it.
VerificationReport verify_theorem1(std::uint64_t seed, const VerificationConfig& config);

/// Densities on [0, 1] sampled at N midpoints.
struct DensityInstance {
  Vector grid;
  double cell_width;
  Vector f_ref;
  Vector f_prop;
  Vector u_star;
  double eps;
  double beta;

  /// Normalizes both densities under the midpoint rule and checks the floor.
  static DensityInstance make(Vector f_ref, Vector f_prop, Vector u_star, double eps, double beta);

  int resolution() const noexcept { return static_cast<int>(grid.size()); }
  StateInstance to_state_instance() const;
};

/// Smooth comonotone family on [0, 1]: f_ref ~ exp(c1 x + c2 x^2), f_prop ~ f_ref exp(tilt x),
/// u*(x) = x^p. Unless `identity` is set, eps is chosen so that the continuum
/// capped set is exactly [0, boundary).
struct SmoothDensityFamily {
  double ref_c1;
  double ref_c2;
  double tilt;
  double utility_power;
  /// Edge of the capped set; a multiple of 1/64 so every dyadic grid from 64 up
  /// has a cell edge there.
  double boundary = 0.5;
  double eps;
  double beta;
  bool identity = false;  // f_prop = f_ref

  static SmoothDensityFamily sample(std::uint64_t seed);
  /// eps that puts the capped-set edge at `boundary` for the continuum problem.
  static double aligned_eps(double ref_c1, double ref_c2, double tilt, double boundary);
  DensityInstance discretize(int resolution) const;
};

/// Bound on |tau(2N) - tau(N)| accepted by the refinement check.
double refinement_bound(int resolution);

VerificationReport verify_theorem2_discretized(std::uint64_t seed, const std::vector<int>& resolutions);
VerificationReport verify_density_family(std::uint64_t instance_id, const SmoothDensityFamily& family,
                                         const std::vector<int>& resolutions);

struct DynamicsOptions {
  /// Responses per group; pi_prop must be a multiple of 1 / group_size.
  int group_size = 10;
  /// Step size decays linearly from learning_rate to zero over `steps`.
  double learning_rate = 0.5;
  int steps = 100000;
  /// The ratio-weighted estimator is the exact KL in expectation under pi_old,
  /// which is the penalty the closed form maximizes against.
  KlEstimator kl = KlEstimator::kRatioWeighted;
};

/// One-state unrewarded training with pi_old = pi_prop held fixed, starting from
/// pi_ref. Each step uses a stratified group in which token a appears exactly
/// group_size * pi_prop[a] times (single-token responses).
Distribution simulate_single_state(const StateInstance& inst, const DynamicsOptions& options);

}  // namespace latent

#endif  // LATENT_ORACLE_HPP_

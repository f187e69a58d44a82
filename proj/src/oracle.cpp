#include "latent/oracle.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace latent {
namespace {

constexpr std::uint64_t kMlrStream = 0x6d6c72;        // "mlr"
constexpr std::uint64_t kTheorem1Stream = 0x746831;   // "th1"
constexpr std::uint64_t kTheorem2Stream = 0x746832;   // "th2"

// Ranks 0..n-1 of `values`, ties broken by index.
std::vector<Index> ranks_of(const Vector& values) {
  const Index n = values.size();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return values[a] < values[b]; });
  std::vector<Index> rank(static_cast<std::size_t>(n));
  for (Index r = 0; r < n; ++r) rank[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] = r;
  return rank;
}

StateInstance sample_instance(std::uint64_t seed, int vocab_size, double eps, double beta, bool anti) {
  if (vocab_size < 2) throw Error(Errc::kInvalidArgument, "vocab_size must be at least 2");
  std::mt19937_64 rng(mix_seed(seed, kMlrStream, static_cast<std::uint64_t>(vocab_size)));
  std::gamma_distribution<double> gamma(1.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> steepness(0.5, 3.0);

  const Index n = vocab_size;
  Vector ref_weights(n);
  for (Index i = 0; i < n; ++i) ref_weights[i] = gamma(rng) + 1e-3;
  Vector u(n);
  for (Index i = 0; i < n; ++i) u[i] = normal(rng);
  const double k = steepness(rng);

  // Monotone coupling through ranks keeps h strictly ordered like u.
  const auto rank = ranks_of(u);
  Distribution pi_ref = make_distribution(ref_weights);
  Vector prop_weights(n);
  for (Index i = 0; i < n; ++i) {
    const double t = static_cast<double>(rank[static_cast<std::size_t>(i)]) / static_cast<double>(n - 1);
    prop_weights[i] = pi_ref[i] * std::exp(k * t);
  }
  if (anti) u = -u;
  return StateInstance::make(std::move(pi_ref), make_distribution(prop_weights), UtilityVector(u), eps, beta);
}

// Euclidean projection onto the probability simplex.
Vector project_to_simplex(const Vector& v) {
  Vector sorted = v;
  std::sort(sorted.data(), sorted.data() + sorted.size(), std::greater<>());
  double cumulative = 0.0;
  double theta = 0.0;
  for (Index j = 0; j < sorted.size(); ++j) {
    cumulative += sorted[j];
    const double candidate = (cumulative - 1.0) / static_cast<double>(j + 1);
    if (sorted[j] - candidate > 0.0) theta = candidate;
  }
  return (v.array() - theta).cwiseMax(0.0).matrix();
}

// l(pi) on raw probabilities; zero entries contribute nothing to the KL.
double surrogate_raw(const double* p, const double* caps, const double* ref, Index n, double beta) {
  double overlap = 0.0;
  double kl = 0.0;
  for (Index i = 0; i < n; ++i) {
    overlap += std::min(p[i], caps[i]);
    if (p[i] > 0.0) kl += p[i] * std::log(p[i] / ref[i]);
  }
  return overlap - beta * kl;
}

double mean_under(const Distribution& base, const Vector& values) { return base.probs().dot(values); }

void add_common_checks(VerificationReport& report, const StateInstance& inst, const WaterfillResult& result,
                       int resolution) {
  const double j_star = expected_utility(result.pi_star, inst.u_star);
  const double j_ref = expected_utility(inst.pi_ref, inst.u_star);
  const double j_prop = expected_utility(inst.pi_prop, inst.u_star);

  const double vs_ref = j_star - j_ref;
  report.add({CheckKind::kImprovementVsRef, vs_ref >= -kVerificationTolerance, vs_ref, resolution});
  const double vs_prop = j_star - j_prop;
  report.add({CheckKind::kImprovementVsProp, vs_prop >= -kVerificationTolerance, vs_prop, resolution, false});

  const double association = association_check(inst, result);
  report.add({CheckKind::kAssociationInequality, association >= -kVerificationTolerance, association, resolution});

  const double residual = std::abs(mass_balance_residual(result, inst));
  report.add({CheckKind::kMassBalance, residual <= kMassBalanceTolerance, -residual, resolution});

  const double covariance = first_order_covariance(inst, result);
  report.add({CheckKind::kFirstOrderCovariance, covariance >= -kVerificationTolerance, covariance, resolution});
}

}  // namespace

const char* to_string(CheckKind kind) {
  switch (kind) {
    case CheckKind::kSurrogateOptimality: return "surrogate_optimality";
    case CheckKind::kImprovementVsRef: return "improvement_vs_ref";
    case CheckKind::kImprovementVsProp: return "improvement_vs_prop";
    case CheckKind::kAssociationInequality: return "association_inequality";
    case CheckKind::kMassBalance: return "mass_balance";
    case CheckKind::kFirstOrderCovariance: return "first_order_covariance";
  }
  return "unknown";
}

bool VerificationReport::passed() const {
  const bool checks_ok =
      std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return !c.required || c.passed; });
  return checks_ok && refinement_within_bound;
}

void VerificationReport::add(CheckResult check) {
  if (check.required) {
    const bool first = std::none_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.required; });
    worst_margin = first ? check.margin : std::min(worst_margin, check.margin);
  }
  checks.push_back(check);
}

StateInstance sample_mlr_instance(std::uint64_t seed, int vocab_size, double eps, double beta) {
  return sample_instance(seed, vocab_size, eps, beta, false);
}

StateInstance sample_anti_mlr_instance(std::uint64_t seed, int vocab_size, double eps, double beta) {
  return sample_instance(seed, vocab_size, eps, beta, true);
}

StateInstance anti_mlr_control(double eps, double beta) {
  return StateInstance::make(make_distribution(Vector{{0.5, 0.5}}), make_distribution(Vector{{0.7, 0.3}}),
                             UtilityVector(Vector{{0.0, 1.0}}), eps, beta);
}

Distribution brute_force_maximizer(const StateInstance& inst, double resolution) {
  if (!(resolution > 0.0) || resolution > 0.1) {
    throw Error(Errc::kInvalidArgument, "brute_force_maximizer: resolution must lie in (0, 0.1]");
  }
  const Index n = inst.size();
  if (n > 3) return projected_ascent_maximizer(inst);

  const long steps = std::lround(1.0 / resolution);
  const Vector caps = inst.caps();
  const Vector& ref = inst.pi_ref.probs();
  std::array<double, 3> p{};
  std::array<double, 3> best{};
  double best_value = -std::numeric_limits<double>::infinity();
  const double inv = 1.0 / static_cast<double>(steps);
  auto consider = [&] {
    const double value = surrogate_raw(p.data(), caps.data(), ref.data(), n, inst.beta);
    if (value > best_value) {
      best_value = value;
      best = p;
    }
  };
  if (n == 2) {
    for (long i = 0; i <= steps; ++i) {
      p[0] = static_cast<double>(i) * inv;
      p[1] = static_cast<double>(steps - i) * inv;
      consider();
    }
  } else {
    for (long i = 0; i <= steps; ++i) {
      for (long j = 0; i + j <= steps; ++j) {
        p[0] = static_cast<double>(i) * inv;
        p[1] = static_cast<double>(j) * inv;
        p[2] = static_cast<double>(steps - i - j) * inv;
        consider();
      }
    }
  }
  return make_distribution(Eigen::Map<const Vector>(best.data(), n));
}

Distribution projected_ascent_maximizer(const StateInstance& inst, int max_iterations) {
  const Index n = inst.size();
  const Vector caps = inst.caps();
  const Vector& ref = inst.pi_ref.probs();
  Vector p = ref;
  Vector best = p;
  double best_value = surrogate_raw(p.data(), caps.data(), ref.data(), n, inst.beta);
  double previous = best_value;
  for (int it = 0; it < max_iterations; ++it) {
    Vector grad(n);
    for (Index i = 0; i < n; ++i) {
      const double safe = std::max(p[i], 1e-300);
      grad[i] = (p[i] < caps[i] ? 1.0 : 0.0) - inst.beta * (std::log(safe / ref[i]) + 1.0);
    }
    grad.array() -= grad.mean();
    const double step = 0.05 / std::sqrt(static_cast<double>(it) + 1.0) / std::max(1.0, grad.cwiseAbs().maxCoeff());
    p = project_to_simplex(p + step * grad);
    const double value = surrogate_raw(p.data(), caps.data(), ref.data(), n, inst.beta);
    if (value > best_value) {
      best_value = value;
      best = p;
    }
    if (it > 100 && std::abs(value - previous) < 1e-12) break;
    previous = value;
  }
  return make_distribution(best);
}

double association_check(const StateInstance& inst, const WaterfillResult& result) {
  const Vector w = result.pi_star.probs().cwiseQuotient(inst.pi_ref.probs());
  const Vector& u = inst.u_star.utils();
  return mean_under(inst.pi_ref, w.cwiseProduct(u)) - mean_under(inst.pi_ref, w) * mean_under(inst.pi_ref, u);
}

double first_order_covariance(const StateInstance& inst, const WaterfillResult& result) {
  const Vector tilt = ((1.0 + inst.eps) * inst.likelihood_ratio()).cwiseMin(result.tau);
  const Vector& u = inst.u_star.utils();
  const Vector tilt_c = tilt.array() - mean_under(inst.pi_ref, tilt);
  const Vector u_c = u.array() - mean_under(inst.pi_ref, u);
  return mean_under(inst.pi_ref, tilt_c.cwiseProduct(u_c));
}

VerificationReport verify_instance(std::uint64_t instance_id, const StateInstance& inst,
                                   const VerificationConfig& config, std::string population) {
  VerificationReport report;
  report.instance_id = instance_id;
  report.population = std::move(population);
  const WaterfillResult result = waterfill_update(inst);

  if (inst.size() <= config.surrogate_check_max_vocab) {
    const Distribution best = inst.size() <= config.brute_force_max_vocab
                                  ? brute_force_maximizer(inst, config.grid_resolution)
                                  : projected_ascent_maximizer(inst, 2000);
    const double margin = per_state_surrogate(result.pi_star, inst) - per_state_surrogate(best, inst);
    report.add({CheckKind::kSurrogateOptimality, margin >= -kSurrogateTolerance, margin});
  }
  add_common_checks(report, inst, result, 0);
  return report;
}

VerificationReport verify_theorem1(std::uint64_t seed, const VerificationConfig& config) {
  if (config.vocab_min < 2 || config.vocab_max < config.vocab_min) {
    throw Error(Errc::kInvalidArgument, "verify_theorem1: invalid vocabulary range");
  }
  if (config.eps_grid.empty() || config.beta_grid.empty()) {
    throw Error(Errc::kInvalidArgument, "verify_theorem1: eps and beta grids must be nonempty");
  }
  std::mt19937_64 rng(mix_seed(seed, kTheorem1Stream));
  std::uniform_int_distribution<int> vocab(config.vocab_min, config.vocab_max);
  std::uniform_int_distribution<std::size_t> eps_pick(0, config.eps_grid.size() - 1);
  std::uniform_int_distribution<std::size_t> beta_pick(0, config.beta_grid.size() - 1);
  const int v = vocab(rng);
  const double eps = config.eps_grid[eps_pick(rng)];
  const double beta = config.beta_grid[beta_pick(rng)];
  return verify_instance(seed, sample_mlr_instance(seed, v, eps, beta), config, "theorem1");
}

DensityInstance DensityInstance::make(Vector f_ref, Vector f_prop, Vector u_star, double eps, double beta) {
  const Index n = f_ref.size();
  if (n < 2 || f_prop.size() != n || u_star.size() != n) {
    throw Error(Errc::kLengthMismatch, "density instance: sample vectors must share one length >= 2");
  }
  if (!f_ref.allFinite() || !f_prop.allFinite() || !u_star.allFinite()) {
    throw Error(Errc::kNonFiniteEntry, "density instance: non-finite samples");
  }
  if (f_prop.minCoeff() < 0.0) throw Error(Errc::kNegativeEntry, "density instance: negative proposal density");
  DensityInstance d;
  d.cell_width = 1.0 / static_cast<double>(n);
  d.grid = Vector::LinSpaced(n, 0.5 * d.cell_width, 1.0 - 0.5 * d.cell_width);
  d.f_ref = f_ref / (f_ref.sum() * d.cell_width);
  d.f_prop = f_prop / (f_prop.sum() * d.cell_width);
  if (d.f_ref.minCoeff() < kProbabilityFloor) {
    throw Error(Errc::kBelowFloor, "density instance: reference density below the floor");
  }
  d.u_star = std::move(u_star);
  d.eps = eps;
  d.beta = beta;
  return d;
}

StateInstance DensityInstance::to_state_instance() const {
  return StateInstance::make(make_distribution(Vector(f_ref * cell_width)), make_distribution(Vector(f_prop * cell_width)),
                             UtilityVector(u_star), eps, beta);
}

SmoothDensityFamily SmoothDensityFamily::sample(std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, kTheorem2Stream));
  std::uniform_real_distribution<double> coef(-2.0, 2.0);
  std::uniform_real_distribution<double> tilt(0.5, 3.0);
  std::uniform_real_distribution<double> power(0.5, 2.0);
  std::uniform_int_distribution<int> edge(8, 56);
  SmoothDensityFamily f;
  f.ref_c1 = coef(rng);
  f.ref_c2 = coef(rng);
  f.tilt = tilt(rng);
  f.utility_power = power(rng);
  f.boundary = edge(rng) / 64.0;
  f.eps = aligned_eps(f.ref_c1, f.ref_c2, f.tilt, f.boundary);
  f.beta = 0.01;
  return f;
}

double SmoothDensityFamily::aligned_eps(double ref_c1, double ref_c2, double tilt, double boundary) {
  if (!(boundary > 0.0 && boundary < 1.0) || !(tilt > 0.0)) {
    throw Error(Errc::kInvalidArgument, "aligned_eps: need 0 < boundary < 1 and tilt > 0");
  }
  using Quad = boost::math::quadrature::gauss_kronrod<double, 31>;
  auto ref = [&](double x) { return std::exp(ref_c1 * x + ref_c2 * x * x); };
  auto prop = [&](double x) { return ref(x) * std::exp(tilt * x); };
  const double z_ref = Quad::integrate(ref, 0.0, 1.0, 15, 1e-14);
  const double z_prop = Quad::integrate(prop, 0.0, 1.0, 15, 1e-14);
  const double cdf_ref = Quad::integrate(ref, 0.0, boundary, 15, 1e-14) / z_ref;
  const double cdf_prop = Quad::integrate(prop, 0.0, boundary, 15, 1e-14) / z_prop;
  const double h_edge = std::exp(tilt * boundary) * z_ref / z_prop;
  // Phi(tau) = 1 with tau = (1 + eps) h(boundary) and S = [0, boundary).
  return 1.0 / (cdf_prop + h_edge * (1.0 - cdf_ref)) - 1.0;
}

DensityInstance SmoothDensityFamily::discretize(int resolution) const {
  const Index n = resolution;
  const double w = 1.0 / static_cast<double>(n);
  Vector f_ref(n), f_prop(n), u(n);
  for (Index i = 0; i < n; ++i) {
    const double x = (static_cast<double>(i) + 0.5) * w;
    f_ref[i] = std::exp(ref_c1 * x + ref_c2 * x * x);
    f_prop[i] = identity ? f_ref[i] : f_ref[i] * std::exp(tilt * x);
    u[i] = std::pow(x, utility_power);
  }
  return DensityInstance::make(std::move(f_ref), std::move(f_prop), std::move(u), eps, beta);
}

double refinement_bound(int resolution) {
  const double n = static_cast<double>(resolution);
  return 10.0 / (n * n);
}

VerificationReport verify_density_family(std::uint64_t instance_id, const SmoothDensityFamily& family,
                                         const std::vector<int>& resolutions) {
  if (resolutions.empty()) throw Error(Errc::kInvalidArgument, "at least one resolution is required");
  for (std::size_t k = 0; k < resolutions.size(); ++k) {
    if (resolutions[k] < 16) throw Error(Errc::kInvalidArgument, "resolutions must be at least 16");
    if (k > 0 && resolutions[k] <= resolutions[k - 1]) {
      throw Error(Errc::kInvalidArgument, "resolutions must be strictly increasing");
    }
  }
  VerificationReport report;
  report.instance_id = instance_id;
  report.population = "theorem2";
  for (const int n : resolutions) {
    const StateInstance inst = family.discretize(n).to_state_instance();
    const WaterfillResult result = waterfill_update(inst);
    add_common_checks(report, inst, result, n);
    const double delta_j = expected_utility(result.pi_star, inst.u_star) - expected_utility(inst.pi_ref, inst.u_star);
    report.refinement.push_back({n, result.tau, delta_j});
  }
  double previous_gap = std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k < report.refinement.size(); ++k) {
    const double gap = std::abs(report.refinement[k].tau - report.refinement[k - 1].tau);
    if (gap > refinement_bound(report.refinement[k - 1].resolution)) report.refinement_within_bound = false;
    if (!(gap < previous_gap)) report.tau_differences_decreasing = false;
    previous_gap = gap;
  }
  return report;
}

VerificationReport verify_theorem2_discretized(std::uint64_t seed, const std::vector<int>& resolutions) {
  return verify_density_family(seed, SmoothDensityFamily::sample(seed), resolutions);
}

Distribution simulate_single_state(const StateInstance& inst, const DynamicsOptions& options) {
  if (options.group_size < 2 || options.steps < 0 || !(options.learning_rate > 0.0)) {
    throw Error(Errc::kInvalidArgument, "simulate_single_state: invalid options");
  }
  const Index v = inst.size();
  constexpr StateId kState = 0;
  RolloutGroup group;
  for (Index a = 0; a < v; ++a) {
    const double count = inst.pi_prop[a] * options.group_size;
    if (std::abs(count - std::round(count)) > 1e-9) {
      throw Error(Errc::kInvalidArgument, "simulate_single_state: pi_prop is not on the 1/G grid");
    }
    for (long k = 0; k < std::lround(count); ++k) {
      group.trajectories.push_back({{kState}, {static_cast<int>(a)}, {inst.pi_prop[a]}, {inst.pi_ref[a]}, 0.0});
    }
  }
  TabularPolicy policy(static_cast<int>(v));
  policy.set_logits(kState, inst.pi_ref.probs().array().log().matrix());
  const SurrogateOptions surrogate{inst.eps, inst.beta, options.kl};
  for (int step = 0; step < options.steps; ++step) {
    policy = policy_step(policy, surrogate_gradient(policy, group, ObjectiveMode::kUnrewarded, surrogate),
                         options.learning_rate * (1.0 - static_cast<double>(step) / options.steps));
  }
  return policy.action_probs(kState);
}

}  // namespace latent

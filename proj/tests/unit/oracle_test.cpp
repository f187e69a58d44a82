#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "latent/oracle.hpp"
#include "test_support.hpp"

using namespace latent;
using latent::testing::instance;

namespace {

int discordant_pairs(const StateInstance& inst) {
  const Vector h = inst.likelihood_ratio();
  int bad = 0;
  for (Index i = 0; i < inst.size(); ++i) {
    for (Index j = i + 1; j < inst.size(); ++j) {
      if ((inst.u_star[i] - inst.u_star[j]) * (h[i] - h[j]) < 0.0) ++bad;
    }
  }
  return bad;
}

const CheckResult& find_check(const VerificationReport& r, CheckKind kind, int resolution = 0) {
  const auto it = std::find_if(r.checks.begin(), r.checks.end(),
                               [&](const CheckResult& c) { return c.kind == kind && c.resolution == resolution; });
  REQUIRE(it != r.checks.end());
  return *it;
}

}  // namespace

TEST_CASE("MLR sampler orders the likelihood ratio like the utility") {
  CHECK(discordant_pairs(sample_mlr_instance(42, 2, 0.2, 0.01)) == 0);
  const auto eight = sample_mlr_instance(42, 8, 0.2, 0.01);
  CHECK(eight.size() == 8);
  CHECK(discordant_pairs(eight) == 0);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    CHECK(discordant_pairs(sample_mlr_instance(seed, 2 + static_cast<int>(seed % 63), 0.5, 0.01)) == 0);
  }
  // The reversed population is fully discordant whenever utilities differ.
  const auto anti = sample_anti_mlr_instance(42, 8, 0.2, 0.01);
  CHECK(discordant_pairs(anti) == 28);
}

TEST_CASE("MLR sampler is deterministic") {
  const auto a = sample_mlr_instance(7, 16, 0.2, 0.01);
  const auto b = sample_mlr_instance(7, 16, 0.2, 0.01);
  CHECK(a.pi_ref.probs() == b.pi_ref.probs());
  CHECK(a.pi_prop.probs() == b.pi_prop.probs());
  CHECK(a.u_star.utils() == b.u_star.utils());
  CHECK(sample_mlr_instance(8, 16, 0.2, 0.01).pi_ref.probs() != a.pi_ref.probs());
}

TEST_CASE("brute-force maximizer") {
  const auto id = instance({0.5, 0.5}, {0.5, 0.5}, 0.2, {}, 0.05);
  CHECK(brute_force_maximizer(id, 1e-3).probs().isApprox(Vector{{0.5, 0.5}}, 1e-12));
  const auto two = instance({0.5, 0.5}, {0.7, 0.3}, 0.2, {}, 0.01);
  const Distribution best = brute_force_maximizer(two, 1e-3);
  CHECK(std::abs(best[0] - 0.64) <= 1e-3 + 1e-12);
  CHECK_THROWS_AS(brute_force_maximizer(two, 0.5), Error);
  CHECK_THROWS_AS(brute_force_maximizer(two, 0.0), Error);
}

TEST_CASE("closed form dominates the grid on small instances") {
  std::mt19937_64 rng(314);
  for (int trial = 0; trial < 30; ++trial) {
    const auto inst = latent::testing::random_instance(rng, 2 + trial % 2, 0.2, 0.01);
    const auto r = waterfill_update(inst);
    const double gap = per_state_surrogate(r.pi_star, inst) - per_state_surrogate(brute_force_maximizer(inst), inst);
    CHECK(gap >= -1e-8);
  }
}

TEST_CASE("projected ascent does not beat the closed form") {
  std::mt19937_64 rng(2718);
  for (int trial = 0; trial < 10; ++trial) {
    const auto inst = latent::testing::random_instance(rng, 4 + 3 * trial, 0.2, 0.01);
    const auto r = waterfill_update(inst);
    const double gap = per_state_surrogate(r.pi_star, inst) - per_state_surrogate(projected_ascent_maximizer(inst), inst);
    CHECK(gap >= -1e-8);
  }
}

TEST_CASE("association margin") {
  const auto id = instance({0.5, 0.5}, {0.5, 0.5}, 0.2, {1.0, 0.0});
  CHECK(association_check(id, waterfill_update(id)) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  const auto two = instance({0.5, 0.5}, {0.7, 0.3}, 0.2, {1.0, 0.0});
  CHECK(association_check(two, waterfill_update(two)) == doctest::Approx(0.14).epsilon(1e-9));
  const auto control = anti_mlr_control();
  CHECK(association_check(control, waterfill_update(control)) == doctest::Approx(-0.14).epsilon(1e-9));
}

TEST_CASE("first-order covariance") {
  const auto id = instance({0.5, 0.5}, {0.5, 0.5}, 0.2, {1.0, 0.0});
  CHECK(std::abs(first_order_covariance(id, waterfill_update(id))) <= 1e-12);
  const auto two = instance({0.5, 0.5}, {0.7, 0.3}, 0.2, {1.0, 0.0});
  CHECK(first_order_covariance(two, waterfill_update(two)) == doctest::Approx(0.14).epsilon(1e-9));
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const auto inst = sample_mlr_instance(seed, 2 + static_cast<int>(seed % 63), 0.2, 0.01);
    CHECK(first_order_covariance(inst, waterfill_update(inst)) >= -1e-12);
  }
}

TEST_CASE("verify_theorem1 on small vocabularies") {
  VerificationConfig config;
  config.vocab_min = 2;
  config.vocab_max = 3;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto report = verify_theorem1(seed, config);
    CHECK(report.passed());
    CHECK(report.population == "theorem1");
    CHECK(find_check(report, CheckKind::kSurrogateOptimality).passed);
    CHECK(find_check(report, CheckKind::kImprovementVsRef).passed);
    CHECK_FALSE(find_check(report, CheckKind::kImprovementVsProp).required);
  }
  config.vocab_max = 1;
  CHECK_THROWS_AS(verify_theorem1(0, config), Error);
}

TEST_CASE("anti-MLR control is flagged") {
  const auto report = verify_instance(0, anti_mlr_control(), VerificationConfig{}, "anti_mlr");
  CHECK_FALSE(report.passed());
  const auto& check = find_check(report, CheckKind::kImprovementVsRef);
  CHECK_FALSE(check.passed);
  CHECK(check.margin == doctest::Approx(-0.14).epsilon(1e-9));
}

TEST_CASE("improvement over the proposal is not guaranteed") {
  // Ordered instance where the update lands between reference and proposal.
  const auto inst = instance({0.5, 0.5}, {0.7, 0.3}, 0.2, {1.0, 0.0});
  const auto report = verify_instance(0, inst, VerificationConfig{});
  CHECK(report.passed());
  const auto& vs_prop = find_check(report, CheckKind::kImprovementVsProp);
  CHECK_FALSE(vs_prop.passed);
  CHECK(vs_prop.margin == doctest::Approx(-0.06).epsilon(1e-9));
}

TEST_CASE("density discretization") {
  SUBCASE("identity survives discretization") {
    SmoothDensityFamily family = SmoothDensityFamily::sample(3);
    family.identity = true;
    family.eps = 0.2;
    for (int n : {64, 128, 256, 512}) {
      const auto inst = family.discretize(n).to_state_instance();
      const auto r = waterfill_update(inst);
      CHECK(r.tau == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(std::abs(expected_utility(r.pi_star, inst.u_star) - expected_utility(inst.pi_ref, inst.u_star)) <= 1e-12);
    }
  }
  SUBCASE("aligned eps puts the capped edge on the boundary") {
    const SmoothDensityFamily family = SmoothDensityFamily::sample(11);
    CHECK(family.eps > 0.0);
    const auto inst = family.discretize(4096).to_state_instance();
    const auto r = waterfill_update(inst);
    const auto edge = std::find(r.capped_mask.begin(), r.capped_mask.end(), false) - r.capped_mask.begin();
    CHECK(std::abs(static_cast<double>(edge) / 4096.0 - family.boundary) <= 2.0 / 4096.0);
  }
  SUBCASE("fixed smooth instance improves at every resolution") {
    const auto report = verify_theorem2_discretized(5, {64, 128, 256, 512});
    CHECK(report.passed());
    CHECK(report.refinement.size() == 4);
    CHECK(report.tau_differences_decreasing);
    for (int n : {64, 128, 256, 512}) CHECK(find_check(report, CheckKind::kImprovementVsRef, n).margin >= -1e-12);
  }
  SUBCASE("resolution validation") {
    CHECK_THROWS_AS(verify_theorem2_discretized(0, {}), Error);
    CHECK_THROWS_AS(verify_theorem2_discretized(0, {128, 64}), Error);
    CHECK_THROWS_AS(verify_theorem2_discretized(0, {8, 64}), Error);
  }
  SUBCASE("density floor") {
    CHECK_THROWS_AS(DensityInstance::make(Vector{{1.0, 0.0}}, Vector{{1.0, 1.0}}, Vector{{0.0, 1.0}}, 0.2, 0.01),
                    Error);
  }
}

TEST_CASE("single-state dynamics approach the closed form") {
  const auto inst = instance({0.5, 0.5}, {0.7, 0.3}, 0.2, {}, 0.001);
  DynamicsOptions options;
  options.steps = 20000;
  const Distribution p = simulate_single_state(inst, options);
  CHECK(total_variation(p, waterfill_update(inst).pi_star) <= 0.01);
  options.group_size = 3;
  CHECK_THROWS_AS(simulate_single_state(inst, options), Error);
}

TEST_CASE("dynamics with two uncapped tokens need the ratio-weighted KL") {
  // Tokens 1 and 2 stay below their caps and have different pi_prop / pi_ref,
  // so only the exact-in-expectation KL keeps them proportional to pi_ref.
  const auto inst = instance({0.323, 0.487, 0.190}, {0.1, 0.6, 0.3}, 0.2, {}, 0.001);
  const auto target = waterfill_update(inst);
  CHECK(target.capped_mask == std::vector<bool>{true, false, false});
  DynamicsOptions options;
  CHECK(total_variation(simulate_single_state(inst, options), target.pi_star) <= 0.01);
  options.kl = KlEstimator::kPerToken;
  CHECK(total_variation(simulate_single_state(inst, options), target.pi_star) > 0.01);
}

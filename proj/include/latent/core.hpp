#ifndef LATENT_CORE_HPP_
#define LATENT_CORE_HPP_

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace latent {

using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Entries of a "strictly positive" distribution must be at least this large.
inline constexpr double kProbabilityFloor = 1e-9;

/// Allowed deviation of a distribution's total mass from one.
inline constexpr double kMassTolerance = 1e-12;

enum class Errc {
  kEmptyInput,
  kNegativeEntry,
  kNonFiniteEntry,
  kZeroMass,
  kLengthMismatch,
  kInfiniteDivergence,
  kBelowFloor,
  kInvalidArgument,
  kInvariantViolation,
  kNonFiniteValue,
  kParse,
  kIo,
};

const char* to_string(Errc code);

/// Single exception type for the library; `code()` distinguishes the failure.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Probability vector over a finite alphabet. Construct through make_distribution.
class Distribution {
 public:
  const Vector& probs() const noexcept { return probs_; }
  Index size() const noexcept { return probs_.size(); }
  double operator[](Index i) const { return probs_[i]; }

  bool is_strictly_positive(double floor = kProbabilityFloor) const;

 private:
  friend Distribution make_distribution(const Eigen::Ref<const Vector>& weights);
  explicit Distribution(Vector probs) : probs_(std::move(probs)) {}

  Vector probs_;
};

/// Normalizes nonnegative weights. Throws Error with kEmptyInput, kNegativeEntry,
/// kNonFiniteEntry or kZeroMass.
Distribution make_distribution(const Eigen::Ref<const Vector>& weights);
Distribution make_distribution(std::span<const double> weights);

/// Throws kBelowFloor if any entry is below `floor`.
void require_strictly_positive(const Distribution& p, double floor = kProbabilityFloor);

/// Finite real-valued utilities, one per token.
class UtilityVector {
 public:
  UtilityVector() = default;
  explicit UtilityVector(Vector utils);
  static UtilityVector zeros(Index size) { return UtilityVector(Vector::Zero(size)); }

  const Vector& utils() const noexcept { return utils_; }
  Index size() const noexcept { return utils_.size(); }
  double operator[](Index i) const { return utils_[i]; }

 private:
  Vector utils_;
};

/// KL(p || q) in nats with 0 log 0 = 0.
double exact_kl(const Distribution& p, const Distribution& q);

/// psi(r) = r - log r - 1, the single-sample KL estimator applied to r = q/p.
double k3_term(double ratio);

/// Total variation distance, 0.5 * sum |p - q|.
double total_variation(const Distribution& p, const Distribution& q);

/// Numerically stable softmax of `logits / temperature`.
Vector softmax(const Eigen::Ref<const Vector>& logits, double temperature = 1.0);

/// SplitMix64 finalizer; used to derive independent seeds for named sub-streams.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index = 0);

}  // namespace latent

#endif  // LATENT_CORE_HPP_

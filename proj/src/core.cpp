#include "latent/core.hpp"

#include <array>
#include <cmath>
#include <random>
#include <sstream>

namespace latent {

const char* to_string(Errc code) {
  switch (code) {
    case Errc::kEmptyInput: return "empty input";
    case Errc::kNegativeEntry: return "negative entry";
    case Errc::kNonFiniteEntry: return "non-finite entry";
    case Errc::kZeroMass: return "zero total mass";
    case Errc::kLengthMismatch: return "length mismatch";
    case Errc::kInfiniteDivergence: return "infinite divergence";
    case Errc::kBelowFloor: return "entry below probability floor";
    case Errc::kInvalidArgument: return "invalid argument";
    case Errc::kInvariantViolation: return "invariant violation";
    case Errc::kNonFiniteValue: return "non-finite value";
    case Errc::kParse: return "parse error";
    case Errc::kIo: return "i/o error";
  }
  return "unknown";
}

bool Distribution::is_strictly_positive(double floor) const {
  return size() > 0 && probs_.minCoeff() >= floor;
}

Distribution make_distribution(const Eigen::Ref<const Vector>& weights) {
  if (weights.size() == 0) throw Error(Errc::kEmptyInput, "make_distribution: no weights");
  for (Index i = 0; i < weights.size(); ++i) {
    if (!std::isfinite(weights[i])) {
      std::ostringstream os;
      os << "make_distribution: weight " << i << " is not finite";
      throw Error(Errc::kNonFiniteEntry, os.str());
    }
    if (weights[i] < 0.0) {
      std::ostringstream os;
      os << "make_distribution: weight " << i << " is negative (" << weights[i] << ")";
      throw Error(Errc::kNegativeEntry, os.str());
    }
  }
  const double total = weights.sum();
  if (!(total > 0.0)) throw Error(Errc::kZeroMass, "make_distribution: weights sum to zero");
  return Distribution(weights / total);
}

Distribution make_distribution(std::span<const double> weights) {
  return make_distribution(Eigen::Map<const Vector>(weights.data(), static_cast<Index>(weights.size())));
}

void require_strictly_positive(const Distribution& p, double floor) {
  for (Index i = 0; i < p.size(); ++i) {
    if (p[i] < floor) {
      std::ostringstream os;
      os << "entry " << i << " = " << p[i] << " is below the floor " << floor;
      throw Error(Errc::kBelowFloor, os.str());
    }
  }
}

UtilityVector::UtilityVector(Vector utils) : utils_(std::move(utils)) {
  if (!utils_.allFinite()) throw Error(Errc::kNonFiniteEntry, "utility vector has non-finite entries");
}

double exact_kl(const Distribution& p, const Distribution& q) {
  if (p.size() != q.size()) throw Error(Errc::kLengthMismatch, "exact_kl: length mismatch");
  double kl = 0.0;
  for (Index i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) throw Error(Errc::kInfiniteDivergence, "exact_kl: q vanishes where p has mass");
    kl += p[i] * std::log(p[i] / q[i]);
  }
  // Round-off can leave a tiny negative sum for p ~= q.
  return kl > 0.0 ? kl : 0.0;
}

double k3_term(double ratio) {
  if (!std::isfinite(ratio) || ratio <= 0.0) {
    throw Error(Errc::kInvalidArgument, "k3_term: ratio must be positive and finite");
  }
  const double value = ratio - std::log(ratio) - 1.0;
  return value > 0.0 ? value : 0.0;
}

double total_variation(const Distribution& p, const Distribution& q) {
  if (p.size() != q.size()) throw Error(Errc::kLengthMismatch, "total_variation: length mismatch");
  return 0.5 * (p.probs() - q.probs()).cwiseAbs().sum();
}

Vector softmax(const Eigen::Ref<const Vector>& logits, double temperature) {
  const Vector scaled = logits / temperature;
  const Vector shifted = (scaled.array() - scaled.maxCoeff()).exp().matrix();
  return shifted / shifted.sum();
}

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

}  // namespace latent

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>

#include "sgembed/dataset.hpp"
#include "sgembed/objectives.hpp"

namespace sgembed {

enum class SamplerKind { kRandom, kExtreme, kProbability, kReject };

const char* sampler_name(SamplerKind kind);
SamplerKind parse_sampler(std::string_view name);

struct SamplerConfig {
  SamplerKind kind = SamplerKind::kProbability;
  std::uint64_t seed = 0;
};

/// Upper bound on redraws before a sampler gives up with SamplerExhaustedError.
inline constexpr std::size_t kMaxRedraws = 10000;

/// Draws (positive, negative) pairs for an anchor from its similarity row. The
/// anchor itself is never a candidate.
///
/// - Random: uniform over ordered pairs with s_ap > s_an (rejection sampling of
///   uniform distinct pairs).
/// - Extreme: most similar positive, least similar remaining negative; ties go
///   to the smallest index.
/// - Probability: positive drawn with weight s_ax, negative with weight
///   1 - s_ax, negative redrawn while it equals the positive.
/// - Reject: Probability, redrawn while s_ap < s_an.
///
/// Each sampler owns its random engine; use one instance per worker.
class TripleSampler {
 public:
  explicit TripleSampler(const SamplerConfig& config);

  Triple sample(std::size_t anchor, const SimilarityMatrix& sim);

  SamplerKind kind() const noexcept { return kind_; }

 private:
  Triple sample_random(std::size_t anchor, const SimilarityMatrix& sim);
  Triple sample_extreme(std::size_t anchor, const SimilarityMatrix& sim) const;
  Triple sample_probability(std::size_t anchor, const SimilarityMatrix& sim);

  SamplerKind kind_;
  std::mt19937_64 rng_;
};

}  // namespace sgembed

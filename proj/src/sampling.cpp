#include "sgembed/sampling.hpp"

#include <string>
#include <vector>

#include "sgembed/error.hpp"

namespace sgembed {

const char* sampler_name(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::kRandom: return "random";
    case SamplerKind::kExtreme: return "extreme";
    case SamplerKind::kProbability: return "probability";
    case SamplerKind::kReject: return "reject";
  }
  return "?";
}

SamplerKind parse_sampler(std::string_view name) {
  if (name == "random") return SamplerKind::kRandom;
  if (name == "extreme") return SamplerKind::kExtreme;
  if (name == "probability") return SamplerKind::kProbability;
  if (name == "reject") return SamplerKind::kReject;
  throw Error(ErrorKind::kInvalidArgument, "unknown sampler \"" + std::string(name) + "\"");
}

TripleSampler::TripleSampler(const SamplerConfig& config) : kind_(config.kind), rng_(config.seed) {}

Triple TripleSampler::sample(std::size_t anchor, const SimilarityMatrix& sim) {
  if (sim.size() < 3) {
    throw Error(ErrorKind::kInvalidArgument, "sampling a triple needs at least 3 images, got " +
                                                 std::to_string(sim.size()));
  }
  if (anchor >= sim.size()) {
    throw Error(ErrorKind::kInvalidArgument, "anchor " + std::to_string(anchor) + " out of range");
  }
  switch (kind_) {
    case SamplerKind::kRandom: return sample_random(anchor, sim);
    case SamplerKind::kExtreme: return sample_extreme(anchor, sim);
    case SamplerKind::kProbability: return sample_probability(anchor, sim);
    case SamplerKind::kReject:
      for (std::size_t attempt = 0; attempt < kMaxRedraws; ++attempt) {
        Triple t = sample_probability(anchor, sim);
        if (!(t.s_ap < t.s_an)) return t;
      }
      throw SamplerExhaustedError(anchor, "reject sampler found no pair with s_ap >= s_an after " +
                                              std::to_string(kMaxRedraws) + " redraws");
  }
  throw Error(ErrorKind::kInvalidArgument, "unknown sampler kind");
}

Triple TripleSampler::sample_random(std::size_t anchor, const SimilarityMatrix& sim) {
  // Candidates are [0, n) without the anchor; draw an index in [0, n-1) and
  // shift past the anchor.
  const std::size_t n = sim.size();
  std::uniform_int_distribution<std::size_t> first(0, n - 2);
  std::uniform_int_distribution<std::size_t> second(0, n - 3);
  const auto skip = [](std::size_t i, std::size_t hole) { return i >= hole ? i + 1 : i; };
  for (std::size_t attempt = 0; attempt < kMaxRedraws; ++attempt) {
    const std::size_t p = skip(first(rng_), anchor);
    // Second draw excludes both the anchor and p.
    const std::size_t lo = std::min(anchor, p), hi = std::max(anchor, p);
    const std::size_t q = skip(skip(second(rng_), lo), hi);
    const double s_ap = sim(anchor, p), s_an = sim(anchor, q);
    if (s_ap > s_an) return Triple{anchor, p, q, s_ap, s_an};
  }
  throw SamplerExhaustedError(anchor, "random sampler found no correctly ordered pair after " +
                                          std::to_string(kMaxRedraws) + " redraws");
}

Triple TripleSampler::sample_extreme(std::size_t anchor, const SimilarityMatrix& sim) const {
  const std::size_t n = sim.size();
  std::size_t p = n;
  for (std::size_t j = 0; j < n; ++j) {
    if (j == anchor) continue;
    if (p == n || sim(anchor, j) > sim(anchor, p)) p = j;
  }
  std::size_t q = n;
  for (std::size_t j = 0; j < n; ++j) {
    if (j == anchor || j == p) continue;
    if (q == n || sim(anchor, j) < sim(anchor, q)) q = j;
  }
  return Triple{anchor, p, q, sim(anchor, p), sim(anchor, q)};
}

Triple TripleSampler::sample_probability(std::size_t anchor, const SimilarityMatrix& sim) {
  const std::size_t n = sim.size();
  std::vector<double> pos_w(n, 0.0), neg_w(n, 0.0);
  double pos_total = 0.0, neg_total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (j == anchor) continue;
    pos_w[j] = sim(anchor, j);
    neg_w[j] = 1.0 - sim(anchor, j);
    pos_total += pos_w[j];
    neg_total += neg_w[j];
  }
  if (!(pos_total > 0.0)) {
    throw DegenerateDistributionError("anchor " + std::to_string(anchor) +
                                      ": all similarities are 0, positive distribution undefined");
  }
  if (!(neg_total > 0.0)) {
    throw DegenerateDistributionError("anchor " + std::to_string(anchor) +
                                      ": all similarities are 1, negative distribution undefined");
  }
  std::discrete_distribution<std::size_t> pos(pos_w.begin(), pos_w.end());
  std::discrete_distribution<std::size_t> neg(neg_w.begin(), neg_w.end());
  const std::size_t p = pos(rng_);
  for (std::size_t attempt = 0; attempt < kMaxRedraws; ++attempt) {
    const std::size_t q = neg(rng_);
    if (q != p) return Triple{anchor, p, q, sim(anchor, p), sim(anchor, q)};
  }
  throw SamplerExhaustedError(anchor, "probability sampler kept drawing the positive as negative");
}

}  // namespace sgembed

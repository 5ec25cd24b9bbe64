#pragma once

#include <cstddef>
#include <span>
#include <string_view>

#include "sgembed/autodiff.hpp"

namespace sgembed {

enum class LossKind { kTriplet, kInfoNce, kRanking };

const char* loss_name(LossKind kind);
LossKind parse_loss(std::string_view name);

struct LossConfig {
  LossKind kind = LossKind::kRanking;
  double margin = 0.5;  ///< triplet margin m
  double lambda = 1.0;  ///< InfoNCE temperature
  double nu = 1.0;      ///< ranking-loss temperature

  void validate() const;
};

/// Anchor/positive/negative image indices with the supervision similarities
/// copied from the similarity matrix.
struct Triple {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;
  double s_ap = 0.0;
  double s_an = 0.0;

  bool operator==(const Triple&) const = default;
};

/// Soft ordering target s_ap / (s_ap + s_an). Throws when both are zero.
double ranking_target(double s_ap, double s_an);

// The batch losses take (B, D) embedding rows for anchors, positives and
// negatives and return the B per-triple losses.

/// Cross-entropy between sigmoid((a.p - a.n) / nu) and the soft target, written
/// as P * softplus(-z) + (1 - P) * softplus(z) for stability.
Var ranking_loss(Var anchors, Var positives, Var negatives, std::span<const double> targets,
                 double nu);
/// max(a.n - a.p + margin, 0). The subgradient at the hinge is zero.
Var triplet_loss(Var anchors, Var positives, Var negatives, double margin);
/// -log softmax over {a.p, a.n} / lambda, i.e. softplus((a.n - a.p) / lambda).
Var infonce_loss(Var anchors, Var positives, Var negatives, double lambda);

/// Mean loss of the configured kind over a batch of triples.
Var contrastive_loss(const LossConfig& config, Var anchors, Var positives, Var negatives,
                     std::span<const Triple> triples);

}  // namespace sgembed

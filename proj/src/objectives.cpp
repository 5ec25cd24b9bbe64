#include "sgembed/objectives.hpp"

#include <string>
#include <vector>

#include "sgembed/error.hpp"

namespace sgembed {

const char* loss_name(LossKind kind) {
  switch (kind) {
    case LossKind::kTriplet: return "triplet";
    case LossKind::kInfoNce: return "infonce";
    case LossKind::kRanking: return "ranking";
  }
  return "?";
}

LossKind parse_loss(std::string_view name) {
  if (name == "triplet") return LossKind::kTriplet;
  if (name == "infonce") return LossKind::kInfoNce;
  if (name == "ranking") return LossKind::kRanking;
  throw Error(ErrorKind::kInvalidArgument, "unknown loss \"" + std::string(name) + "\"");
}

void LossConfig::validate() const {
  require(margin >= 0.0, "triplet margin must be non-negative");
  require(lambda > 0.0, "InfoNCE temperature must be positive");
  require(nu > 0.0, "ranking temperature must be positive");
}

double ranking_target(double s_ap, double s_an) {
  if (!(s_ap + s_an > 0.0)) {
    throw Error(ErrorKind::kInvalidArgument,
                "ranking target undefined when both similarities are zero");
  }
  return s_ap / (s_ap + s_an);
}

namespace {

// (a.p - a.n) per row.
Var similarity_gap(Var anchors, Var positives, Var negatives) {
  return ops::sub(ops::row_dot(anchors, positives), ops::row_dot(anchors, negatives));
}

}  // namespace

Var ranking_loss(Var anchors, Var positives, Var negatives, std::span<const double> targets,
                 double nu) {
  require(nu > 0.0, "ranking temperature must be positive");
  Var z = ops::mul_scalar(similarity_gap(anchors, positives, negatives), 1.0 / nu);
  const std::size_t b = z.value().size();
  if (targets.size() != b) {
    throw DimensionError("ranking_loss: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(b) + " triples");
  }
  Tape& tape = z.tape();
  Tensor p(Shape{b}, std::vector<double>(targets.begin(), targets.end()));
  Tensor q(Shape{b});
  for (std::size_t i = 0; i < b; ++i) q[i] = 1.0 - targets[i];
  // -P log sigmoid(z) - (1-P) log(1 - sigmoid(z))
  Var positive_term = ops::mul(tape.constant(std::move(p)), ops::softplus(ops::mul_scalar(z, -1.0)));
  Var negative_term = ops::mul(tape.constant(std::move(q)), ops::softplus(z));
  return ops::add(positive_term, negative_term);
}

Var triplet_loss(Var anchors, Var positives, Var negatives, double margin) {
  require(margin >= 0.0, "triplet margin must be non-negative");
  Var gap = similarity_gap(anchors, positives, negatives);
  return ops::relu(ops::add_scalar(ops::mul_scalar(gap, -1.0), margin));
}

Var infonce_loss(Var anchors, Var positives, Var negatives, double lambda) {
  require(lambda > 0.0, "InfoNCE temperature must be positive");
  Var gap = similarity_gap(anchors, positives, negatives);
  return ops::softplus(ops::mul_scalar(gap, -1.0 / lambda));
}

Var contrastive_loss(const LossConfig& config, Var anchors, Var positives, Var negatives,
                     std::span<const Triple> triples) {
  switch (config.kind) {
    case LossKind::kTriplet:
      return ops::mean(triplet_loss(anchors, positives, negatives, config.margin));
    case LossKind::kInfoNce:
      return ops::mean(infonce_loss(anchors, positives, negatives, config.lambda));
    case LossKind::kRanking: {
      std::vector<double> targets;
      targets.reserve(triples.size());
      for (const auto& t : triples) targets.push_back(ranking_target(t.s_ap, t.s_an));
      return ops::mean(ranking_loss(anchors, positives, negatives, targets, config.nu));
    }
  }
  throw Error(ErrorKind::kInvalidArgument, "unknown loss kind");
}

}  // namespace sgembed

#include "sgembed/evaluation.hpp"

#include <cstdio>
#include <fstream>
#include <random>

#include <json.hpp>

#include "sgembed/correlation.hpp"
#include "sgembed/error.hpp"
#include "sgembed/rng.hpp"

namespace sgembed {

using nlohmann::json;

namespace {

double dot_rows(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  const std::size_t d = a.cols();
  double s = 0.0;
  for (std::size_t c = 0; c < d; ++c) s += a[i * d + c] * b[j * d + c];
  return s;
}

template <class Metric>
std::optional<double> defined(Metric metric, std::span<const double> x, std::span<const double> y) {
  try {
    return metric(x, y);
  } catch (const UndefinedMetricError&) {
    return std::nullopt;
  }
}

struct RunningMean {
  double sum = 0.0;
  std::size_t count = 0;
  void add(const std::optional<double>& v) {
    if (!v) return;
    sum += *v;
    ++count;
  }
  std::optional<double> value() const {
    if (count == 0) return std::nullopt;
    return sum / static_cast<double>(count);
  }
};

std::vector<SceneGraph> augmented_split(const Dataset& dataset, std::span<const std::size_t> idx) {
  std::vector<SceneGraph> graphs;
  graphs.reserve(idx.size());
  for (std::size_t i : idx) graphs.push_back(augment_trivial(dataset.graphs[i], dataset.vocab));
  return graphs;
}

std::vector<std::size_t> require_split(const Dataset& dataset, Split split) {
  auto idx = dataset.indices(split);
  if (idx.empty()) {
    throw Error(ErrorKind::kInvalidArgument, std::string("split ") + split_name(split) + " is empty");
  }
  return idx;
}

std::ofstream open_report(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::string fixed6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fixed6(const std::optional<double>& v) { return v ? fixed6(*v) : std::string(); }

json correlation_json(const CorrelationSet& c) {
  auto val = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return {{"kendall_tau", val(c.kendall_tau)},
          {"spearman_rho", val(c.spearman_rho)},
          {"pearson_r", val(c.pearson_r)}};
}

json report_json(const EvalReport& r) {
  return {{"n_images", r.n_images},
          {"row_wise", correlation_json(r.row_wise)},
          {"all_pairs", correlation_json(r.all_pairs)},
          {"row_coverage",
           {{"rows", r.coverage.rows},
            {"kendall_tau", r.coverage.kendall_tau},
            {"spearman_rho", r.coverage.spearman_rho},
            {"pearson_r", r.coverage.pearson_r}}}};
}

void csv_rows(std::ostream& out, const std::string& prefix, const EvalReport& r) {
  const std::pair<const char*, const CorrelationSet*> scopes[] = {{"row_wise", &r.row_wise},
                                                                  {"all_pairs", &r.all_pairs}};
  for (const auto& [scope, set] : scopes) {
    out << prefix << scope << ",kendall_tau," << fixed6(set->kendall_tau) << '\n';
    out << prefix << scope << ",spearman_rho," << fixed6(set->spearman_rho) << '\n';
    out << prefix << scope << ",pearson_r," << fixed6(set->pearson_r) << '\n';
  }
}

}  // namespace

EvalReport evaluate_embeddings(const Tensor& embeddings, const SimilarityMatrix& sim,
                               std::span<const std::size_t> indices) {
  const std::size_t n = indices.size();
  if (embeddings.rows() != n || embeddings.rank() != 2) {
    throw DimensionError("evaluate: " + std::to_string(embeddings.rows()) +
                         " embedding rows for " + std::to_string(n) + " images");
  }
  EvalReport report;
  report.n_images = n;
  RunningMean tau, rho, r;
  std::vector<double> model_sim, supervision;
  for (std::size_t a = 0; a < n; ++a) {
    model_sim.clear();
    supervision.clear();
    for (std::size_t b = 0; b < n; ++b) {
      if (b == a) continue;
      model_sim.push_back(dot_rows(embeddings, a, embeddings, b));
      supervision.push_back(sim(indices[a], indices[b]));
    }
    const auto t = defined(kendall_tau, model_sim, supervision);
    const auto s = defined(spearman_rho, model_sim, supervision);
    const auto p = defined(pearson_r, model_sim, supervision);
    tau.add(t);
    rho.add(s);
    r.add(p);
  }
  report.coverage = RowCoverage{n, tau.count, rho.count, r.count};
  report.row_wise = CorrelationSet{tau.value(), rho.value(), r.value()};

  model_sim.clear();
  supervision.clear();
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      model_sim.push_back(dot_rows(embeddings, a, embeddings, b));
      supervision.push_back(sim(indices[a], indices[b]));
    }
  }
  report.all_pairs = CorrelationSet{defined(kendall_tau, model_sim, supervision),
                                    defined(spearman_rho, model_sim, supervision),
                                    defined(pearson_r, model_sim, supervision)};
  return report;
}

std::optional<double> row_wise_kendall(const Tensor& embeddings, const SimilarityMatrix& sim,
                                       std::span<const std::size_t> indices) {
  RunningMean tau;
  std::vector<double> model_sim, supervision;
  for (std::size_t a = 0; a < indices.size(); ++a) {
    model_sim.clear();
    supervision.clear();
    for (std::size_t b = 0; b < indices.size(); ++b) {
      if (b == a) continue;
      model_sim.push_back(dot_rows(embeddings, a, embeddings, b));
      supervision.push_back(sim(indices[a], indices[b]));
    }
    tau.add(defined(kendall_tau, model_sim, supervision));
  }
  return tau.value();
}

EvalReport evaluate(const GcnModel& model, const Dataset& dataset, Split split) {
  const auto idx = require_split(dataset, split);
  const auto graphs = augmented_split(dataset, idx);
  return evaluate_embeddings(embed_graphs(model, graphs), dataset.similarity, idx);
}

Tensor normal_features(std::size_t n, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor out(Shape{n, dim});
  for (double& v : out.data()) v = normal(rng);
  return out;
}

EvalReport evaluate_normal_features(const Dataset& dataset, Split split, std::size_t dim,
                                    std::uint64_t seed) {
  const auto idx = require_split(dataset, split);
  return evaluate_embeddings(normal_features(idx.size(), dim, seed), dataset.similarity, idx);
}

double RetrievalReport::recall(std::size_t k) const {
  if (ranks.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t r : ranks) hits += r <= k ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

std::size_t target_rank(std::span<const double> scores, std::size_t target) {
  if (target >= scores.size()) throw Error(ErrorKind::kInvalidArgument, "target out of range");
  const double t = scores[target];
  std::size_t ahead = 0;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (scores[j] > t || (scores[j] == t && j < target)) ++ahead;
  }
  return ahead + 1;
}

RetrievalReport rank_queries(const Tensor& index, const Tensor& queries, std::size_t noise_level,
                             std::span<const std::size_t> query_images) {
  if (index.rows() != queries.rows() || index.cols() != queries.cols() ||
      query_images.size() != queries.rows()) {
    throw DimensionError("rank_queries: index " + shape_string(index.shape()) + " vs queries " +
                         shape_string(queries.shape()));
  }
  const std::size_t n = index.rows();
  RetrievalReport report;
  report.noise_level = noise_level;
  report.query_images.assign(query_images.begin(), query_images.end());
  std::vector<double> scores(n);
  double reciprocal = 0.0;
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t j = 0; j < n; ++j) scores[j] = dot_rows(queries, q, index, j);
    const std::size_t rank = target_rank(scores, q);
    report.ranks.push_back(rank);
    reciprocal += 1.0 / static_cast<double>(rank);
  }
  report.mrr = n ? reciprocal / static_cast<double>(n) : 0.0;
  for (std::size_t k : kRecallCutoffs) report.recall_at[k] = report.recall(k);
  return report;
}

std::uint64_t query_seed(std::uint64_t seed, std::size_t image) {
  return derive_seed(seed, {0x71756572ULL, image});
}

namespace {

RetrievalReport retrieve_against(const GcnModel& model, const Dataset& dataset,
                                 std::span<const std::size_t> idx, const Tensor& index,
                                 std::size_t noise_level, std::uint64_t seed) {
  std::vector<SceneGraph> queries;
  queries.reserve(idx.size());
  for (std::size_t i : idx) {
    queries.push_back(augment_trivial(corrupt(dataset.graphs[i], noise_level, query_seed(seed, i)),
                                      dataset.vocab));
  }
  return rank_queries(index, embed_graphs(model, queries), noise_level, idx);
}

}  // namespace

RetrievalReport retrieval_experiment(const GcnModel& model, const Dataset& dataset, Split split,
                                     std::size_t noise_level, std::uint64_t seed) {
  const auto idx = require_split(dataset, split);
  const Tensor index = embed_graphs(model, augmented_split(dataset, idx));
  return retrieve_against(model, dataset, idx, index, noise_level, seed);
}

std::vector<RetrievalReport> noise_sweep(const GcnModel& model, const Dataset& dataset,
                                         Split split, std::span<const std::size_t> noise_levels,
                                         std::uint64_t seed) {
  if (noise_levels.empty()) throw Error(ErrorKind::kInvalidArgument, "noise sweep needs levels");
  const auto idx = require_split(dataset, split);
  const Tensor index = embed_graphs(model, augmented_split(dataset, idx));
  std::vector<RetrievalReport> out;
  out.reserve(noise_levels.size());
  for (std::size_t m : noise_levels) out.push_back(retrieve_against(model, dataset, idx, index, m, seed));
  return out;
}

void write_eval_json(const std::filesystem::path& path, const EvalReport& model,
                     const std::optional<EvalReport>& baseline) {
  json doc = {{"model", report_json(model)}};
  if (baseline) doc["normal_features"] = report_json(*baseline);
  auto out = open_report(path);
  out << doc.dump(2) << '\n';
}

void write_eval_csv(const std::filesystem::path& path, const EvalReport& model,
                    const std::optional<EvalReport>& baseline) {
  auto out = open_report(path);
  out << "scope,metric,value\n";
  csv_rows(out, "", model);
  if (baseline) csv_rows(out, "normal_features_", *baseline);
}

void write_retrieval_csv(const std::filesystem::path& path,
                         std::span<const RetrievalReport> reports) {
  auto out = open_report(path);
  out << "M,mrr,r_at_1,r_at_5,r_at_10,r_at_20,r_at_50\n";
  for (const auto& r : reports) {
    out << r.noise_level << ',' << fixed6(r.mrr);
    for (std::size_t k : kRecallCutoffs) out << ',' << fixed6(r.recall(k));
    out << '\n';
  }
}

void write_ranks_csv(const std::filesystem::path& path, std::span<const RetrievalReport> reports,
                     const Dataset& dataset) {
  auto out = open_report(path);
  out << "M,image_id,rank\n";
  for (const auto& r : reports) {
    for (std::size_t q = 0; q < r.ranks.size(); ++q) {
      out << r.noise_level << ',' << dataset.graphs.at(r.query_images[q]).image_id << ','
          << r.ranks[q] << '\n';
    }
  }
}

void write_recall_curve_csv(const std::filesystem::path& path,
                            std::span<const RetrievalReport> reports) {
  auto out = open_report(path);
  out << "M,k,recall\n";
  for (const auto& r : reports) {
    for (std::size_t k = 1; k <= r.ranks.size(); ++k) {
      out << r.noise_level << ',' << k << ',' << fixed6(r.recall(k)) << '\n';
    }
  }
}

}  // namespace sgembed

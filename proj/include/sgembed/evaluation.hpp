#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sgembed/dataset.hpp"
#include "sgembed/gcn.hpp"
#include "sgembed/tensor.hpp"

namespace sgembed {

/// A missing value means the metric was undefined (for example every row had a
/// single candidate).
struct CorrelationSet {
  std::optional<double> kendall_tau;
  std::optional<double> spearman_rho;
  std::optional<double> pearson_r;
};

/// Number of rows on which each row-wise metric was defined.
struct RowCoverage {
  std::size_t rows = 0;
  std::size_t kendall_tau = 0;
  std::size_t spearman_rho = 0;
  std::size_t pearson_r = 0;
};

struct EvalReport {
  CorrelationSet row_wise;
  CorrelationSet all_pairs;
  RowCoverage coverage;
  std::size_t n_images = 0;
};

/// Compares embedding inner products with the supervision similarities over the
/// images `indices` (row r of `embeddings` belongs to indices[r]).
/// Row-wise: per anchor, correlate against every other image and average over
/// rows where the metric is defined. All-pairs: correlate the strict upper
/// triangles.
EvalReport evaluate_embeddings(const Tensor& embeddings, const SimilarityMatrix& sim,
                               std::span<const std::size_t> indices);

/// Row-wise Kendall tau only; the cheap validation metric used during training.
std::optional<double> row_wise_kendall(const Tensor& embeddings, const SimilarityMatrix& sim,
                                       std::span<const std::size_t> indices);

/// Embeds the split (Eval mode) and evaluates it.
EvalReport evaluate(const GcnModel& model, const Dataset& dataset, Split split);

/// Standard-normal features of shape (n, dim).
Tensor normal_features(std::size_t n, std::size_t dim, std::uint64_t seed);
EvalReport evaluate_normal_features(const Dataset& dataset, Split split, std::size_t dim,
                                    std::uint64_t seed);

inline constexpr std::array<std::size_t, 5> kRecallCutoffs = {1, 5, 10, 20, 50};

struct RetrievalReport {
  std::size_t noise_level = 0;
  double mrr = 0.0;
  std::map<std::size_t, double> recall_at;
  std::vector<std::size_t> query_images;  ///< dataset index of each query's target
  std::vector<std::size_t> ranks;         ///< 1-based rank of the target per query

  /// Fraction of queries with rank <= k.
  double recall(std::size_t k) const;
};

/// 1-based position of `target` when candidates are sorted by descending
/// score with ties broken by ascending index.
std::size_t target_rank(std::span<const double> scores, std::size_t target);

/// Query row r targets index row r.
RetrievalReport rank_queries(const Tensor& index, const Tensor& queries, std::size_t noise_level,
                             std::span<const std::size_t> query_images);

/// Seed of the corruption applied to one query image.
std::uint64_t query_seed(std::uint64_t seed, std::size_t image);

/// Index of clean split embeddings; every split image is corrupted with M
/// edges removed, re-augmented, embedded and ranked against the index.
RetrievalReport retrieval_experiment(const GcnModel& model, const Dataset& dataset, Split split,
                                     std::size_t noise_level, std::uint64_t seed);

/// One retrieval experiment per noise level, sharing the index embeddings.
std::vector<RetrievalReport> noise_sweep(const GcnModel& model, const Dataset& dataset,
                                         Split split, std::span<const std::size_t> noise_levels,
                                         std::uint64_t seed);

// Report files.
void write_eval_json(const std::filesystem::path& path, const EvalReport& model,
                     const std::optional<EvalReport>& baseline);
/// Rows `scope,metric,value`; scopes row_wise, all_pairs and, with a
/// baseline, normal_features_row_wise / normal_features_all_pairs. Undefined
/// metrics leave the value empty.
void write_eval_csv(const std::filesystem::path& path, const EvalReport& model,
                    const std::optional<EvalReport>& baseline);
/// Header `M,mrr,r_at_1,r_at_5,r_at_10,r_at_20,r_at_50`.
void write_retrieval_csv(const std::filesystem::path& path,
                         std::span<const RetrievalReport> reports);
/// Header `M,image_id,rank`.
void write_ranks_csv(const std::filesystem::path& path, std::span<const RetrievalReport> reports,
                     const Dataset& dataset);
/// Header `M,k,recall` for k = 1..number of queries.
void write_recall_curve_csv(const std::filesystem::path& path,
                            std::span<const RetrievalReport> reports);

}  // namespace sgembed

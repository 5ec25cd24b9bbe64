#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sgembed/scene_graph.hpp"

namespace sgembed {

/// Square matrix of weak-supervision similarities in [0, 1]. Symmetry is not
/// assumed; row i holds s(i, *).
class SimilarityMatrix {
 public:
  SimilarityMatrix() = default;
  /// Throws unless `values` is n*n finite entries in [0, 1].
  SimilarityMatrix(std::size_t n, std::vector<double> values);

  std::size_t size() const noexcept { return n_; }
  double operator()(std::size_t row, std::size_t col) const { return values_[row * n_ + col]; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(values_).subspan(r * n_, n_);
  }
  std::span<const double> values() const noexcept { return values_; }

  /// Rows and columns restricted to `indices`, in that order.
  SimilarityMatrix submatrix(std::span<const std::size_t> indices) const;

  bool operator==(const SimilarityMatrix&) const = default;

 private:
  std::size_t n_ = 0;
  std::vector<double> values_;
};

enum class Split : std::uint8_t { kTrain, kVal, kTest };

const char* split_name(Split split);
Split parse_split(std::string_view name);

struct SplitRatios {
  double train = 0.7;
  double val = 0.2;
  double test = 0.1;
};

/// Seeded shuffle of [0, n). Validation and test take floor(n * ratio) images;
/// the remainder goes to train.
std::vector<Split> split_dataset(std::size_t n, const SplitRatios& ratios, std::uint64_t seed);

struct Dataset {
  Vocabulary vocab;
  std::vector<SceneGraph> graphs;
  SimilarityMatrix similarity;
  /// Per-image assignment; empty until assign_split() is called.
  std::vector<Split> split;

  std::size_t size() const noexcept { return graphs.size(); }
  void assign_split(const SplitRatios& ratios, std::uint64_t seed);
  /// Image indices of one split in ascending order.
  std::vector<std::size_t> indices(Split which) const;
  /// Throws on dimension mismatches or invalid graphs.
  void validate() const;
};

/// Standard file names inside a dataset directory.
struct DatasetPaths {
  std::filesystem::path graphs;
  std::filesystem::path similarity;
  std::filesystem::path vocab;

  static DatasetPaths in_directory(const std::filesystem::path& dir);
};

Vocabulary load_vocabulary(const std::filesystem::path& path);
std::vector<SceneGraph> load_graphs(const std::filesystem::path& path, const Vocabulary& vocab);
/// Reads the CSV and checks its header against `image_ids`.
SimilarityMatrix load_similarity(const std::filesystem::path& path,
                                 std::span<const std::string> image_ids);

Dataset load_dataset(const std::filesystem::path& graphs_path,
                     const std::filesystem::path& similarity_path,
                     const std::filesystem::path& vocab_path);
Dataset load_dataset(const DatasetPaths& paths);

void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path);
void save_graphs(std::span<const SceneGraph> graphs, const Vocabulary& vocab,
                 const std::filesystem::path& path);
void save_similarity(const SimilarityMatrix& sim, std::span<const std::string> image_ids,
                     const std::filesystem::path& path);
void save_dataset(const Dataset& dataset, const DatasetPaths& paths);

/// Image ids in dataset order.
std::vector<std::string> image_ids(const Dataset& dataset);

}  // namespace sgembed

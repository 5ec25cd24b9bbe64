#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sgembed/dataset.hpp"

namespace sgembed {

/// Generator of scene graphs whose content is driven by a latent topic mixture
/// per image; the similarity of two images is the cosine of their mixtures
/// mapped affinely onto [band_low, band_high].
struct SynthConfig {
  std::size_t n_images = 200;
  std::size_t n_object_labels = 60;
  std::size_t n_relationship_labels = 16;
  std::size_t n_topics = 6;
  std::size_t min_objects = 3;
  std::size_t max_objects = 40;
  std::size_t min_edges = 1;
  /// Draw object counts log-uniformly over [min_objects, max_objects] (right
  /// skewed, many small graphs) instead of uniformly.
  bool log_uniform_objects = false;
  /// Edges per object; every object is first covered by one edge, extra edges
  /// are added until round(edges_per_object * objects) is reached.
  double edges_per_object = 0.75;
  double band_low = 0.6;
  double band_high = 0.8;
  /// Dirichlet concentration of the per-topic label and predicate distributions.
  /// Small values make topics more distinctive.
  double label_concentration = 1.0;
  /// The first n_generic_labels object labels are topic-independent; topic
  /// distributions cover the remaining labels. With zero generic labels every
  /// label may belong to a topic.
  std::size_t n_generic_labels = 0;
  /// Give each topic a disjoint block of the non-generic labels (label j
  /// belongs to topic j mod n_topics) instead of a distribution over all of them.
  bool disjoint_topics = true;
  /// Probability that an object label is drawn uniformly from the generic
  /// labels (from all labels when there are none) instead of from its topic.
  double background_weight = 0.0;
  std::uint64_t seed = 0;
  /// Optional fixed mixtures for the first images (each of length n_topics,
  /// non-negative, not all zero; normalized on use).
  std::vector<std::vector<double>> forced_mixtures;

  /// Throws on infeasible settings (for example max_objects < min_objects).
  void validate() const;
};

/// Sets one field from its name and textual value (`forced_mixtures` is only
/// settable from JSON).
void set_synth_option(SynthConfig& config, const std::string& key, const std::string& value);
SynthConfig parse_synth_config(const std::string& json_text);
SynthConfig load_synth_config(const std::filesystem::path& path);
std::string synth_config_json(const SynthConfig& config);
const std::vector<std::string>& synth_option_names();

struct SynthDataset {
  Dataset dataset;                           ///< no split assigned
  std::vector<std::vector<double>> mixtures;  ///< normalized topic mixture per image
};

SynthDataset generate(const SynthConfig& config);

/// Cosine of two mixtures mapped onto the band; similarities are rounded to six
/// decimals so they survive the CSV round trip unchanged.
double mixture_similarity(const std::vector<double>& a, const std::vector<double>& b,
                          double band_low, double band_high);

struct Histogram {
  double lo = 0.0;
  double width = 0.0;
  std::vector<std::size_t> counts;
};

struct DatasetStats {
  std::size_t n_images = 0;
  double median_edges = 0.0;
  double median_objects = 0.0;
  std::map<std::size_t, std::size_t> object_counts;  ///< objects per graph -> graphs
  std::map<std::size_t, std::size_t> edge_counts;    ///< edges per graph -> graphs
  double similarity_min = 0.0;
  double similarity_max = 0.0;
  double similarity_mean = 0.0;
  Histogram similarity;        ///< off-diagonal entries, 20 bins over [0, 1]
  Histogram abs_difference;    ///< |s_ax - s_ay| within each row, 50 bins over [0, 1]
  double difference_p99 = 0.0;
};

/// Throws on an empty dataset.
DatasetStats dataset_stats(const Dataset& dataset);
std::string stats_json(const DatasetStats& stats);

/// Writes graphs.jsonl, similarity.csv, vocab.json and stats.json into `dir`.
void write_synth_dataset(const Dataset& dataset, const std::filesystem::path& dir);

}  // namespace sgembed

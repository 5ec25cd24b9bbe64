#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sgembed/adam.hpp"
#include "sgembed/autodiff.hpp"
#include "sgembed/scene_graph.hpp"
#include "sgembed/tensor.hpp"

namespace sgembed {

struct ModelConfig {
  std::size_t embed_dim = 300;    ///< width of the label embedding tables
  std::size_t message_dim = 512;  ///< width of the per-edge messages
  std::size_t state_dim = 300;    ///< width of node/edge states and of the output
  std::size_t num_layers = 5;
  std::size_t mlp_hidden = 512;
  /// Include the auxiliary image node in the mean pooling.
  bool pool_include_trivial = true;
  /// Re-normalize the pooled embedding to unit length.
  bool renormalize_embedding = true;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Fully connected layer computing x * weight + bias; weight is (in, out).
struct Linear {
  Tensor weight;
  Tensor bias;
};

struct BatchNorm {
  Tensor gamma;
  Tensor beta;
  BatchNormStats stats;
};

/// One graph convolution. A shared trunk reads concat(node_u, edge_uv, node_v)
/// and three heads emit the source message, the target message and the new
/// edge state. Pooled messages pass through a two-layer node MLP.
struct GcnLayerParams {
  Linear trunk;
  BatchNorm trunk_norm;
  Linear head_source;
  Linear head_target;
  Linear head_edge;
  Linear node_hidden;
  BatchNorm node_norm;
  Linear node_out;
};

class GcnModel {
 public:
  /// Tables ~ N(0, (1/sqrt(d))^2), weights Kaiming-uniform, biases zero,
  /// batch-norm scale one and shift zero.
  static GcnModel initialize(const ModelConfig& config, Vocabulary vocab, std::uint64_t seed);

  ModelConfig config;
  Vocabulary vocab;
  Tensor object_table;
  Tensor relationship_table;
  std::vector<GcnLayerParams> layers;

  /// Every learnable tensor with a stable dotted name, in a fixed order.
  std::vector<NamedParameter> parameters();
  std::vector<std::pair<std::string, BatchNormStats*>> batchnorm_stats();
  std::vector<std::pair<std::string, const BatchNormStats*>> batchnorm_stats() const;

  /// Exact equality of configuration, vocabulary, parameters and running stats.
  bool same_as(const GcnModel& other) const;
};

/// Overwrites embedding-table rows from a whitespace-separated text file with
/// one `label v1 ... vd` line per vector. A label found in both tables sets
/// both rows. Labels outside the vocabulary are skipped; blank lines and lines
/// starting with `#` are ignored. Returns the number of rows written.
std::size_t load_pretrained_vectors(GcnModel& model, const std::filesystem::path& path);

/// Disjoint union of a minibatch of graphs with batch-offset node indices.
struct BatchedGraph {
  std::vector<std::size_t> node_labels;
  std::vector<std::size_t> edge_labels;
  std::vector<std::size_t> edge_source;
  std::vector<std::size_t> edge_target;
  std::vector<std::size_t> graph_ids;  ///< per node
  std::vector<bool> trivial_node;      ///< per node: carries the `__image__` label
  std::size_t num_graphs = 0;

  std::size_t num_nodes() const noexcept { return node_labels.size(); }
  std::size_t num_edges() const noexcept { return edge_labels.size(); }

  static BatchedGraph from_graphs(std::span<const SceneGraph* const> graphs,
                                  const Vocabulary& vocab);
  static BatchedGraph from_graphs(std::span<const SceneGraph> graphs, const Vocabulary& vocab);
};

struct GraphStates {
  Var nodes;  ///< (num_nodes, width)
  Var edges;  ///< (num_edges, width)
};

/// Gathers label embeddings. Train mode binds the tables as trainable
/// parameters; Eval mode reads them without gradients.
GraphStates embed_inputs(Tape& tape, const BatchedGraph& batch, GcnModel& model, Mode mode);
GraphStates embed_inputs(Tape& tape, const BatchedGraph& batch, const GcnModel& model);

/// One convolution: messages along every edge, mean over the messages each node
/// receives (as source and as target), node MLP and row normalization.
GraphStates layer_forward(Tape& tape, const GraphStates& states, const BatchedGraph& batch,
                          GcnLayerParams& layer, Mode mode);
GraphStates layer_forward(Tape& tape, const GraphStates& states, const BatchedGraph& batch,
                          const GcnLayerParams& layer);

/// Per-graph mean of node states followed (optionally) by row normalization.
Var pool(Var node_states, std::span<const std::size_t> graph_ids, std::size_t num_graphs,
         bool renormalize = true);

/// Full network on augmented graphs: one embedding row per graph.
Var forward(Tape& tape, const BatchedGraph& batch, GcnModel& model, Mode mode);
Var forward(Tape& tape, const BatchedGraph& batch, const GcnModel& model);

/// Eval-mode embeddings of augmented graphs, computed in chunks of
/// `chunk_size` graphs. Returns (graphs.size(), state_dim).
Tensor embed_graphs(const GcnModel& model, std::span<const SceneGraph> graphs,
                    std::size_t chunk_size = 64);

}  // namespace sgembed

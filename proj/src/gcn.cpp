#include "sgembed/gcn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <random>
#include <type_traits>

#include "sgembed/error.hpp"

namespace sgembed {

namespace {

Linear make_linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Linear layer{Tensor(Shape{in, out}), Tensor(Shape{out})};
  for (double& w : layer.weight.data()) w = dist(rng);
  layer.weight.set_requires_grad(true);
  layer.bias.set_requires_grad(true);
  return layer;
}

BatchNorm make_batchnorm(std::size_t features) {
  BatchNorm bn{Tensor(Shape{features}, 1.0), Tensor(Shape{features}, 0.0),
               BatchNormStats(features)};
  bn.gamma.set_requires_grad(true);
  bn.beta.set_requires_grad(true);
  return bn;
}

// Binds a tensor to the tape: trainable in Train mode, read-only otherwise.
template <class T>
Var bind(Tape& tape, T& tensor, Mode mode) {
  if constexpr (std::is_const_v<T>) {
    return tape.input(tensor);
  } else {
    return mode == Mode::kTrain ? tape.parameter(tensor) : tape.input(std::as_const(tensor));
  }
}

template <class L>
Var apply_linear(Tape& tape, Var x, L& layer, Mode mode) {
  return ops::add(ops::matmul(x, bind(tape, layer.weight, mode)), bind(tape, layer.bias, mode));
}

template <class B>
Var apply_batchnorm(Tape& tape, Var x, B& bn, Mode mode) {
  Var gamma = bind(tape, bn.gamma, mode);
  Var beta = bind(tape, bn.beta, mode);
  if constexpr (std::is_const_v<B>) {
    return ops::batchnorm(x, gamma, beta, bn.stats);
  } else {
    return ops::batchnorm(x, gamma, beta, bn.stats, mode);
  }
}

template <class M>
GraphStates embed_inputs_impl(Tape& tape, const BatchedGraph& batch, M& model, Mode mode) {
  Var objects = bind(tape, model.object_table, mode);
  Var relations = bind(tape, model.relationship_table, mode);
  return GraphStates{ops::gather_rows(objects, batch.node_labels),
                     ops::gather_rows(relations, batch.edge_labels)};
}

template <class P>
GraphStates layer_forward_impl(Tape& tape, const GraphStates& states, const BatchedGraph& batch,
                               P& layer, Mode mode) {
  const std::size_t in_width = states.nodes.value().cols();
  if (layer.trunk.weight.rows() != 3 * in_width || states.edges.value().cols() != in_width) {
    throw DimensionError("layer_forward: layer expects input width " +
                         std::to_string(layer.trunk.weight.rows() / 3) + ", got node width " +
                         std::to_string(in_width) + " and edge width " +
                         std::to_string(states.edges.value().cols()));
  }
  Var src = ops::gather_rows(states.nodes, batch.edge_source);
  Var tgt = ops::gather_rows(states.nodes, batch.edge_target);
  const Var triple[] = {src, states.edges, tgt};
  Var joint = ops::concat(triple, 1);
  Var hidden = ops::relu(apply_batchnorm(tape, apply_linear(tape, joint, layer.trunk, mode),
                                         layer.trunk_norm, mode));
  Var to_source = apply_linear(tape, hidden, layer.head_source, mode);
  Var to_target = apply_linear(tape, hidden, layer.head_target, mode);
  Var new_edges = apply_linear(tape, hidden, layer.head_edge, mode);

  // Every edge delivers one message to its source and one to its target.
  std::vector<std::size_t> receivers(batch.edge_source);
  receivers.insert(receivers.end(), batch.edge_target.begin(), batch.edge_target.end());
  const Var messages[] = {to_source, to_target};
  Var pooled = ops::segment_mean(ops::concat(messages, 0), receivers, batch.num_nodes(),
                                 EmptySegment::kZero);

  Var node_hidden = ops::relu(apply_batchnorm(
      tape, apply_linear(tape, pooled, layer.node_hidden, mode), layer.node_norm, mode));
  Var new_nodes = ops::rowwise_l2_normalize(apply_linear(tape, node_hidden, layer.node_out, mode));
  return GraphStates{new_nodes, new_edges};
}

template <class M>
Var forward_impl(Tape& tape, const BatchedGraph& batch, M& model, Mode mode) {
  for (std::size_t g = 0, node = 0; g < batch.num_graphs; ++g) {
    std::size_t trivial = 0;
    for (; node < batch.num_nodes() && batch.graph_ids[node] == g; ++node) {
      trivial += batch.trivial_node[node] ? 1 : 0;
    }
    if (trivial != 1) {
      throw Error(ErrorKind::kInvalidArgument,
                  "forward: graph " + std::to_string(g) + " of the batch is not augmented");
    }
  }
  GraphStates states = embed_inputs_impl(tape, batch, model, mode);
  for (auto& layer : model.layers) states = layer_forward_impl(tape, states, batch, layer, mode);

  const bool renorm = model.config.renormalize_embedding;
  if (model.config.pool_include_trivial) {
    return pool(states.nodes, batch.graph_ids, batch.num_graphs, renorm);
  }
  std::vector<std::size_t> rows, ids;
  for (std::size_t u = 0; u < batch.num_nodes(); ++u) {
    if (batch.trivial_node[u]) continue;
    rows.push_back(u);
    ids.push_back(batch.graph_ids[u]);
  }
  return pool(ops::gather_rows(states.nodes, rows), ids, batch.num_graphs, renorm);
}

void append_named(std::vector<NamedParameter>& out, const std::string& prefix, Linear& layer) {
  out.push_back({prefix + ".weight", &layer.weight});
  out.push_back({prefix + ".bias", &layer.bias});
}

void append_named(std::vector<NamedParameter>& out, const std::string& prefix, BatchNorm& bn) {
  out.push_back({prefix + ".gamma", &bn.gamma});
  out.push_back({prefix + ".beta", &bn.beta});
}

}  // namespace

void ModelConfig::validate() const {
  if (embed_dim == 0 || message_dim == 0 || state_dim == 0 || num_layers == 0 ||
      mlp_hidden == 0) {
    throw Error(ErrorKind::kInvalidArgument, "model dimensions and layer count must be positive");
  }
}

GcnModel GcnModel::initialize(const ModelConfig& config, Vocabulary vocab, std::uint64_t seed) {
  config.validate();
  if (!vocab.has_reserved_labels()) {
    throw Error(ErrorKind::kInvalidArgument, "model vocabulary lacks the reserved labels");
  }
  std::mt19937_64 rng(seed);
  GcnModel model;
  model.config = config;
  model.vocab = std::move(vocab);
  const double table_std = 1.0 / std::sqrt(static_cast<double>(config.embed_dim));
  std::normal_distribution<double> normal(0.0, table_std);
  model.object_table = Tensor(Shape{model.vocab.object_count(), config.embed_dim});
  model.relationship_table = Tensor(Shape{model.vocab.relationship_count(), config.embed_dim});
  for (double& v : model.object_table.data()) v = normal(rng);
  for (double& v : model.relationship_table.data()) v = normal(rng);
  model.object_table.set_requires_grad(true);
  model.relationship_table.set_requires_grad(true);

  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const std::size_t in = l == 0 ? config.embed_dim : config.state_dim;
    GcnLayerParams layer{
        make_linear(3 * in, config.mlp_hidden, rng),
        make_batchnorm(config.mlp_hidden),
        make_linear(config.mlp_hidden, config.message_dim, rng),
        make_linear(config.mlp_hidden, config.message_dim, rng),
        make_linear(config.mlp_hidden, config.state_dim, rng),
        make_linear(config.message_dim, config.mlp_hidden, rng),
        make_batchnorm(config.mlp_hidden),
        make_linear(config.mlp_hidden, config.state_dim, rng),
    };
    model.layers.push_back(std::move(layer));
  }
  return model;
}

std::vector<NamedParameter> GcnModel::parameters() {
  std::vector<NamedParameter> out;
  out.push_back({"object_table", &object_table});
  out.push_back({"relationship_table", &relationship_table});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    auto& layer = layers[l];
    append_named(out, p + "trunk", layer.trunk);
    append_named(out, p + "trunk_norm", layer.trunk_norm);
    append_named(out, p + "head_source", layer.head_source);
    append_named(out, p + "head_target", layer.head_target);
    append_named(out, p + "head_edge", layer.head_edge);
    append_named(out, p + "node_hidden", layer.node_hidden);
    append_named(out, p + "node_norm", layer.node_norm);
    append_named(out, p + "node_out", layer.node_out);
  }
  return out;
}

std::vector<std::pair<std::string, BatchNormStats*>> GcnModel::batchnorm_stats() {
  std::vector<std::pair<std::string, BatchNormStats*>> out;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    out.emplace_back(p + "trunk_norm", &layers[l].trunk_norm.stats);
    out.emplace_back(p + "node_norm", &layers[l].node_norm.stats);
  }
  return out;
}

std::vector<std::pair<std::string, const BatchNormStats*>> GcnModel::batchnorm_stats() const {
  std::vector<std::pair<std::string, const BatchNormStats*>> out;
  for (auto& [name, stats] : const_cast<GcnModel*>(this)->batchnorm_stats()) {
    out.emplace_back(name, stats);
  }
  return out;
}

bool GcnModel::same_as(const GcnModel& other) const {
  if (!(config == other.config) || !(vocab == other.vocab)) return false;
  auto mine = const_cast<GcnModel*>(this)->parameters();
  auto theirs = const_cast<GcnModel&>(other).parameters();
  if (mine.size() != theirs.size()) return false;
  for (std::size_t k = 0; k < mine.size(); ++k) {
    if (mine[k].name != theirs[k].name || !mine[k].tensor->same_values(*theirs[k].tensor)) {
      return false;
    }
  }
  auto s1 = batchnorm_stats();
  auto s2 = other.batchnorm_stats();
  for (std::size_t k = 0; k < s1.size(); ++k) {
    if (s1[k].second->running_mean != s2[k].second->running_mean ||
        s1[k].second->running_var != s2[k].second->running_var) {
      return false;
    }
  }
  return true;
}

std::size_t load_pretrained_vectors(GcnModel& model, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read pretrained vectors " + path.string());
  const std::size_t d = model.config.embed_dim;
  std::size_t written = 0, line_no = 0;
  std::string line;
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string label;
    if (!(fields >> label) || label[0] == '#') continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    values.clear();
    std::string token;
    while (fields >> token) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(token, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != token.size() || !std::isfinite(v)) {
        throw ParseError(where, "bad number \"" + token + "\"");
      }
      values.push_back(v);
    }
    if (values.size() != d) {
      throw DimensionError(where + ": expected " + std::to_string(d) + " values, got " +
                           std::to_string(values.size()));
    }
    auto copy_row = [&](Tensor& table, std::size_t row) {
      std::copy(values.begin(), values.end(), table.data().begin() + row * d);
      ++written;
    };
    if (auto i = model.vocab.object_index(label)) copy_row(model.object_table, *i);
    if (auto i = model.vocab.relationship_index(label)) copy_row(model.relationship_table, *i);
  }
  return written;
}

BatchedGraph BatchedGraph::from_graphs(std::span<const SceneGraph* const> graphs,
                                       const Vocabulary& vocab) {
  BatchedGraph batch;
  batch.num_graphs = graphs.size();
  const auto image = vocab.object_index(kImageLabel);
  std::size_t offset = 0;
  for (std::size_t g = 0; g < graphs.size(); ++g) {
    const SceneGraph& graph = *graphs[g];
    if (graph.nodes.empty()) {
      throw Error(ErrorKind::kInvalidArgument, "graph " + graph.image_id + " has no nodes");
    }
    graph.validate(vocab);
    for (std::size_t label : graph.nodes) {
      batch.node_labels.push_back(label);
      batch.graph_ids.push_back(g);
      batch.trivial_node.push_back(image && label == *image);
    }
    for (const Edge& e : graph.edges) {
      batch.edge_labels.push_back(e.predicate);
      batch.edge_source.push_back(offset + e.source);
      batch.edge_target.push_back(offset + e.target);
    }
    offset += graph.nodes.size();
  }
  return batch;
}

BatchedGraph BatchedGraph::from_graphs(std::span<const SceneGraph> graphs,
                                       const Vocabulary& vocab) {
  std::vector<const SceneGraph*> ptrs;
  ptrs.reserve(graphs.size());
  for (const auto& g : graphs) ptrs.push_back(&g);
  return from_graphs(std::span<const SceneGraph* const>(ptrs), vocab);
}

GraphStates embed_inputs(Tape& tape, const BatchedGraph& batch, GcnModel& model, Mode mode) {
  return embed_inputs_impl(tape, batch, model, mode);
}

GraphStates embed_inputs(Tape& tape, const BatchedGraph& batch, const GcnModel& model) {
  return embed_inputs_impl(tape, batch, model, Mode::kEval);
}

GraphStates layer_forward(Tape& tape, const GraphStates& states, const BatchedGraph& batch,
                          GcnLayerParams& layer, Mode mode) {
  return layer_forward_impl(tape, states, batch, layer, mode);
}

GraphStates layer_forward(Tape& tape, const GraphStates& states, const BatchedGraph& batch,
                          const GcnLayerParams& layer) {
  return layer_forward_impl(tape, states, batch, layer, Mode::kEval);
}

Var pool(Var node_states, std::span<const std::size_t> graph_ids, std::size_t num_graphs,
         bool renormalize) {
  Var mean = ops::segment_mean(node_states, graph_ids, num_graphs, EmptySegment::kError);
  return renormalize ? ops::rowwise_l2_normalize(mean) : mean;
}

Var forward(Tape& tape, const BatchedGraph& batch, GcnModel& model, Mode mode) {
  return forward_impl(tape, batch, model, mode);
}

Var forward(Tape& tape, const BatchedGraph& batch, const GcnModel& model) {
  return forward_impl(tape, batch, model, Mode::kEval);
}

Tensor embed_graphs(const GcnModel& model, std::span<const SceneGraph> graphs,
                    std::size_t chunk_size) {
  if (chunk_size == 0) chunk_size = graphs.size();
  const std::size_t width = model.config.state_dim;
  Tensor out(Shape{graphs.size(), width});
  for (std::size_t start = 0; start < graphs.size(); start += chunk_size) {
    const std::size_t count = std::min(chunk_size, graphs.size() - start);
    const auto batch = BatchedGraph::from_graphs(graphs.subspan(start, count), model.vocab);
    Tape tape;
    const Tensor& emb = forward(tape, batch, model).value();
    std::copy(emb.data().begin(), emb.data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(start * width));
  }
  return out;
}

}  // namespace sgembed

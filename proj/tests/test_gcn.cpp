#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "sgembed/error.hpp"
#include "sgembed/gcn.hpp"
#include "sgembed/objectives.hpp"
#include "support/fixtures.hpp"
#include "support/scratch.hpp"
#include "support/gcn_cases.hpp"
#include "support/gradcheck.hpp"

using namespace sgembed;
using namespace sgembed::testing;

namespace {

using Matrix = std::vector<std::vector<double>>;

Matrix to_matrix(const Tensor& t) {
  Matrix m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.at(r, c);
  return m;
}

// Plain-loop evaluation of the Eval-mode layer, written independently of the
// tape ops.
Matrix linear(const Matrix& x, const Linear& l) {
  const std::size_t out = l.weight.cols();
  Matrix y(x.size(), std::vector<double>(out));
  for (std::size_t r = 0; r < x.size(); ++r)
    for (std::size_t j = 0; j < out; ++j) {
      double s = l.bias[j];
      for (std::size_t k = 0; k < x[r].size(); ++k) s += x[r][k] * l.weight.at(k, j);
      y[r][j] = s;
    }
  return y;
}

Matrix bn_relu(Matrix x, const BatchNorm& bn) {
  for (auto& row : x)
    for (std::size_t j = 0; j < row.size(); ++j) {
      const double z = (row[j] - bn.stats.running_mean[j]) /
                       std::sqrt(bn.stats.running_var[j] + bn.stats.eps);
      row[j] = std::max(0.0, bn.gamma[j] * z + bn.beta[j]);
    }
  return x;
}

void normalize(Matrix& x) {
  for (auto& row : x) {
    double n = 0.0;
    for (double v : row) n += v * v;
    n = std::sqrt(n);
    if (n < kDegenerateNorm) continue;
    for (double& v : row) v /= n;
  }
}

std::pair<Matrix, Matrix> layer_oracle(const Matrix& nodes, const Matrix& edges,
                                       const BatchedGraph& b, const GcnLayerParams& p) {
  Matrix joint;
  for (std::size_t e = 0; e < b.num_edges(); ++e) {
    std::vector<double> row = nodes[b.edge_source[e]];
    row.insert(row.end(), edges[e].begin(), edges[e].end());
    row.insert(row.end(), nodes[b.edge_target[e]].begin(), nodes[b.edge_target[e]].end());
    joint.push_back(row);
  }
  const Matrix hidden = bn_relu(linear(joint, p.trunk), p.trunk_norm);
  const Matrix ms = linear(hidden, p.head_source);
  const Matrix mt = linear(hidden, p.head_target);
  const std::size_t h = p.head_source.weight.cols();
  Matrix gamma(b.num_nodes(), std::vector<double>(h, 0.0));
  std::vector<double> count(b.num_nodes(), 0.0);
  for (std::size_t e = 0; e < b.num_edges(); ++e) {
    for (std::size_t j = 0; j < h; ++j) {
      gamma[b.edge_source[e]][j] += ms[e][j];
      gamma[b.edge_target[e]][j] += mt[e][j];
    }
    count[b.edge_source[e]] += 1.0;
    count[b.edge_target[e]] += 1.0;
  }
  for (std::size_t u = 0; u < b.num_nodes(); ++u)
    if (count[u] > 0)
      for (double& v : gamma[u]) v /= count[u];
  Matrix out = linear(bn_relu(linear(gamma, p.node_hidden), p.node_norm), p.node_out);
  normalize(out);
  return {out, linear(hidden, p.head_edge)};
}

// Gives batch-norm layers non-trivial parameters and running statistics.
struct ModelFixture {
  Vocabulary vocab = make_vocab(7, 4);
  GcnModel model;
  explicit ModelFixture(const ModelConfig& config = small_config(), std::uint64_t seed = 5)
      : model(GcnModel::initialize(config, vocab, seed)) {
    perturb_batchnorm(model, seed + 1);
  }
};

}  // namespace

TEST(ModelConfig, RejectsZeroWidths) {
  ModelConfig c = tiny_config();
  c.message_dim = 0;
  EXPECT_THROW(c.validate(), Error);
  c = tiny_config();
  c.num_layers = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Initialize, ShapesAndDeterminism) {
  const Vocabulary v = make_vocab(5, 3);
  const ModelConfig c = small_config();
  GcnModel m = GcnModel::initialize(c, v, 1);
  EXPECT_EQ(m.object_table.shape(), (Shape{v.object_count(), c.embed_dim}));
  EXPECT_EQ(m.relationship_table.shape(), (Shape{v.relationship_count(), c.embed_dim}));
  ASSERT_EQ(m.layers.size(), c.num_layers);
  EXPECT_EQ(m.layers[0].trunk.weight.shape(), (Shape{3 * c.embed_dim, c.mlp_hidden}));
  EXPECT_EQ(m.layers[1].trunk.weight.shape(), (Shape{3 * c.state_dim, c.mlp_hidden}));
  EXPECT_EQ(m.layers[0].head_source.weight.shape(), (Shape{c.mlp_hidden, c.message_dim}));
  EXPECT_EQ(m.layers[0].head_edge.weight.shape(), (Shape{c.mlp_hidden, c.state_dim}));
  EXPECT_EQ(m.layers[0].node_out.weight.shape(), (Shape{c.mlp_hidden, c.state_dim}));
  EXPECT_TRUE(m.same_as(GcnModel::initialize(c, v, 1)));
  EXPECT_FALSE(m.same_as(GcnModel::initialize(c, v, 2)));
  for (const auto& p : m.parameters()) EXPECT_TRUE(p.tensor->requires_grad()) << p.name;
}

TEST(Initialize, TableScaleAndKaimingBound) {
  const Vocabulary v = make_vocab(400, 3);
  ModelConfig c = small_config();
  c.embed_dim = 64;
  const GcnModel m = GcnModel::initialize(c, v, 3);
  double ss = 0.0;
  for (double x : m.object_table.data()) ss += x * x;
  const double sd = std::sqrt(ss / static_cast<double>(m.object_table.size()));
  EXPECT_NEAR(sd, 1.0 / std::sqrt(64.0), 0.01);
  const double bound = std::sqrt(6.0 / (3.0 * 64.0));
  for (double w : m.layers[0].trunk.weight.data()) EXPECT_LE(std::abs(w), bound);
}

TEST(EmbedInputs, GathersTableRows) {
  ModelFixture f;
  SceneGraph one;
  one.nodes = {0};
  SceneGraph twin;
  twin.nodes = {3, 3};
  twin.edges = {Edge{0, 1, 1}};
  const std::vector<SceneGraph> graphs = {one, twin};
  const auto batch = BatchedGraph::from_graphs(graphs, f.vocab);
  Tape tape;
  const auto states = embed_inputs(tape, batch, std::as_const(f.model));
  const Tensor& nodes = states.nodes.value();
  ASSERT_EQ(nodes.rows(), 3u);
  const std::size_t d = f.model.config.embed_dim;
  for (std::size_t j = 0; j < d; ++j) {
    EXPECT_EQ(nodes.at(0, j), f.model.object_table.at(0, j));
    EXPECT_EQ(nodes.at(1, j), nodes.at(2, j));
    EXPECT_EQ(states.edges.value().at(0, j), f.model.relationship_table.at(1, j));
  }
}

TEST(EmbedInputs, BatchRowsFollowGraphOrder) {
  ModelFixture f;
  std::mt19937_64 rng(2);
  const std::vector<SceneGraph> graphs = {random_graph("a", f.vocab, 2, 0, rng),
                                          random_graph("b", f.vocab, 3, 1, rng)};
  const auto batch = BatchedGraph::from_graphs(graphs, f.vocab);
  EXPECT_EQ(batch.graph_ids, (std::vector<std::size_t>{0, 0, 1, 1, 1}));
  Tape tape;
  const auto states = embed_inputs(tape, batch, std::as_const(f.model));
  EXPECT_EQ(states.nodes.value().rows(), 5u);
  EXPECT_EQ(batch.edge_source[1], 2u);  // second graph's edges are offset
}

TEST(BatchedGraph, RejectsBadLabels) {
  ModelFixture f;
  SceneGraph g;
  g.nodes = {99};
  const std::vector<SceneGraph> graphs = {g};
  EXPECT_THROW(BatchedGraph::from_graphs(graphs, f.vocab), Error);
}

TEST(LayerForward, MatchesLoopOracle) {
  ModelFixture f;
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<SceneGraph> graphs;
    for (int g = 0; g < 3; ++g) {
      graphs.push_back(augment_trivial(random_graph("g", f.vocab, 2 + (trial + g) % 5, trial % 3, rng), f.vocab));
    }
    const auto batch = BatchedGraph::from_graphs(graphs, f.vocab);
    Tape tape;
    const auto in = embed_inputs(tape, batch, std::as_const(f.model));
    const auto out = layer_forward(tape, in, batch, std::as_const(f.model).layers[0]);
    const auto [nodes, edges] = layer_oracle(to_matrix(in.nodes.value()), to_matrix(in.edges.value()),
                                             batch, f.model.layers[0]);
    const Matrix got_nodes = to_matrix(out.nodes.value());
    const Matrix got_edges = to_matrix(out.edges.value());
    for (std::size_t r = 0; r < nodes.size(); ++r)
      for (std::size_t c = 0; c < nodes[r].size(); ++c) EXPECT_NEAR(got_nodes[r][c], nodes[r][c], 1e-12);
    for (std::size_t r = 0; r < edges.size(); ++r)
      for (std::size_t c = 0; c < edges[r].size(); ++c) EXPECT_NEAR(got_edges[r][c], edges[r][c], 1e-12);
  }
}

TEST(LayerForward, SingleEdgeSourceGetsItsMessage) {
  // Node u of u -> v receives exactly one message, so its state is the node
  // MLP applied to m^s_uv itself.
  ModelFixture f;
  SceneGraph g;
  g.nodes = {1, 2};
  g.edges = {Edge{0, 0, 1}};
  const std::vector<SceneGraph> graphs = {g};
  const auto batch = BatchedGraph::from_graphs(graphs, f.vocab);
  const GcnLayerParams& p = f.model.layers[0];
  Tape tape;
  const auto in = embed_inputs(tape, batch, std::as_const(f.model));
  const auto out = layer_forward(tape, in, batch, p);

  std::vector<double> joint;
  for (const Tensor* t : {&in.nodes.value(), &in.edges.value()}) {
    const std::size_t d = t->cols();
    joint.insert(joint.end(), t->data().begin(), t->data().begin() + d);
  }
  const Tensor& nodes = in.nodes.value();
  joint.insert(joint.end(), nodes.data().begin() + nodes.cols(), nodes.data().begin() + 2 * nodes.cols());
  const Matrix message = linear(bn_relu(linear({joint}, p.trunk), p.trunk_norm), p.head_source);
  Matrix expected = linear(bn_relu(linear(message, p.node_hidden), p.node_norm), p.node_out);
  normalize(expected);
  for (std::size_t c = 0; c < expected[0].size(); ++c) {
    EXPECT_NEAR(out.nodes.value().at(0, c), expected[0][c], 1e-12);
  }
}

TEST(LayerForward, IdenticalMessagesAverageToThemselves) {
  // Two parallel edges u -> v with the same labels send u the same message
  // twice; the result equals the single-edge graph's state for u.
  ModelFixture f;
  SceneGraph single;
  single.nodes = {1, 2};
  single.edges = {Edge{0, 0, 1}};
  SceneGraph twice = single;
  twice.edges.push_back(Edge{0, 0, 1});
  const std::vector<SceneGraph> a = {single}, b = {twice};
  const auto ba = BatchedGraph::from_graphs(a, f.vocab);
  const auto bb = BatchedGraph::from_graphs(b, f.vocab);
  Tape tape;
  const auto oa = layer_forward(tape, embed_inputs(tape, ba, std::as_const(f.model)), ba,
                                std::as_const(f.model).layers[0]);
  const auto ob = layer_forward(tape, embed_inputs(tape, bb, std::as_const(f.model)), bb,
                                std::as_const(f.model).layers[0]);
  EXPECT_LT(max_abs_diff(oa.nodes.value(), ob.nodes.value()), 1e-12);
}

TEST(LayerForward, WidthMismatchThrows) {
  ModelFixture f;
  SceneGraph g;
  g.nodes = {1, 2};
  g.edges = {Edge{0, 0, 1}};
  const std::vector<SceneGraph> graphs = {g};
  const auto batch = BatchedGraph::from_graphs(graphs, f.vocab);
  Tape tape;
  const auto in = embed_inputs(tape, batch, std::as_const(f.model));
  // Layer 1 expects state_dim inputs; the raw embeddings are embed_dim wide.
  ModelConfig c = small_config();
  c.state_dim = c.embed_dim + 1;
  const GcnModel other = GcnModel::initialize(c, f.vocab, 1);
  EXPECT_THROW(layer_forward(tape, in, batch, other.layers[1]), DimensionError);
}

TEST(Pool, SingleNodeIsUnchanged) {
  Tape tape;
  Tensor states(Shape{1, 3}, std::vector<double>{0.6, 0.0, 0.8});
  const std::vector<std::size_t> ids = {0};
  const Var out = pool(tape.input(states), ids, 1);
  EXPECT_TRUE(out.value().same_values(Tensor(Shape{1, 3}, std::vector<double>{0.6, 0.0, 0.8})));
}

TEST(Pool, OppositeStatesGiveDegenerateZeroRow) {
  Tape tape;
  Tensor states(Shape{2, 2}, std::vector<double>{0.6, 0.8, -0.6, -0.8});
  const std::vector<std::size_t> ids = {0, 0};
  const Var out = pool(tape.input(states), ids, 1);
  EXPECT_EQ(out.value()[0], 0.0);
  EXPECT_EQ(out.value()[1], 0.0);
  EXPECT_EQ(tape.degenerate_rows(), 1u);
}

TEST(Pool, EmptyGraphThrows) {
  Tape tape;
  Tensor states(Shape{1, 2}, 1.0);
  const std::vector<std::size_t> ids = {0};
  EXPECT_THROW(pool(tape.input(states), ids, 2), Error);
}

TEST(Forward, OutputsHaveUnitNorm) {
  ModelFixture f;
  std::mt19937_64 rng(4);
  std::vector<SceneGraph> graphs;
  for (int g = 0; g < 12; ++g) graphs.push_back(augment_trivial(random_graph("g", f.vocab, 1 + g % 6, g % 4, rng), f.vocab));
  const Tensor emb = embed_graphs(f.model, graphs);
  for (std::size_t r = 0; r < emb.rows(); ++r) {
    double n = 0.0;
    for (std::size_t c = 0; c < emb.cols(); ++c) n += emb.at(r, c) * emb.at(r, c);
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-12);
  }
}

TEST(Forward, RequiresAugmentedGraphs) {
  ModelFixture f;
  std::mt19937_64 rng(4);
  const std::vector<SceneGraph> graphs = {random_graph("g", f.vocab, 3, 0, rng)};
  EXPECT_THROW(embed_graphs(f.model, graphs), Error);
}

TEST(Forward, NodePermutationInvariance) {
  ModelFixture f;
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const SceneGraph g = augment_trivial(random_graph("g", f.vocab, 2 + trial % 7, trial % 4, rng), f.vocab);
    std::vector<std::size_t> perm(g.nodes.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    SceneGraph h = permuted(g, perm);
    std::shuffle(h.edges.begin(), h.edges.end(), rng);
    const std::vector<SceneGraph> a = {g}, b = {h};
    EXPECT_LT(max_abs_diff(embed_graphs(f.model, a), embed_graphs(f.model, b)), 1e-9);
  }
}

TEST(Forward, BatchMatchesSingleGraphs) {
  ModelFixture f;
  std::mt19937_64 rng(23);
  std::vector<SceneGraph> graphs;
  for (int g = 0; g < 9; ++g) graphs.push_back(augment_trivial(random_graph("g", f.vocab, 1 + g % 5, g % 3, rng), f.vocab));
  const Tensor batched = embed_graphs(f.model, graphs, graphs.size());
  const std::size_t D = batched.cols();
  for (std::size_t g = 0; g < graphs.size(); ++g) {
    const Tensor single = embed_graphs(f.model, std::span(graphs).subspan(g, 1));
    for (std::size_t c = 0; c < D; ++c) EXPECT_NEAR(batched.at(g, c), single[c], 1e-9);
  }
}

TEST(Forward, BatchOfOneMatchesUnbatchedForward) {
  ModelFixture f;
  std::mt19937_64 rng(29);
  const std::vector<SceneGraph> graphs = {augment_trivial(random_graph("g", f.vocab, 5, 2, rng), f.vocab)};
  const auto batch = BatchedGraph::from_graphs(graphs, f.vocab);
  Tape tape;
  const Tensor& direct = forward(tape, batch, std::as_const(f.model)).value();
  EXPECT_LT(max_abs_diff(direct, embed_graphs(f.model, graphs)), 1e-12);
}

TEST(Forward, IsomorphicGraphsEmbedIdentically) {
  ModelFixture f;
  std::mt19937_64 rng(31);
  SceneGraph a = augment_trivial(random_graph("a", f.vocab, 6, 3, rng), f.vocab);
  SceneGraph b = a;
  b.image_id = "b";
  const std::vector<SceneGraph> graphs = {a, b};
  const Tensor emb = embed_graphs(f.model, graphs);
  for (std::size_t c = 0; c < emb.cols(); ++c) EXPECT_EQ(emb.at(0, c), emb.at(1, c));
}

TEST(Forward, PoolingFlagsChangeTheEmbedding) {
  ModelConfig c = small_config();
  ModelFixture base(c);
  c.pool_include_trivial = false;
  ModelFixture exclude(c);
  c.pool_include_trivial = true;
  c.renormalize_embedding = false;
  ModelFixture raw(c);
  std::mt19937_64 rng(37);
  const std::vector<SceneGraph> graphs = {augment_trivial(random_graph("g", base.vocab, 4, 1, rng), base.vocab)};
  const Tensor e_base = embed_graphs(base.model, graphs);
  EXPECT_GT(max_abs_diff(e_base, embed_graphs(exclude.model, graphs)), 1e-6);
  const Tensor e_raw = embed_graphs(raw.model, graphs);
  double n = 0.0;
  for (double v : e_raw.data()) n += v * v;
  EXPECT_LT(std::sqrt(n), 1.0);  // mean of unit rows that are not all equal
  EXPECT_GT(max_abs_diff(e_base, e_raw), 1e-6);
}

TEST(Forward, TrainModeUpdatesRunningStatistics) {
  ModelFixture f;
  std::mt19937_64 rng(41);
  const std::vector<SceneGraph> graphs = {augment_trivial(random_graph("g", f.vocab, 4, 1, rng), f.vocab)};
  const auto batch = BatchedGraph::from_graphs(graphs, f.vocab);
  const auto before = f.model.layers[0].trunk_norm.stats.running_mean;
  Tape tape;
  forward(tape, batch, f.model, Mode::kTrain);
  EXPECT_NE(before, f.model.layers[0].trunk_norm.stats.running_mean);
  GcnModel copy = f.model;
  Tape eval;
  forward(eval, batch, copy, Mode::kEval);
  EXPECT_TRUE(copy.same_as(f.model));
}

TEST(PretrainedVectors, OverwritesMatchingRows) {
  ScratchDir dir;
  ModelConfig c = tiny_config();
  const Vocabulary v({"cat", "near"}, {"near", "on"});
  GcnModel m = GcnModel::initialize(c, v, 1);
  write_text(dir / "vec.txt", "# comment\ncat 1 2 3\n\nnear 4 5 6\nzebra 7 8 9\n");
  EXPECT_EQ(load_pretrained_vectors(m, dir / "vec.txt"), 3u);
  EXPECT_EQ(m.object_table.at(0, 2), 3.0);
  EXPECT_EQ(m.object_table.at(1, 0), 4.0);
  EXPECT_EQ(m.relationship_table.at(0, 1), 5.0);
  write_text(dir / "bad.txt", "cat 1 2\n");
  EXPECT_THROW(load_pretrained_vectors(m, dir / "bad.txt"), DimensionError);
  write_text(dir / "nan.txt", "cat 1 x 2\n");
  EXPECT_THROW(load_pretrained_vectors(m, dir / "nan.txt"), ParseError);
  EXPECT_THROW(load_pretrained_vectors(m, dir / "missing.txt"), IoError);
}

TEST(GcnGradient, TwoNodeGraphSumOfEmbedding) {
  const Vocabulary v = make_vocab(3, 2);
  GcnModel model = GcnModel::initialize(tiny_config(), v, 7);
  SceneGraph g;
  g.nodes = {0, 1};
  g.edges = {Edge{0, 0, 1}};
  const std::vector<SceneGraph> graphs = {augment_trivial(g, v)};
  const auto batch = BatchedGraph::from_graphs(graphs, v);
  const auto stats = model.batchnorm_stats();
  std::vector<BatchNormStats> saved;
  for (auto& s : stats) saved.push_back(*s.second);
  const auto result = check_gradients(all_parameters(model, 1), [&](Tape& tape) {
    // Train-mode forwards update running statistics; restore them so every
    // evaluation sees the same state.
    for (std::size_t i = 0; i < stats.size(); ++i) *stats[i].second = saved[i];
    return ops::sum(forward(tape, batch, model, Mode::kTrain));
  });
  EXPECT_LT(result.max_rel_error, 1e-4) << result.worst;
  EXPECT_GT(result.checked, 100u);
}

class GcnLossGradient : public ::testing::TestWithParam<LossKind> {};

TEST_P(GcnLossGradient, CompositeMatchesFiniteDifferences) {
  for (std::uint64_t trial = 0; trial < 3; ++trial) {
    const auto r = gcn_loss_gradcheck(GetParam(), trial);
    EXPECT_LT(r.max_rel_error, 1e-4) << "trial " << trial << ": " << r.worst;
  }
}

INSTANTIATE_TEST_SUITE_P(AllLosses, GcnLossGradient,
                         ::testing::Values(LossKind::kRanking, LossKind::kTriplet, LossKind::kInfoNce),
                         [](const auto& info) { return std::string(loss_name(info.param)); });

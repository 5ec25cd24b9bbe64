#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "sgembed/dataset.hpp"
#include "sgembed/gcn.hpp"
#include "sgembed/scene_graph.hpp"

namespace sgembed::testing {

inline Vocabulary make_vocab(std::size_t objects, std::size_t relationships) {
  std::vector<std::string> o, r;
  for (std::size_t i = 0; i < objects; ++i) o.push_back("o" + std::to_string(i));
  for (std::size_t i = 0; i < relationships; ++i) r.push_back("r" + std::to_string(i));
  return Vocabulary(o, r);
}

/// Random graph over the non-reserved labels; every node touches an edge.
inline SceneGraph random_graph(const std::string& id, const Vocabulary& vocab, std::size_t nodes,
                               std::size_t extra_edges, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> label(0, vocab.object_count() - 2);
  std::uniform_int_distribution<std::size_t> pred(0, vocab.relationship_count() - 2);
  std::uniform_int_distribution<std::size_t> node(0, nodes - 1);
  SceneGraph g;
  g.image_id = id;
  for (std::size_t i = 0; i < nodes; ++i) g.nodes.push_back(label(rng));
  for (std::size_t i = 0; i + 1 < nodes; ++i) g.edges.push_back(Edge{i, pred(rng), i + 1});
  for (std::size_t e = 0; e < extra_edges; ++e) {
    std::size_t u = node(rng), v = node(rng);
    if (u == v) v = (u + 1) % nodes;
    g.edges.push_back(Edge{u, pred(rng), v});
  }
  return g;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline ModelConfig tiny_config() {
  ModelConfig c;
  c.embed_dim = 3;
  c.message_dim = 4;
  c.state_dim = 3;
  c.num_layers = 2;
  c.mlp_hidden = 4;
  return c;
}

inline ModelConfig small_config() {
  ModelConfig c;
  c.embed_dim = 8;
  c.message_dim = 12;
  c.state_dim = 8;
  c.num_layers = 2;
  c.mlp_hidden = 12;
  return c;
}

}  // namespace sgembed::testing

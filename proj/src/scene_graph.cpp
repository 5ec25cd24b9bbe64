#include "sgembed/scene_graph.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "sgembed/error.hpp"

namespace sgembed {

namespace {

void build_lookup(const std::vector<std::string>& labels,
                  std::unordered_map<std::string, std::size_t>& lookup, const char* kind) {
  lookup.clear();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!lookup.emplace(labels[i], i).second) {
      throw Error(ErrorKind::kInvalidArgument,
                  std::string("duplicate ") + kind + " label \"" + labels[i] + "\"");
    }
  }
}

std::optional<std::size_t> find(const std::unordered_map<std::string, std::size_t>& lookup,
                                 std::string_view label) {
  auto it = lookup.find(std::string(label));
  if (it == lookup.end()) return std::nullopt;
  return it->second;
}

void fnv1a(std::uint64_t& h, std::string_view bytes) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> objects, std::vector<std::string> relationships,
                       Reserved reserved)
    : objects_(std::move(objects)), relationships_(std::move(relationships)) {
  if (reserved == Reserved::kAppend) {
    if (std::find(objects_.begin(), objects_.end(), kImageLabel) == objects_.end()) {
      objects_.emplace_back(kImageLabel);
    }
    if (std::find(relationships_.begin(), relationships_.end(), kInImageLabel) ==
        relationships_.end()) {
      relationships_.emplace_back(kInImageLabel);
    }
  }
  build_lookup(objects_, object_lookup_, "object");
  build_lookup(relationships_, relationship_lookup_, "relationship");
}

std::optional<std::size_t> Vocabulary::object_index(std::string_view label) const {
  return find(object_lookup_, label);
}

std::optional<std::size_t> Vocabulary::relationship_index(std::string_view label) const {
  return find(relationship_lookup_, label);
}

bool Vocabulary::has_reserved_labels() const {
  return object_index(kImageLabel).has_value() && relationship_index(kInImageLabel).has_value();
}

std::size_t Vocabulary::image_label() const {
  auto idx = object_index(kImageLabel);
  if (!idx) throw Error(ErrorKind::kInvalidArgument, "vocabulary lacks the __image__ label");
  return *idx;
}

std::size_t Vocabulary::in_image_label() const {
  auto idx = relationship_index(kInImageLabel);
  if (!idx) throw Error(ErrorKind::kInvalidArgument, "vocabulary lacks the __in_image__ label");
  return *idx;
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  fnv1a(h, "objects");
  for (const auto& label : objects_) {
    fnv1a(h, "\x1f");
    fnv1a(h, label);
  }
  fnv1a(h, "\x1erelationships");
  for (const auto& label : relationships_) {
    fnv1a(h, "\x1f");
    fnv1a(h, label);
  }
  return h;
}

void SceneGraph::validate(const Vocabulary& vocab) const {
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i] >= vocab.object_count()) {
      throw Error(ErrorKind::kInvalidArgument, "graph " + image_id + ": node " +
                                                   std::to_string(i) + " has label index " +
                                                   std::to_string(nodes[i]) + " out of range");
    }
  }
  for (std::size_t k = 0; k < edges.size(); ++k) {
    const Edge& e = edges[k];
    if (e.source >= nodes.size() || e.target >= nodes.size()) {
      throw Error(ErrorKind::kInvalidArgument,
                  "graph " + image_id + ": edge " + std::to_string(k) + " endpoint out of range");
    }
    if (e.predicate >= vocab.relationship_count()) {
      throw Error(ErrorKind::kInvalidArgument, "graph " + image_id + ": edge " +
                                                   std::to_string(k) +
                                                   " predicate index out of range");
    }
  }
}

bool is_augmented(const SceneGraph& graph, const Vocabulary& vocab) {
  auto image = vocab.object_index(kImageLabel);
  return image && std::find(graph.nodes.begin(), graph.nodes.end(), *image) != graph.nodes.end();
}

SceneGraph augment_trivial(const SceneGraph& graph, const Vocabulary& vocab) {
  const std::size_t image = vocab.image_label();
  const std::size_t in_image = vocab.in_image_label();
  if (is_augmented(graph, vocab)) {
    throw Error(ErrorKind::kInvalidArgument,
                "graph " + graph.image_id + " already contains an __image__ node");
  }
  SceneGraph out = graph;
  const std::size_t hub = out.nodes.size();
  out.nodes.push_back(image);
  out.edges.reserve(graph.edges.size() + graph.nodes.size());
  for (std::size_t u = 0; u < hub; ++u) out.edges.push_back(Edge{u, in_image, hub});
  return out;
}

SceneGraph corrupt(const SceneGraph& graph, std::size_t num_edges_removed, std::uint64_t seed) {
  if (num_edges_removed == 0) return graph;

  std::vector<std::size_t> order(graph.edges.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t removed = std::min(num_edges_removed, graph.edges.size());
  std::vector<bool> keep_edge(graph.edges.size(), true);
  for (std::size_t k = 0; k < removed; ++k) keep_edge[order[k]] = false;

  std::vector<bool> keep_node(graph.nodes.size(), false);
  for (std::size_t k = 0; k < graph.edges.size(); ++k) {
    if (!keep_edge[k]) continue;
    keep_node[graph.edges[k].source] = true;
    keep_node[graph.edges[k].target] = true;
  }
  if (!graph.nodes.empty() && std::none_of(keep_node.begin(), keep_node.end(),
                                           [](bool b) { return b; })) {
    keep_node[0] = true;
  }

  SceneGraph out;
  out.image_id = graph.image_id;
  std::vector<std::size_t> remap(graph.nodes.size(), 0);
  for (std::size_t u = 0; u < graph.nodes.size(); ++u) {
    if (!keep_node[u]) continue;
    remap[u] = out.nodes.size();
    out.nodes.push_back(graph.nodes[u]);
  }
  for (std::size_t k = 0; k < graph.edges.size(); ++k) {
    if (!keep_edge[k]) continue;
    const Edge& e = graph.edges[k];
    out.edges.push_back(Edge{remap[e.source], e.predicate, remap[e.target]});
  }
  return out;
}

bool weakly_connected(const SceneGraph& graph) {
  const std::size_t n = graph.nodes.size();
  if (n == 0) return false;
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto root = [&](std::size_t u) {
    while (parent[u] != u) u = parent[u] = parent[parent[u]];
    return u;
  };
  std::size_t components = n;
  for (const Edge& e : graph.edges) {
    const std::size_t a = root(e.source), b = root(e.target);
    if (a != b) {
      parent[a] = b;
      --components;
    }
  }
  return components == 1;
}

}  // namespace sgembed

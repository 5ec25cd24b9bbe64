#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace sgembed {

/// Label of the auxiliary node added to every graph by augment_trivial().
inline constexpr std::string_view kImageLabel = "__image__";
/// Predicate of the edges linking every object to the auxiliary node.
inline constexpr std::string_view kInImageLabel = "__in_image__";

/// Object and relationship label sets. Label indices are positions in the
/// ordered lists and are stable for the lifetime of a run and its checkpoints.
class Vocabulary {
 public:
  enum class Reserved { kAppend, kOmit };

  Vocabulary() = default;
  /// Throws on duplicate labels. With Reserved::kAppend the auxiliary labels
  /// are appended when not already present.
  Vocabulary(std::vector<std::string> objects, std::vector<std::string> relationships,
             Reserved reserved = Reserved::kAppend);

  const std::vector<std::string>& object_labels() const noexcept { return objects_; }
  const std::vector<std::string>& relationship_labels() const noexcept { return relationships_; }
  std::size_t object_count() const noexcept { return objects_.size(); }
  std::size_t relationship_count() const noexcept { return relationships_.size(); }

  std::optional<std::size_t> object_index(std::string_view label) const;
  std::optional<std::size_t> relationship_index(std::string_view label) const;

  bool has_reserved_labels() const;
  /// Index of `__image__` / `__in_image__`; throws when absent.
  std::size_t image_label() const;
  std::size_t in_image_label() const;

  /// FNV-1a digest of both ordered label lists. Checkpoints store it to refuse
  /// loading against a different vocabulary.
  std::uint64_t hash() const;

  bool operator==(const Vocabulary& other) const {
    return objects_ == other.objects_ && relationships_ == other.relationships_;
  }

 private:
  std::vector<std::string> objects_;
  std::vector<std::string> relationships_;
  std::unordered_map<std::string, std::size_t> object_lookup_;
  std::unordered_map<std::string, std::size_t> relationship_lookup_;
};

/// Directed <subject, predicate, object> triple over node positions.
struct Edge {
  std::size_t source = 0;
  std::size_t predicate = 0;
  std::size_t target = 0;

  auto operator<=>(const Edge&) const = default;
};

/// Labeled directed multigraph for one image. `nodes[i]` is an object-label
/// index; parallel edges are allowed.
struct SceneGraph {
  std::string image_id;
  std::vector<std::size_t> nodes;
  std::vector<Edge> edges;

  bool operator==(const SceneGraph&) const = default;

  /// Throws if an edge endpoint or a label index is out of range.
  void validate(const Vocabulary& vocab) const;
};

/// True when the graph already carries the auxiliary image node.
bool is_augmented(const SceneGraph& graph, const Vocabulary& vocab);

/// Adds one `__image__` node and an `__in_image__` edge from every original
/// node to it. Refuses graphs that are already augmented.
SceneGraph augment_trivial(const SceneGraph& graph, const Vocabulary& vocab);

/// Removes min(M, |edges|) edges chosen uniformly without replacement, then
/// drops every node left without an incident edge and compacts indices. If no
/// node survives, the node with the smallest original index is kept. M = 0
/// returns the graph unchanged. For a fixed seed, the removed sets are nested in
/// M.
SceneGraph corrupt(const SceneGraph& graph, std::size_t num_edges_removed,
                   std::uint64_t seed);

/// Connectivity ignoring edge direction.
bool weakly_connected(const SceneGraph& graph);

}  // namespace sgembed

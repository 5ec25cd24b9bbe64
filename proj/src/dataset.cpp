#include "sgembed/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "sgembed/error.hpp"

namespace sgembed {

using nlohmann::json;

namespace {

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  return s;
}

std::vector<std::string> read_label_list(const json& doc, const char* key,
                                         const std::string& location) {
  if (!doc.contains(key) || !doc[key].is_array()) {
    throw ParseError(location, std::string("missing array \"") + key + "\"");
  }
  std::vector<std::string> labels;
  for (const auto& item : doc[key]) {
    if (!item.is_string()) throw ParseError(location, std::string("non-string entry in ") + key);
    labels.push_back(item.get<std::string>());
  }
  return labels;
}

}  // namespace

SimilarityMatrix::SimilarityMatrix(std::size_t n, std::vector<double> values)
    : n_(n), values_(std::move(values)) {
  if (values_.size() != n_ * n_) {
    throw DimensionError("similarity matrix of size " + std::to_string(n_) + " needs " +
                         std::to_string(n_ * n_) + " values, got " +
                         std::to_string(values_.size()));
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    const double v = values_[i];
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw Error(ErrorKind::kInvalidArgument,
                  "similarity entry (" + std::to_string(i / n_) + ", " + std::to_string(i % n_) +
                      ") = " + std::to_string(v) + " outside [0, 1]");
    }
  }
}

SimilarityMatrix SimilarityMatrix::submatrix(std::span<const std::size_t> indices) const {
  std::vector<double> out;
  out.reserve(indices.size() * indices.size());
  for (std::size_t r : indices) {
    for (std::size_t c : indices) out.push_back((*this)(r, c));
  }
  return SimilarityMatrix(indices.size(), std::move(out));
}

const char* split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw Error(ErrorKind::kInvalidArgument, "unknown split \"" + std::string(name) + "\"");
}

std::vector<Split> split_dataset(std::size_t n, const SplitRatios& ratios, std::uint64_t seed) {
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw Error(ErrorKind::kInvalidArgument, "split ratios must be non-negative and sum to 1");
  }
  // The epsilon keeps exact products such as 10 * 0.7 from flooring down.
  const auto take = [n](double r) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(n) * r + 1e-9));
  };
  const std::size_t n_val = take(ratios.val);
  const std::size_t n_test = take(ratios.test);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<Split> out(n, Split::kTrain);
  for (std::size_t k = 0; k < n_val; ++k) out[order[k]] = Split::kVal;
  for (std::size_t k = n_val; k < n_val + n_test; ++k) out[order[k]] = Split::kTest;
  return out;
}

void Dataset::assign_split(const SplitRatios& ratios, std::uint64_t seed) {
  split = split_dataset(graphs.size(), ratios, seed);
}

std::vector<std::size_t> Dataset::indices(Split which) const {
  if (split.size() != graphs.size()) {
    throw Error(ErrorKind::kInvalidArgument, "dataset has no split assignment");
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split.size(); ++i) {
    if (split[i] == which) out.push_back(i);
  }
  return out;
}

void Dataset::validate() const {
  if (similarity.size() != graphs.size()) {
    throw DimensionError("similarity matrix is " + std::to_string(similarity.size()) + "x" +
                         std::to_string(similarity.size()) + " but the dataset has " +
                         std::to_string(graphs.size()) + " graphs");
  }
  if (!split.empty() && split.size() != graphs.size()) {
    throw DimensionError("split assignment size differs from graph count");
  }
  for (const auto& g : graphs) g.validate(vocab);
}

DatasetPaths DatasetPaths::in_directory(const std::filesystem::path& dir) {
  return DatasetPaths{dir / "graphs.jsonl", dir / "similarity.csv", dir / "vocab.json"};
}

Vocabulary load_vocabulary(const std::filesystem::path& path) {
  auto in = open_input(path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + " (byte " + std::to_string(e.byte) + ")", e.what());
  }
  const std::string loc = path.string();
  if (!doc.is_object()) throw ParseError(loc, "expected a JSON object");
  try {
    return Vocabulary(read_label_list(doc, "objects", loc),
                      read_label_list(doc, "relationships", loc));
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError(loc, e.what());
  }
}

std::vector<SceneGraph> load_graphs(const std::filesystem::path& path, const Vocabulary& vocab) {
  auto in = open_input(path);
  std::vector<SceneGraph> graphs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::string loc = path.string() + ":" + std::to_string(line_no);
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(loc, e.what());
    }
    if (!rec.is_object() || !rec.contains("image_id") || !rec["image_id"].is_string()) {
      throw ParseError(loc, "record needs a string \"image_id\"");
    }
    SceneGraph g;
    g.image_id = rec["image_id"].get<std::string>();
    loc += " (image " + g.image_id + ")";
    if (!rec.contains("objects") || !rec["objects"].is_array()) {
      throw ParseError(loc, "record needs an \"objects\" array");
    }
    for (const auto& obj : rec["objects"]) {
      if (!obj.is_object() || !obj.contains("label") || !obj["label"].is_string()) {
        throw ParseError(loc, "object entries need a string \"label\"");
      }
      const auto label = obj["label"].get<std::string>();
      if (label == kImageLabel) throw ParseError(loc, "reserved label __image__ in input graph");
      auto idx = vocab.object_index(label);
      if (!idx) throw UnknownLabelError(loc, label);
      g.nodes.push_back(*idx);
    }
    if (g.nodes.empty()) throw ParseError(loc, "graph has no objects");
    const json rels = rec.value("relationships", json::array());
    if (!rels.is_array()) throw ParseError(loc, "\"relationships\" must be an array");
    for (const auto& rel : rels) {
      if (!rel.is_object() || !rel.contains("subject") || !rel.contains("object") ||
          !rel.contains("predicate") || !rel["subject"].is_number_unsigned() ||
          !rel["object"].is_number_unsigned() || !rel["predicate"].is_string()) {
        throw ParseError(loc, "relationship entries need unsigned \"subject\"/\"object\" and a "
                              "string \"predicate\"");
      }
      const auto predicate = rel["predicate"].get<std::string>();
      if (predicate == kInImageLabel) {
        throw ParseError(loc, "reserved predicate __in_image__ in input graph");
      }
      auto pidx = vocab.relationship_index(predicate);
      if (!pidx) throw UnknownLabelError(loc, predicate);
      const auto s = rel["subject"].get<std::size_t>();
      const auto o = rel["object"].get<std::size_t>();
      if (s >= g.nodes.size() || o >= g.nodes.size()) {
        throw ParseError(loc, "relationship endpoint out of range");
      }
      g.edges.push_back(Edge{s, *pidx, o});
    }
    graphs.push_back(std::move(g));
  }
  return graphs;
}

SimilarityMatrix load_similarity(const std::filesystem::path& path,
                                 std::span<const std::string> ids) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ":1", "empty similarity file");
  const auto header = split_csv(trim(line));
  const std::size_t n = header.size();
  if (n != ids.size()) {
    throw DimensionError(path.string() + ": similarity header lists " + std::to_string(n) +
                         " images but the graphs file has " + std::to_string(ids.size()));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (header[i] != ids[i]) {
      throw ParseError(path.string() + ":1", "column " + std::to_string(i) + " is \"" +
                                                 std::string(header[i]) + "\", expected \"" +
                                                 ids[i] + "\"");
    }
  }
  std::vector<double> values;
  values.reserve(n * n);
  std::size_t row = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = trim(line);
    if (text.empty()) continue;
    const std::string loc = path.string() + ":" + std::to_string(line_no);
    const auto fields = split_csv(text);
    if (fields.size() != n) {
      throw DimensionError(loc + ": expected " + std::to_string(n) + " values, got " +
                           std::to_string(fields.size()));
    }
    for (auto f : fields) {
      f = trim(f);
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size()) {
        throw ParseError(loc, "not a number: \"" + std::string(f) + "\"");
      }
      values.push_back(v);
    }
    ++row;
  }
  if (row != n) {
    throw DimensionError(path.string() + ": expected " + std::to_string(n) + " rows, got " +
                         std::to_string(row));
  }
  try {
    return SimilarityMatrix(n, std::move(values));
  } catch (const DimensionError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError(path.string(), e.what());
  }
}

Dataset load_dataset(const std::filesystem::path& graphs_path,
                     const std::filesystem::path& similarity_path,
                     const std::filesystem::path& vocab_path) {
  Dataset ds;
  ds.vocab = load_vocabulary(vocab_path);
  ds.graphs = load_graphs(graphs_path, ds.vocab);
  const auto ids = image_ids(ds);
  ds.similarity = load_similarity(similarity_path, ids);
  ds.validate();
  return ds;
}

Dataset load_dataset(const DatasetPaths& paths) {
  return load_dataset(paths.graphs, paths.similarity, paths.vocab);
}

void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path) {
  json doc = {{"objects", vocab.object_labels()}, {"relationships", vocab.relationship_labels()}};
  auto out = open_output(path);
  out << doc.dump(1) << '\n';
}

void save_graphs(std::span<const SceneGraph> graphs, const Vocabulary& vocab,
                 const std::filesystem::path& path) {
  auto out = open_output(path);
  for (const auto& g : graphs) {
    json objects = json::array();
    for (std::size_t label : g.nodes) objects.push_back({{"label", vocab.object_labels().at(label)}});
    json rels = json::array();
    for (const auto& e : g.edges) {
      rels.push_back({{"subject", e.source},
                      {"predicate", vocab.relationship_labels().at(e.predicate)},
                      {"object", e.target}});
    }
    json rec = {{"image_id", g.image_id}, {"objects", objects}, {"relationships", rels}};
    out << rec.dump() << '\n';
  }
}

void save_similarity(const SimilarityMatrix& sim, std::span<const std::string> ids,
                     const std::filesystem::path& path) {
  if (ids.size() != sim.size()) {
    throw DimensionError("save_similarity: " + std::to_string(ids.size()) + " ids for a " +
                         std::to_string(sim.size()) + "x" + std::to_string(sim.size()) +
                         " matrix");
  }
  auto out = open_output(path);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i].find_first_of(",\n\r") != std::string::npos) {
      throw Error(ErrorKind::kInvalidArgument, "image id \"" + ids[i] + "\" is not CSV-safe");
    }
    out << (i ? "," : "") << ids[i];
  }
  out << '\n';
  char buf[32];
  for (std::size_t r = 0; r < sim.size(); ++r) {
    for (std::size_t c = 0; c < sim.size(); ++c) {
      std::snprintf(buf, sizeof buf, "%.6f", sim(r, c));
      out << (c ? "," : "") << buf;
    }
    out << '\n';
  }
}

void save_dataset(const Dataset& dataset, const DatasetPaths& paths) {
  save_vocabulary(dataset.vocab, paths.vocab);
  save_graphs(dataset.graphs, dataset.vocab, paths.graphs);
  save_similarity(dataset.similarity, image_ids(dataset), paths.similarity);
}

std::vector<std::string> image_ids(const Dataset& dataset) {
  std::vector<std::string> ids;
  ids.reserve(dataset.graphs.size());
  for (const auto& g : dataset.graphs) ids.push_back(g.image_id);
  return ids;
}

}  // namespace sgembed

#include "sgembed/synth.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "sgembed/error.hpp"
#include "sgembed/rng.hpp"

namespace sgembed {

namespace {

std::size_t parse_count(const std::string& key, const std::string& text) {
  std::size_t v = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw Error(ErrorKind::kInvalidArgument, key + ": expected a non-negative integer, got \"" + text + "\"");
  }
  return v;
}

double parse_real(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size() || !std::isfinite(v)) {
    throw Error(ErrorKind::kInvalidArgument, key + ": expected a number, got \"" + text + "\"");
  }
  return v;
}

bool parse_flag(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw Error(ErrorKind::kInvalidArgument, key + ": expected true or false, got \"" + text + "\"");
}

using Setter = std::function<void(SynthConfig&, const std::string&, const std::string&)>;

const std::vector<std::pair<std::string, Setter>>& option_table() {
  static const std::vector<std::pair<std::string, Setter>> table = {
      {"n_images", [](auto& c, auto& k, auto& v) { c.n_images = parse_count(k, v); }},
      {"n_object_labels", [](auto& c, auto& k, auto& v) { c.n_object_labels = parse_count(k, v); }},
      {"n_relationship_labels",
       [](auto& c, auto& k, auto& v) { c.n_relationship_labels = parse_count(k, v); }},
      {"n_topics", [](auto& c, auto& k, auto& v) { c.n_topics = parse_count(k, v); }},
      {"min_objects", [](auto& c, auto& k, auto& v) { c.min_objects = parse_count(k, v); }},
      {"max_objects", [](auto& c, auto& k, auto& v) { c.max_objects = parse_count(k, v); }},
      {"min_edges", [](auto& c, auto& k, auto& v) { c.min_edges = parse_count(k, v); }},
      {"log_uniform_objects",
       [](auto& c, auto& k, auto& v) { c.log_uniform_objects = parse_flag(k, v); }},
      {"edges_per_object", [](auto& c, auto& k, auto& v) { c.edges_per_object = parse_real(k, v); }},
      {"band_low", [](auto& c, auto& k, auto& v) { c.band_low = parse_real(k, v); }},
      {"band_high", [](auto& c, auto& k, auto& v) { c.band_high = parse_real(k, v); }},
      {"label_concentration",
       [](auto& c, auto& k, auto& v) { c.label_concentration = parse_real(k, v); }},
      {"n_generic_labels", [](auto& c, auto& k, auto& v) { c.n_generic_labels = parse_count(k, v); }},
      {"disjoint_topics", [](auto& c, auto& k, auto& v) { c.disjoint_topics = parse_flag(k, v); }},
      {"background_weight", [](auto& c, auto& k, auto& v) { c.background_weight = parse_real(k, v); }},
      {"seed", [](auto& c, auto& k, auto& v) { c.seed = parse_count(k, v); }},
  };
  return table;
}

std::vector<double> dirichlet(std::size_t k, double alpha, std::mt19937_64& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> out(k);
  double total = 0.0;
  for (double& v : out) {
    v = gamma(rng);
    total += v;
  }
  if (total <= 0.0) {
    // Every draw underflowed; fall back to a single random vertex.
    std::uniform_int_distribution<std::size_t> pick(0, k - 1);
    std::fill(out.begin(), out.end(), 0.0);
    out[pick(rng)] = 1.0;
    return out;
  }
  for (double& v : out) v /= total;
  return out;
}

std::vector<double> normalized(const std::vector<double>& v) {
  const double total = std::accumulate(v.begin(), v.end(), 0.0);
  std::vector<double> out(v);
  for (double& x : out) x /= total;
  return out;
}

double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

Histogram make_histogram(std::size_t bins) {
  return Histogram{0.0, 1.0 / static_cast<double>(bins), std::vector<std::size_t>(bins, 0)};
}

void add_to(Histogram& h, double v) {
  auto bin = static_cast<std::size_t>(std::floor((v - h.lo) / h.width));
  h.counts[std::min(bin, h.counts.size() - 1)] += 1;
}

}  // namespace

void SynthConfig::validate() const {
  require(n_images >= 1, "n_images must be positive");
  require(n_object_labels >= 1 && n_relationship_labels >= 1, "label counts must be positive");
  require(n_topics >= 2, "n_topics must be at least 2");
  require(min_objects >= 2, "min_objects must be at least 2 so every graph can hold an edge");
  require(max_objects >= min_objects, "max_objects must be at least min_objects");
  require(min_edges >= 1, "min_edges must be at least 1");
  require(edges_per_object >= 0.0 && std::isfinite(edges_per_object),
          "edges_per_object must be non-negative");
  require(band_low >= 0.0 && band_high <= 1.0 && band_low <= band_high,
          "similarity band must satisfy 0 <= low <= high <= 1");
  require(n_generic_labels < n_object_labels, "n_generic_labels must leave topic labels");
  require(!disjoint_topics || n_object_labels - n_generic_labels >= n_topics,
          "disjoint topics need at least one label per topic");
  require(label_concentration > 0.0, "label_concentration must be positive");
  require(background_weight >= 0.0 && background_weight <= 1.0,
          "background_weight must lie in [0, 1]");
  require(forced_mixtures.size() <= n_images, "more forced mixtures than images");
  for (const auto& m : forced_mixtures) {
    require(m.size() == n_topics, "forced mixture length must equal n_topics");
    require(std::all_of(m.begin(), m.end(), [](double x) { return x >= 0.0 && std::isfinite(x); }),
            "forced mixture entries must be non-negative");
    require(std::accumulate(m.begin(), m.end(), 0.0) > 0.0, "forced mixture must not be all zero");
  }
}

void set_synth_option(SynthConfig& config, const std::string& key, const std::string& value) {
  for (const auto& [name, setter] : option_table()) {
    if (name == key) {
      setter(config, key, value);
      return;
    }
  }
  throw Error(ErrorKind::kInvalidArgument, "unknown config key \"" + key + "\"");
}

const std::vector<std::string>& synth_option_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& entry : option_table()) out.push_back(entry.first);
    return out;
  }();
  return names;
}

SynthConfig parse_synth_config(const std::string& json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("config", e.what());
  }
  if (!doc.is_object()) throw ParseError("config", "expected a JSON object");
  SynthConfig config;
  for (const auto& [key, value] : doc.items()) {
    if (key == "forced_mixtures") {
      try {
        config.forced_mixtures = value.get<std::vector<std::vector<double>>>();
      } catch (const nlohmann::json::exception&) {
        throw ParseError("config", "forced_mixtures must be a list of number lists");
      }
    } else if (value.is_string()) {
      set_synth_option(config, key, value.get<std::string>());
    } else if (value.is_boolean()) {
      set_synth_option(config, key, value.get<bool>() ? "true" : "false");
    } else if (value.is_number_unsigned()) {
      set_synth_option(config, key, std::to_string(value.get<std::uint64_t>()));
    } else if (value.is_number()) {
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", value.get<double>());
      set_synth_option(config, key, buf);
    } else {
      throw ParseError("config", key + ": expected a number");
    }
  }
  return config;
}

SynthConfig load_synth_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_synth_config(buf.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string(), e.what());
  }
}

std::string synth_config_json(const SynthConfig& c) {
  nlohmann::ordered_json doc;
  doc["n_images"] = c.n_images;
  doc["n_object_labels"] = c.n_object_labels;
  doc["n_relationship_labels"] = c.n_relationship_labels;
  doc["n_topics"] = c.n_topics;
  doc["min_objects"] = c.min_objects;
  doc["max_objects"] = c.max_objects;
  doc["min_edges"] = c.min_edges;
  doc["log_uniform_objects"] = c.log_uniform_objects;
  doc["edges_per_object"] = c.edges_per_object;
  doc["band_low"] = c.band_low;
  doc["band_high"] = c.band_high;
  doc["label_concentration"] = c.label_concentration;
  doc["n_generic_labels"] = c.n_generic_labels;
  doc["disjoint_topics"] = c.disjoint_topics;
  doc["background_weight"] = c.background_weight;
  doc["seed"] = c.seed;
  if (!c.forced_mixtures.empty()) doc["forced_mixtures"] = c.forced_mixtures;
  return doc.dump(2);
}

double mixture_similarity(const std::vector<double>& a, const std::vector<double>& b,
                          double band_low, double band_high) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  const double cosine = std::clamp(ab / std::sqrt(aa * bb), 0.0, 1.0);
  const double s = std::round((band_low + (band_high - band_low) * cosine) * 1e6) / 1e6;
  return std::clamp(s, band_low, band_high);
}

SynthDataset generate(const SynthConfig& config) {
  config.validate();

  std::vector<std::string> objects, relationships;
  char name[32];
  for (std::size_t i = 0; i < config.n_object_labels; ++i) {
    std::snprintf(name, sizeof name, "obj_%03zu", i);
    objects.emplace_back(name);
  }
  for (std::size_t i = 0; i < config.n_relationship_labels; ++i) {
    std::snprintf(name, sizeof name, "rel_%02zu", i);
    relationships.emplace_back(name);
  }
  Vocabulary vocab(objects, relationships);

  std::mt19937_64 topic_rng(derive_seed(config.seed, {0}));
  std::vector<std::discrete_distribution<std::size_t>> topic_labels, topic_predicates;
  for (std::size_t t = 0; t < config.n_topics; ++t) {
    const std::size_t k = config.n_object_labels - config.n_generic_labels;
    std::vector<double> w(config.n_generic_labels, 0.0);
    if (config.disjoint_topics) {
      const std::size_t own = (k - t + config.n_topics - 1) / config.n_topics;
      const auto block = dirichlet(own, config.label_concentration, topic_rng);
      for (std::size_t j = 0; j < k; ++j) {
        w.push_back(j % config.n_topics == t ? block[j / config.n_topics] : 0.0);
      }
    } else {
      const auto all = dirichlet(k, config.label_concentration, topic_rng);
      w.insert(w.end(), all.begin(), all.end());
    }
    topic_labels.emplace_back(w.begin(), w.end());
  }
  for (std::size_t t = 0; t < config.n_topics; ++t) {
    const auto w = dirichlet(config.n_relationship_labels, config.label_concentration, topic_rng);
    topic_predicates.emplace_back(w.begin(), w.end());
  }

  SynthDataset out;
  out.dataset.vocab = vocab;
  for (std::size_t img = 0; img < config.n_images; ++img) {
    std::mt19937_64 rng(derive_seed(config.seed, {1, img}));
    std::vector<double> theta = img < config.forced_mixtures.size()
                                    ? normalized(config.forced_mixtures[img])
                                    : dirichlet(config.n_topics, 1.0, rng);
    std::discrete_distribution<std::size_t> pick_topic(theta.begin(), theta.end());
    std::uniform_int_distribution<std::size_t> pick_count(config.min_objects, config.max_objects);
    std::uniform_int_distribution<std::size_t> pick_background(
        0, (config.n_generic_labels ? config.n_generic_labels : config.n_object_labels) - 1);
    std::bernoulli_distribution use_background(config.background_weight);

    SceneGraph g;
    std::snprintf(name, sizeof name, "img_%05zu", img);
    g.image_id = name;
    std::size_t n = pick_count(rng);
    if (config.log_uniform_objects) {
      std::uniform_real_distribution<double> u(std::log(static_cast<double>(config.min_objects)),
                                               std::log(static_cast<double>(config.max_objects) + 1.0));
      n = std::clamp(static_cast<std::size_t>(std::exp(u(rng))), config.min_objects, config.max_objects);
    }
    std::vector<std::size_t> topic(n);
    for (std::size_t i = 0; i < n; ++i) {
      topic[i] = pick_topic(rng);
      g.nodes.push_back(use_background(rng) ? pick_background(rng) : topic_labels[topic[i]](rng));
    }

    std::uniform_int_distribution<std::size_t> pick_node(0, n - 1);
    std::bernoulli_distribution flip(0.5);
    auto add_edge = [&](std::size_t u, std::size_t v) {
      if (flip(rng)) std::swap(u, v);
      g.edges.push_back(Edge{u, topic_predicates[topic[u]](rng), v});
    };
    auto other_than = [&](std::size_t u) {
      std::size_t v = pick_node(rng);
      while (v == u) v = pick_node(rng);
      return v;
    };
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<bool> covered(n, false);
    for (std::size_t u : order) {
      if (covered[u]) continue;
      const std::size_t v = other_than(u);
      covered[u] = covered[v] = true;
      add_edge(u, v);
    }
    const auto wanted = std::max<std::size_t>(
        config.min_edges,
        static_cast<std::size_t>(std::lround(config.edges_per_object * static_cast<double>(n))));
    while (g.edges.size() < wanted) {
      const std::size_t u = pick_node(rng);
      add_edge(u, other_than(u));
    }
    out.dataset.graphs.push_back(std::move(g));
    out.mixtures.push_back(std::move(theta));
  }

  const std::size_t N = config.n_images;
  std::vector<double> sim(N * N, 1.0);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = i + 1; j < N; ++j) {
      const double s =
          mixture_similarity(out.mixtures[i], out.mixtures[j], config.band_low, config.band_high);
      sim[i * N + j] = sim[j * N + i] = s;
    }
  }
  out.dataset.similarity = SimilarityMatrix(N, std::move(sim));
  out.dataset.validate();
  return out;
}

DatasetStats dataset_stats(const Dataset& dataset) {
  const std::size_t n = dataset.size();
  if (n == 0) throw Error(ErrorKind::kInvalidArgument, "stats of an empty dataset");
  if (dataset.similarity.size() != n)
    throw DimensionError("similarity matrix is " + std::to_string(dataset.similarity.size()) + "x" +
                         std::to_string(dataset.similarity.size()) + " for " + std::to_string(n) +
                         " graphs");
  DatasetStats st;
  st.n_images = n;
  std::vector<double> edges, objects;
  for (const auto& g : dataset.graphs) {
    edges.push_back(static_cast<double>(g.edges.size()));
    objects.push_back(static_cast<double>(g.nodes.size()));
    st.edge_counts[g.edges.size()] += 1;
    st.object_counts[g.nodes.size()] += 1;
  }
  st.median_edges = median(edges);
  st.median_objects = median(objects);

  st.similarity = make_histogram(20);
  st.abs_difference = make_histogram(50);
  const auto& sim = dataset.similarity;
  double total = 0.0;
  std::size_t count = 0;
  st.similarity_min = 1.0;
  st.similarity_max = 0.0;
  std::vector<double> diffs;
  std::vector<double> row;
  for (std::size_t a = 0; a < n; ++a) {
    row.clear();
    for (std::size_t x = 0; x < n; ++x) {
      if (x == a) continue;
      const double s = sim(a, x);
      row.push_back(s);
      add_to(st.similarity, s);
      st.similarity_min = std::min(st.similarity_min, s);
      st.similarity_max = std::max(st.similarity_max, s);
      total += s;
      ++count;
    }
    for (std::size_t x = 0; x < row.size(); ++x) {
      for (std::size_t y = x + 1; y < row.size(); ++y) {
        const double d = std::abs(row[x] - row[y]);
        add_to(st.abs_difference, d);
        diffs.push_back(d);
      }
    }
  }
  if (count == 0) {
    st.similarity_min = st.similarity_max = 0.0;
  } else {
    st.similarity_mean = total / static_cast<double>(count);
  }
  if (!diffs.empty()) {
    const std::size_t k = std::min(diffs.size() - 1,
                                   static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(diffs.size()))) - 1);
    std::nth_element(diffs.begin(), diffs.begin() + static_cast<std::ptrdiff_t>(k), diffs.end());
    st.difference_p99 = diffs[k];
  }
  return st;
}

std::string stats_json(const DatasetStats& st) {
  auto counts = [](const std::map<std::size_t, std::size_t>& m) {
    nlohmann::ordered_json out = nlohmann::ordered_json::object();
    for (const auto& [k, v] : m) out[std::to_string(k)] = v;
    return out;
  };
  auto histogram = [](const Histogram& h) {
    return nlohmann::ordered_json{{"lo", h.lo}, {"bin_width", h.width}, {"counts", h.counts}};
  };
  nlohmann::ordered_json doc;
  doc["n_images"] = st.n_images;
  doc["median_edges"] = st.median_edges;
  doc["median_objects"] = st.median_objects;
  doc["object_counts"] = counts(st.object_counts);
  doc["edge_counts"] = counts(st.edge_counts);
  doc["similarity_min"] = st.similarity_min;
  doc["similarity_max"] = st.similarity_max;
  doc["similarity_mean"] = st.similarity_mean;
  doc["similarity_histogram"] = histogram(st.similarity);
  doc["abs_difference_histogram"] = histogram(st.abs_difference);
  doc["abs_difference_p99"] = st.difference_p99;
  return doc.dump(2);
}

void write_synth_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_dataset(dataset, DatasetPaths::in_directory(dir));
  std::ofstream out(dir / "stats.json", std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "stats.json").string());
  out << stats_json(dataset_stats(dataset)) << '\n';
}

}  // namespace sgembed

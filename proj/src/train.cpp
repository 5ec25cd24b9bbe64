#include "sgembed/train.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "sgembed/checkpoint.hpp"
#include "sgembed/error.hpp"
#include "sgembed/evaluation.hpp"
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

using Setter = std::function<void(TrainConfig&, const std::string&, const std::string&)>;

const std::vector<std::pair<std::string, Setter>>& option_table() {
  static const std::vector<std::pair<std::string, Setter>> table = {
      {"embed_dim", [](auto& c, auto& k, auto& v) { c.model.embed_dim = parse_count(k, v); }},
      {"message_dim", [](auto& c, auto& k, auto& v) { c.model.message_dim = parse_count(k, v); }},
      {"state_dim", [](auto& c, auto& k, auto& v) { c.model.state_dim = parse_count(k, v); }},
      {"num_layers", [](auto& c, auto& k, auto& v) { c.model.num_layers = parse_count(k, v); }},
      {"mlp_hidden", [](auto& c, auto& k, auto& v) { c.model.mlp_hidden = parse_count(k, v); }},
      {"pool_include_trivial",
       [](auto& c, auto& k, auto& v) { c.model.pool_include_trivial = parse_flag(k, v); }},
      {"renormalize_embedding",
       [](auto& c, auto& k, auto& v) { c.model.renormalize_embedding = parse_flag(k, v); }},
      {"loss", [](auto& c, auto&, auto& v) { c.loss.kind = parse_loss(v); }},
      {"margin", [](auto& c, auto& k, auto& v) { c.loss.margin = parse_real(k, v); }},
      {"lambda", [](auto& c, auto& k, auto& v) { c.loss.lambda = parse_real(k, v); }},
      {"nu", [](auto& c, auto& k, auto& v) { c.loss.nu = parse_real(k, v); }},
      {"sampler", [](auto& c, auto&, auto& v) { c.sampler.kind = parse_sampler(v); }},
      {"epochs", [](auto& c, auto& k, auto& v) { c.epochs = parse_count(k, v); }},
      {"batch_size", [](auto& c, auto& k, auto& v) { c.batch_size = parse_count(k, v); }},
      {"learning_rate", [](auto& c, auto& k, auto& v) { c.learning_rate = parse_real(k, v); }},
      {"seed", [](auto& c, auto& k, auto& v) { c.seed = parse_count(k, v); }},
      {"checkpoint_every", [](auto& c, auto& k, auto& v) { c.checkpoint_every = parse_count(k, v); }},
      {"eval_every", [](auto& c, auto& k, auto& v) { c.eval_every = parse_count(k, v); }},
      {"grad_clip", [](auto& c, auto& k, auto& v) { c.grad_clip = parse_real(k, v); }},
      {"log_wall_time", [](auto& c, auto& k, auto& v) { c.log_wall_time = parse_flag(k, v); }},
      {"split_train", [](auto& c, auto& k, auto& v) { c.split.train = parse_real(k, v); }},
      {"split_val", [](auto& c, auto& k, auto& v) { c.split.val = parse_real(k, v); }},
      {"split_test", [](auto& c, auto& k, auto& v) { c.split.test = parse_real(k, v); }},
      {"split_seed", [](auto& c, auto& k, auto& v) { c.split_seed = parse_count(k, v); }},
      {"pretrained_vectors", [](auto& c, auto&, auto& v) { c.pretrained_vectors = v; }},
  };
  return table;
}

std::string json_scalar_text(const std::string& key, const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  if (v.is_number_float()) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v.get<double>());
    return buf;
  }
  throw Error(ErrorKind::kInvalidArgument, key + ": expected a scalar value");
}

// Per-triple losses of the configured kind, shape (B).
Var per_triple_loss(const LossConfig& cfg, Var a, Var p, Var n, std::span<const Triple> triples) {
  switch (cfg.kind) {
    case LossKind::kTriplet:
      return triplet_loss(a, p, n, cfg.margin);
    case LossKind::kInfoNce:
      return infonce_loss(a, p, n, cfg.lambda);
    case LossKind::kRanking: {
      std::vector<double> targets;
      targets.reserve(triples.size());
      for (const auto& t : triples) targets.push_back(ranking_target(t.s_ap, t.s_an));
      return ranking_loss(a, p, n, targets, cfg.nu);
    }
  }
  throw Error(ErrorKind::kInvalidArgument, "unknown loss kind");
}

std::string describe_triple(const Triple& t, std::span<const std::size_t> train_idx,
                            const Dataset& dataset, double loss) {
  std::ostringstream out;
  out << "anchor=" << dataset.graphs[train_idx[t.anchor]].image_id
      << " positive=" << dataset.graphs[train_idx[t.positive]].image_id
      << " negative=" << dataset.graphs[train_idx[t.negative]].image_id << " s_ap=" << t.s_ap
      << " s_an=" << t.s_an << " loss=" << loss;
  return out.str();
}

std::string fixed6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  loss.validate();
  require(batch_size > 0, "batch_size must be positive");
  require(learning_rate > 0.0 && std::isfinite(learning_rate), "learning_rate must be positive");
  require(grad_clip >= 0.0, "grad_clip must be non-negative");
  require(split.train >= 0 && split.val >= 0 && split.test >= 0 &&
              std::abs(split.train + split.val + split.test - 1.0) < 1e-9,
          "split ratios must be non-negative and sum to 1");
}

void set_train_option(TrainConfig& config, const std::string& key, const std::string& value) {
  for (const auto& [name, setter] : option_table()) {
    if (name == key) {
      setter(config, key, value);
      return;
    }
  }
  throw Error(ErrorKind::kInvalidArgument, "unknown config key \"" + key + "\"");
}

const std::vector<std::string>& train_option_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& entry : option_table()) out.push_back(entry.first);
    return out;
  }();
  return names;
}

TrainConfig parse_train_config(const std::string& json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("config", e.what());
  }
  if (!doc.is_object()) throw ParseError("config", "expected a JSON object");
  TrainConfig config;
  for (const auto& [key, value] : doc.items()) {
    set_train_option(config, key, json_scalar_text(key, value));
  }
  return config;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_train_config(buf.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string(), e.what());
  }
}

std::string train_config_json(const TrainConfig& c) {
  nlohmann::ordered_json doc;
  doc["embed_dim"] = c.model.embed_dim;
  doc["message_dim"] = c.model.message_dim;
  doc["state_dim"] = c.model.state_dim;
  doc["num_layers"] = c.model.num_layers;
  doc["mlp_hidden"] = c.model.mlp_hidden;
  doc["pool_include_trivial"] = c.model.pool_include_trivial;
  doc["renormalize_embedding"] = c.model.renormalize_embedding;
  doc["loss"] = loss_name(c.loss.kind);
  doc["margin"] = c.loss.margin;
  doc["lambda"] = c.loss.lambda;
  doc["nu"] = c.loss.nu;
  doc["sampler"] = sampler_name(c.sampler.kind);
  doc["epochs"] = c.epochs;
  doc["batch_size"] = c.batch_size;
  doc["learning_rate"] = c.learning_rate;
  doc["seed"] = c.seed;
  doc["checkpoint_every"] = c.checkpoint_every;
  doc["eval_every"] = c.eval_every;
  doc["grad_clip"] = c.grad_clip;
  doc["log_wall_time"] = c.log_wall_time;
  doc["split_train"] = c.split.train;
  doc["split_val"] = c.split.val;
  doc["split_test"] = c.split.test;
  doc["split_seed"] = c.split_seed;
  doc["pretrained_vectors"] = c.pretrained_vectors;
  return doc.dump(2);
}

void RunLog::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,mean_loss,val_kendall_tau,seconds\n";
  for (const auto& r : epochs) {
    out << r.epoch << ',' << fixed6(r.mean_loss) << ','
        << (r.val_kendall_tau ? fixed6(*r.val_kendall_tau) : "") << ','
        << (r.seconds ? fixed6(*r.seconds) : "") << '\n';
  }
}

TrainResult train(const Dataset& dataset, const TrainConfig& config,
                  const std::optional<std::filesystem::path>& out_dir) {
  config.validate();
  if (dataset.split.size() != dataset.size()) {
    throw Error(ErrorKind::kInvalidArgument, "dataset has no split assignment");
  }
  const auto train_idx = dataset.indices(Split::kTrain);
  if (train_idx.size() < 3) {
    throw Error(ErrorKind::kInvalidArgument,
                "train split needs at least 3 images, has " + std::to_string(train_idx.size()));
  }
  const auto val_idx = dataset.indices(Split::kVal);
  const SimilarityMatrix train_sim = dataset.similarity.submatrix(train_idx);

  std::vector<SceneGraph> train_graphs;
  train_graphs.reserve(train_idx.size());
  for (std::size_t i : train_idx) train_graphs.push_back(augment_trivial(dataset.graphs[i], dataset.vocab));
  std::vector<SceneGraph> val_graphs;
  for (std::size_t i : val_idx) val_graphs.push_back(augment_trivial(dataset.graphs[i], dataset.vocab));

  GcnModel model = GcnModel::initialize(config.model, dataset.vocab, derive_seed(config.seed, {1}));
  if (!config.pretrained_vectors.empty()) load_pretrained_vectors(model, config.pretrained_vectors);
  auto params = model.parameters();
  AdamState adam;
  adam.learning_rate = config.learning_rate;
  TripleSampler sampler(SamplerConfig{config.sampler.kind, derive_seed(config.seed, {2})});

  if (out_dir) std::filesystem::create_directories(*out_dir);
  auto checkpoint = [&](const GcnModel& m, const std::string& name, std::size_t epoch) {
    if (!out_dir) return;
    char ratio[96];
    std::snprintf(ratio, sizeof ratio, "%.17g,%.17g,%.17g", config.split.train, config.split.val,
                  config.split.test);
    save_checkpoint(m, *out_dir / name,
                    {{"epoch", std::to_string(epoch)},
                     {"split_ratios", ratio},
                     {"split_seed", std::to_string(config.split_seed)}});
  };

  TrainResult result{model, model, std::nullopt, {}};
  std::optional<double> best_tau;

  std::vector<std::size_t> order(train_idx.size());
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(derive_seed(config.seed, {3, epoch}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    std::size_t triple_count = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += config.batch_size) {
      const std::size_t hi = std::min(lo + config.batch_size, order.size());
      std::vector<Triple> triples;
      triples.reserve(hi - lo);
      for (std::size_t k = lo; k < hi; ++k) triples.push_back(sampler.sample(order[k], train_sim));

      // Distinct graphs in first-appearance order.
      std::unordered_map<std::size_t, std::size_t> slot;
      std::vector<const SceneGraph*> members;
      auto slot_of = [&](std::size_t local) {
        auto [it, inserted] = slot.try_emplace(local, members.size());
        if (inserted) members.push_back(&train_graphs[local]);
        return it->second;
      };
      std::vector<std::size_t> ai, pi, ni;
      for (const auto& t : triples) {
        ai.push_back(slot_of(t.anchor));
        pi.push_back(slot_of(t.positive));
        ni.push_back(slot_of(t.negative));
      }

      const BatchedGraph batch = BatchedGraph::from_graphs(members, dataset.vocab);
      Tape tape;
      const Var emb = forward(tape, batch, model, Mode::kTrain);
      const Var per = per_triple_loss(config.loss, ops::gather_rows(emb, ai),
                                      ops::gather_rows(emb, pi), ops::gather_rows(emb, ni), triples);
      const Var loss = ops::mean(per);
      const double value = loss.value().item();
      if (!std::isfinite(value)) {
        std::string dump;
        for (std::size_t k = 0; k < triples.size(); ++k) {
          if (!std::isfinite(per.value()[k])) {
            dump = describe_triple(triples[k], train_idx, dataset, per.value()[k]);
            break;
          }
        }
        throw Error(ErrorKind::kNonFiniteLoss,
                    "epoch " + std::to_string(epoch) + ": non-finite loss (" + dump + ")");
      }
      tape.backward(loss);
      adam_step(params, adam, config.grad_clip);
      loss_sum += value * static_cast<double>(triples.size());
      triple_count += triples.size();
    }

    EpochRecord record;
    record.epoch = epoch;
    record.mean_loss = loss_sum / static_cast<double>(triple_count);
    const bool evaluate_now =
        !val_graphs.empty() && config.eval_every > 0 &&
        (epoch % config.eval_every == 0 || epoch == config.epochs);
    if (evaluate_now) {
      record.val_kendall_tau =
          row_wise_kendall(embed_graphs(model, val_graphs), dataset.similarity, val_idx);
      if (record.val_kendall_tau && (!best_tau || *record.val_kendall_tau > *best_tau)) {
        best_tau = record.val_kendall_tau;
        result.best = model;
        result.best_epoch = epoch;
        checkpoint(model, "best.ckpt", epoch);
      }
    }
    if (config.log_wall_time) {
      record.seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    result.log.epochs.push_back(record);
    if (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04zu.ckpt", epoch);
      checkpoint(model, name, epoch);
    }
  }

  result.model = model;
  if (!result.best_epoch) {
    result.best = model;
    checkpoint(model, "best.ckpt", config.epochs);
  }
  checkpoint(model, "last.ckpt", config.epochs);
  if (out_dir) result.log.write_csv(*out_dir / "runlog.csv");
  return result;
}

}  // namespace sgembed

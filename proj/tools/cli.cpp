#include "cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "sgembed/checkpoint.hpp"
#include "sgembed/dataset.hpp"
#include "sgembed/evaluation.hpp"
#include "sgembed/synth.hpp"
#include "sgembed/train.hpp"

namespace sgembed::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr const char* kExitCodeHelp =
    "Exit codes:\n"
    "  0   success\n"
    "  2   usage error (unknown flag, bad flag value)\n"
    "  3   invalid configuration value\n"
    "  4   missing or unwritable file\n"
    "  5   malformed data file or unknown label\n"
    "  6   corrupt checkpoint\n"
    "  7   checkpoint mismatch (vocabulary hash, version, model config)\n"
    "  8   sampler exhausted or degenerate sampling distribution\n"
    "  9   non-finite training loss\n"
    "  10  internal error\n"
    "Failures print one line: error[<class>]: <message>\n"
    "Output directories default to $SGEMBED_OUT_DIR, else the working directory.";

fs::path default_out_dir() {
  const char* env = std::getenv("SGEMBED_OUT_DIR");
  return env && *env ? fs::path(env) : fs::path(".");
}

std::pair<std::string, std::string> split_override(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw Error(ErrorKind::kInvalidArgument, "override \"" + text + "\" is not KEY=VALUE");
  }
  return {text.substr(0, eq), text.substr(eq + 1)};
}

/// "1..20", "0,2,12" or a mix such as "0,5..8".
std::vector<std::size_t> parse_int_list(const std::string& text, const std::string& what) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  auto number = [&](const std::string& s) -> std::size_t {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
      throw Error(ErrorKind::kInvalidArgument, what + ": bad entry \"" + s + "\"");
    }
    return std::stoull(s);
  };
  while (std::getline(ss, item, ',')) {
    const auto dots = item.find("..");
    if (dots == std::string::npos) {
      out.push_back(number(item));
      continue;
    }
    const std::size_t lo = number(item.substr(0, dots));
    const std::size_t hi = number(item.substr(dots + 2));
    if (hi < lo) throw Error(ErrorKind::kInvalidArgument, what + ": empty range \"" + item + "\"");
    for (std::size_t v = lo; v <= hi; ++v) out.push_back(v);
  }
  if (out.empty()) throw Error(ErrorKind::kInvalidArgument, what + " is empty");
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (text.empty() || text.back() != '\n') out << '\n';
}

void write_resolved(const fs::path& dir, const std::string& command, ordered_json settings) {
  ordered_json doc;
  doc["command"] = command;
  doc["settings"] = std::move(settings);
  write_text(dir / "resolved_config.json", doc.dump(2));
}

void require_exists(const fs::path& path, const std::string& what) {
  if (!fs::exists(path)) throw IoError(what + " not found: " + path.string());
}

Dataset load_data_dir(const fs::path& dir) {
  require_exists(dir, "data directory");
  const auto paths = DatasetPaths::in_directory(dir);
  require_exists(paths.graphs, "graphs file");
  require_exists(paths.similarity, "similarity file");
  require_exists(paths.vocab, "vocabulary file");
  Dataset ds = load_dataset(paths);
  ds.validate();
  return ds;
}

// Split settings recorded by training, defaults otherwise.
void assign_split_from(Dataset& ds, const CheckpointMeta& meta) {
  SplitRatios ratios;
  std::uint64_t seed = 0;
  if (auto it = meta.find("split_ratios"); it != meta.end()) {
    char comma;
    std::istringstream in(it->second);
    if (!(in >> ratios.train >> comma >> ratios.val >> comma >> ratios.test)) {
      throw CheckpointError(ErrorKind::kCheckpointCorrupt, "bad split_ratios metadata");
    }
  }
  if (auto it = meta.find("split_seed"); it != meta.end()) seed = std::stoull(it->second);
  ds.assign_split(ratios, seed);
}

struct Loaded {
  Dataset dataset;
  GcnModel model;
};

// Loads and cross-checks everything before any output is written.
Loaded load_model_and_data(const fs::path& data, const fs::path& checkpoint) {
  Dataset ds = load_data_dir(data);
  require_exists(checkpoint, "checkpoint");
  CheckpointMeta meta;
  GcnModel model = load_checkpoint(checkpoint, CheckpointExpectations{&ds.vocab, nullptr}, &meta);
  assign_split_from(ds, meta);
  return {std::move(ds), std::move(model)};
}

ordered_json retrieval_json(const RetrievalReport& r) {
  ordered_json recall = ordered_json::object();
  for (std::size_t k : kRecallCutoffs) recall[std::to_string(k)] = r.recall(k);
  return {{"M", r.noise_level}, {"mrr", r.mrr}, {"recall_at", recall}};
}

}  // namespace

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument:
    case ErrorKind::kDimension:
      return kExitInvalidArgument;
    case ErrorKind::kIo:
      return kExitIo;
    case ErrorKind::kParse:
    case ErrorKind::kUnknownLabel:
      return kExitParse;
    case ErrorKind::kCheckpointCorrupt:
      return kExitCheckpointCorrupt;
    case ErrorKind::kCheckpointMismatch:
      return kExitCheckpointMismatch;
    case ErrorKind::kSamplerExhausted:
    case ErrorKind::kDegenerateDistribution:
      return kExitSampler;
    case ErrorKind::kNonFiniteLoss:
      return kExitNonFiniteLoss;
    case ErrorKind::kUndefinedMetric:
    case ErrorKind::kAutodiff:
      return kExitInternal;
  }
  return kExitInternal;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Scene-graph image embeddings: data generation, training, evaluation and retrieval",
               "sgembed"};
  app.footer(kExitCodeHelp);
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  std::string gen_config;
  std::optional<std::uint64_t> gen_seed;
  std::optional<std::size_t> gen_images;
  std::vector<std::string> gen_set;
  fs::path gen_out;
  gen->add_option("--config", gen_config, "Generator config (flat JSON)");
  gen->add_option("--out", gen_out, "Output dataset directory");
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--n-images", gen_images, "Number of images");
  gen->add_option("--set", gen_set, "Config override KEY=VALUE (repeatable)");

  // train
  auto* tr = app.add_subcommand("train", "Train a model");
  fs::path tr_data, tr_out;
  std::string tr_config, tr_loss, tr_sampler;
  std::optional<std::uint64_t> tr_seed;
  std::optional<std::size_t> tr_epochs;
  std::vector<std::string> tr_set;
  tr->add_option("--data", tr_data, "Dataset directory")->required();
  tr->add_option("--config", tr_config, "Training config (flat JSON)");
  tr->add_option("--out", tr_out, "Output directory for checkpoints and runlog.csv");
  tr->add_option("--seed", tr_seed, "Training seed");
  tr->add_option("--epochs", tr_epochs, "Number of epochs");
  tr->add_option("--loss", tr_loss, "Loss: ranking, triplet or infonce");
  tr->add_option("--sampler", tr_sampler, "Sampler: random, extreme, probability or reject");
  tr->add_option("--set", tr_set, "Config override KEY=VALUE (repeatable)");

  // eval
  auto* ev = app.add_subcommand("eval", "Rank-correlation evaluation with a normal-features baseline");
  fs::path ev_data, ev_ckpt, ev_out;
  std::string ev_split = "test";
  std::uint64_t ev_seed = 0;
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--checkpoint", ev_ckpt, "Model checkpoint")->required();
  ev->add_option("--split", ev_split, "train, val or test")->capture_default_str();
  ev->add_option("--seed", ev_seed, "Seed of the normal-features baseline")->capture_default_str();
  ev->add_option("--out", ev_out, "Output directory");

  // retrieve
  auto* rt = app.add_subcommand("retrieve", "Noisy-query retrieval at one noise level");
  fs::path rt_data, rt_ckpt, rt_out;
  std::string rt_split = "test";
  std::size_t rt_noise = 0;
  std::uint64_t rt_seed = 0;
  rt->add_option("--data", rt_data, "Dataset directory")->required();
  rt->add_option("--checkpoint", rt_ckpt, "Model checkpoint")->required();
  rt->add_option("--noise", rt_noise, "Edges removed per query (M)")->required();
  rt->add_option("--seed", rt_seed, "Corruption seed")->capture_default_str();
  rt->add_option("--split", rt_split, "train, val or test")->capture_default_str();
  rt->add_option("--out", rt_out, "Output directory");

  // sweep
  auto* sw = app.add_subcommand("sweep", "Retrieval over a list of noise levels and seeds");
  fs::path sw_data, sw_ckpt, sw_out;
  std::string sw_split = "test", sw_noise = "1..20", sw_seeds = "0";
  sw->add_option("--data", sw_data, "Dataset directory")->required();
  sw->add_option("--checkpoint", sw_ckpt, "Model checkpoint")->required();
  sw->add_option("--noise-list", sw_noise, "Noise levels, e.g. 1..20 or 0,2,12")->capture_default_str();
  sw->add_option("--seeds", sw_seeds, "Corruption seeds, e.g. 0,1,2")->capture_default_str();
  sw->add_option("--split", sw_split, "train, val or test")->capture_default_str();
  sw->add_option("--out", sw_out, "Output directory");

  // stats
  auto* st = app.add_subcommand("stats", "Dataset statistics");
  fs::path st_data, st_out;
  st->add_option("--data", st_data, "Dataset directory")->required();
  st->add_option("--out", st_out, "Output directory for stats.json");

  try {
    app.parse(std::vector<std::string>(args.rbegin(), args.rend()));
  } catch (const CLI::CallForHelp&) {
    out << (app.got_subcommand(gen) ? gen->help()
            : app.got_subcommand(tr) ? tr->help()
            : app.got_subcommand(ev) ? ev->help()
            : app.got_subcommand(rt) ? rt->help()
            : app.got_subcommand(sw) ? sw->help()
            : app.got_subcommand(st) ? st->help()
                                     : app.help());
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    for (char& c : msg) {
      if (c == '\n') c = ' ';
    }
    err << "error[usage]: " << msg << '\n';
    return kExitUsage;
  }

  auto out_or_default = [](const fs::path& p) { return p.empty() ? default_out_dir() : p; };

  try {
    if (app.got_subcommand(gen)) {
      SynthConfig cfg = gen_config.empty() ? SynthConfig{} : load_synth_config(gen_config);
      for (const auto& s : gen_set) {
        const auto [k, v] = split_override(s);
        set_synth_option(cfg, k, v);
      }
      if (gen_seed) cfg.seed = *gen_seed;
      if (gen_images) cfg.n_images = *gen_images;
      const auto dir = out_or_default(gen_out);
      const SynthDataset synth = generate(cfg);
      write_synth_dataset(synth.dataset, dir);
      write_resolved(dir, "gen-data", ordered_json::parse(synth_config_json(cfg)));
      out << "wrote " << synth.dataset.size() << " images to " << dir.string() << '\n';
    } else if (app.got_subcommand(tr)) {
      TrainConfig cfg = tr_config.empty() ? TrainConfig{} : load_train_config(tr_config);
      for (const auto& s : tr_set) {
        const auto [k, v] = split_override(s);
        set_train_option(cfg, k, v);
      }
      if (tr_seed) cfg.seed = *tr_seed;
      if (tr_epochs) cfg.epochs = *tr_epochs;
      if (!tr_loss.empty()) cfg.loss.kind = parse_loss(tr_loss);
      if (!tr_sampler.empty()) cfg.sampler.kind = parse_sampler(tr_sampler);
      cfg.validate();
      Dataset ds = load_data_dir(tr_data);
      ds.assign_split(cfg.split, cfg.split_seed);
      const auto dir = out_or_default(tr_out);
      fs::create_directories(dir);
      write_resolved(dir, "train", ordered_json::parse(train_config_json(cfg)));
      const TrainResult result = train(ds, cfg, dir);
      out << "trained " << cfg.epochs << " epochs";
      if (result.best_epoch) out << ", best validation epoch " << *result.best_epoch;
      out << "; outputs in " << dir.string() << '\n';
    } else if (app.got_subcommand(ev)) {
      const Split split = parse_split(ev_split);
      const Loaded loaded = load_model_and_data(ev_data, ev_ckpt);
      const EvalReport report = evaluate(loaded.model, loaded.dataset, split);
      const EvalReport baseline =
          evaluate_normal_features(loaded.dataset, split, loaded.model.config.state_dim, ev_seed);
      const auto dir = out_or_default(ev_out);
      fs::create_directories(dir);
      write_eval_json(dir / "eval_report.json", report, baseline);
      write_eval_csv(dir / "eval_report.csv", report, baseline);
      write_resolved(dir, "eval",
                     {{"data", ev_data.string()},
                      {"checkpoint", ev_ckpt.string()},
                      {"split", ev_split},
                      {"seed", ev_seed}});
      if (report.row_wise.kendall_tau) {
        out << "row-wise kendall tau " << *report.row_wise.kendall_tau << '\n';
      }
    } else if (app.got_subcommand(rt)) {
      const Split split = parse_split(rt_split);
      const Loaded loaded = load_model_and_data(rt_data, rt_ckpt);
      const std::vector<RetrievalReport> reports = {
          retrieval_experiment(loaded.model, loaded.dataset, split, rt_noise, rt_seed)};
      const auto dir = out_or_default(rt_out);
      fs::create_directories(dir);
      write_retrieval_csv(dir / "retrieval.csv", reports);
      write_ranks_csv(dir / "ranks.csv", reports, loaded.dataset);
      write_recall_curve_csv(dir / "recall_curve.csv", reports);
      write_resolved(dir, "retrieve",
                     {{"data", rt_data.string()},
                      {"checkpoint", rt_ckpt.string()},
                      {"noise", rt_noise},
                      {"seed", rt_seed},
                      {"split", rt_split}});
      out << "mrr " << reports.front().mrr << '\n';
    } else if (app.got_subcommand(sw)) {
      const Split split = parse_split(sw_split);
      const auto levels = parse_int_list(sw_noise, "noise list");
      const auto seeds = parse_int_list(sw_seeds, "seed list");
      const Loaded loaded = load_model_and_data(sw_data, sw_ckpt);
      std::vector<RetrievalReport> mean(levels.size());
      ordered_json per_seed = ordered_json::array();
      std::vector<RetrievalReport> all;
      for (std::size_t seed : seeds) {
        const auto reports = noise_sweep(loaded.model, loaded.dataset, split, levels, seed);
        for (std::size_t i = 0; i < reports.size(); ++i) {
          auto& m = mean[i];
          m.noise_level = reports[i].noise_level;
          m.mrr += reports[i].mrr / static_cast<double>(seeds.size());
          m.ranks.insert(m.ranks.end(), reports[i].ranks.begin(), reports[i].ranks.end());
          m.query_images.insert(m.query_images.end(), reports[i].query_images.begin(),
                                reports[i].query_images.end());
          auto row = retrieval_json(reports[i]);
          row["seed"] = seed;
          per_seed.push_back(std::move(row));
        }
      }
      const auto dir = out_or_default(sw_out);
      fs::create_directories(dir);
      // Equal query counts per seed make the pooled recall the mean recall.
      write_retrieval_csv(dir / "sweep.csv", mean);
      write_recall_curve_csv(dir / "sweep_recall_curve.csv", mean);
      write_text(dir / "sweep_seeds.json", per_seed.dump(2));
      write_resolved(dir, "sweep",
                     {{"data", sw_data.string()},
                      {"checkpoint", sw_ckpt.string()},
                      {"noise_list", levels},
                      {"seeds", seeds},
                      {"split", sw_split}});
      out << "swept " << levels.size() << " noise levels over " << seeds.size() << " seeds\n";
    } else if (app.got_subcommand(st)) {
      const Dataset ds = load_data_dir(st_data);
      const auto dir = out_or_default(st_out);
      fs::create_directories(dir);
      const DatasetStats stats = dataset_stats(ds);
      write_text(dir / "stats.json", stats_json(stats));
      write_resolved(dir, "stats", {{"data", st_data.string()}});
      out << "median edges " << stats.median_edges << '\n';
    }
  } catch (const Error& e) {
    err << "error[" << error_kind_name(e.kind()) << "]: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error[io_error]: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error[internal]: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitOk;
}

}  // namespace sgembed::cli

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sgembed/dataset.hpp"
#include "sgembed/gcn.hpp"
#include "sgembed/objectives.hpp"
#include "sgembed/sampling.hpp"

namespace sgembed {

struct TrainConfig {
  ModelConfig model;
  LossConfig loss;
  /// The sampler seed is derived from `seed`; only the kind is read here.
  SamplerConfig sampler;
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;
  /// Write `epoch_NNNN.ckpt` every this many epochs; 0 disables it.
  std::size_t checkpoint_every = 0;
  /// Compute the validation metric every this many epochs (and always on the
  /// last epoch); 0 disables it.
  std::size_t eval_every = 1;
  /// Global gradient norm bound; 0 disables clipping.
  double grad_clip = 0.0;
  /// Record wall time in the run log. Off by default so logs are reproducible.
  bool log_wall_time = false;
  SplitRatios split;
  std::uint64_t split_seed = 0;
  /// Optional `label v1 ... vd` text file used to initialize the label tables.
  std::string pretrained_vectors;

  void validate() const;
};

/// Sets one field from its flat config name (`embed_dim`, `loss`, `margin`,
/// `sampler`, `epochs`, `split_val`, ...) and a textual value.
void set_train_option(TrainConfig& config, const std::string& key, const std::string& value);

/// Flat JSON object whose keys are the names accepted by set_train_option().
/// Unknown keys are rejected.
TrainConfig parse_train_config(const std::string& json_text);
TrainConfig load_train_config(const std::filesystem::path& path);
std::string train_config_json(const TrainConfig& config);

/// Names accepted by set_train_option(), in documentation order.
const std::vector<std::string>& train_option_names();

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  std::optional<double> val_kendall_tau;
  std::optional<double> seconds;
};

struct RunLog {
  std::vector<EpochRecord> epochs;

  /// Header `epoch,mean_loss,val_kendall_tau,seconds`; missing values stay empty.
  void write_csv(const std::filesystem::path& path) const;
};

struct TrainResult {
  GcnModel model;  ///< after the last epoch
  GcnModel best;   ///< highest validation Kendall tau (the last model if never evaluated)
  std::optional<std::size_t> best_epoch;
  RunLog log;
};

/// Trains on the train split of an already split dataset. Each epoch visits the
/// train anchors in a seeded order; each batch samples one triple per anchor
/// against the train-only similarity submatrix and embeds the distinct graphs in
/// a single forward pass. With `out_dir` set, writes `last.ckpt`, `best.ckpt`,
/// periodic checkpoints and `runlog.csv` there.
TrainResult train(const Dataset& dataset, const TrainConfig& config,
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt);

}  // namespace sgembed

#include <gtest/gtest.h>

#include <cmath>

#include "sgembed/checkpoint.hpp"
#include "sgembed/error.hpp"
#include "sgembed/evaluation.hpp"
#include "sgembed/rng.hpp"
#include "sgembed/synth.hpp"
#include "sgembed/train.hpp"
#include "support/fixtures.hpp"
#include "support/scratch.hpp"

using namespace sgembed;
using namespace sgembed::testing;

namespace {

Dataset synth_dataset(std::size_t n, std::uint64_t seed) {
  SynthConfig c;
  c.n_images = n;
  c.n_object_labels = 30;
  c.n_relationship_labels = 6;
  c.n_topics = 4;
  c.max_objects = 12;
  c.seed = seed;
  Dataset ds = generate(c).dataset;
  ds.assign_split(SplitRatios{}, 0);
  return ds;
}

TrainConfig quick_config(std::size_t epochs) {
  TrainConfig c;
  c.model = small_config();
  c.epochs = epochs;
  c.learning_rate = 1e-3;
  return c;
}

}  // namespace

TEST(TrainConfig, OptionsAndJsonRoundTrip) {
  TrainConfig c;
  set_train_option(c, "embed_dim", "32");
  set_train_option(c, "loss", "triplet");
  set_train_option(c, "sampler", "reject");
  set_train_option(c, "margin", "0.25");
  set_train_option(c, "log_wall_time", "true");
  set_train_option(c, "split_val", "0.3");
  set_train_option(c, "split_train", "0.6");
  EXPECT_EQ(c.model.embed_dim, 32u);
  EXPECT_EQ(c.loss.kind, LossKind::kTriplet);
  EXPECT_EQ(c.sampler.kind, SamplerKind::kReject);
  const TrainConfig back = parse_train_config(train_config_json(c));
  EXPECT_EQ(train_config_json(back), train_config_json(c));
  EXPECT_EQ(back.loss.margin, 0.25);
  EXPECT_TRUE(back.log_wall_time);
}

TEST(TrainConfig, RejectsBadInput) {
  TrainConfig c;
  EXPECT_THROW(set_train_option(c, "embed_dims", "3"), Error);
  EXPECT_THROW(set_train_option(c, "epochs", "-1"), Error);
  EXPECT_THROW(set_train_option(c, "learning_rate", "fast"), Error);
  EXPECT_THROW(parse_train_config(R"({"epochs": 3, "colour": "red"})"), Error);
  EXPECT_THROW(parse_train_config("{not json"), ParseError);
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(TrainConfig, DefaultsMatchTheFullSizeSetup) {
  const TrainConfig c;
  EXPECT_EQ(c.epochs, 100u);
  EXPECT_EQ(c.batch_size, 16u);
  EXPECT_EQ(c.learning_rate, 1e-4);
  EXPECT_EQ(c.model.embed_dim, 300u);
  EXPECT_EQ(c.model.message_dim, 512u);
  EXPECT_EQ(c.model.num_layers, 5u);
  EXPECT_EQ(c.grad_clip, 0.0);
  for (const auto& name : train_option_names()) {
    EXPECT_NE(train_config_json(c).find("\"" + name + "\""), std::string::npos) << name;
  }
}

TEST(Train, ZeroEpochsReturnsInitialModel) {
  const Dataset ds = synth_dataset(10, 1);
  TrainConfig c = quick_config(0);
  c.seed = 4;
  const TrainResult r = train(ds, c);
  EXPECT_TRUE(r.log.epochs.empty());
  EXPECT_TRUE(r.model.same_as(GcnModel::initialize(c.model, ds.vocab, derive_seed(4, {1}))));
  EXPECT_TRUE(r.best.same_as(r.model));
}

TEST(Train, OneEpochWritesArtifacts) {
  ScratchDir dir;
  const Dataset ds = synth_dataset(30, 2);
  const TrainResult r = train(ds, quick_config(1), dir.path());
  ASSERT_EQ(r.log.epochs.size(), 1u);
  EXPECT_TRUE(std::isfinite(r.log.epochs[0].mean_loss));
  EXPECT_TRUE(r.log.epochs[0].val_kendall_tau.has_value());
  EXPECT_FALSE(r.log.epochs[0].seconds.has_value());
  CheckpointMeta meta;
  const GcnModel last = load_checkpoint(dir / "last.ckpt", {&ds.vocab, nullptr}, &meta);
  EXPECT_TRUE(last.same_as(r.model));
  EXPECT_EQ(meta.at("epoch"), "1");
  EXPECT_EQ(meta.at("split_seed"), "0");
  EXPECT_TRUE(load_checkpoint(dir / "best.ckpt").same_as(r.best));
  const std::string log = read_text(dir / "runlog.csv");
  EXPECT_EQ(log.rfind("epoch,mean_loss,val_kendall_tau,seconds\n1,", 0), 0u);
  EXPECT_EQ(log.back(), '\n');
  EXPECT_EQ(log[log.size() - 2], ',');  // empty seconds column
}

TEST(Train, DeterministicReplay) {
  ScratchDir dir;
  const Dataset ds = synth_dataset(30, 3);
  TrainConfig c = quick_config(3);
  c.seed = 11;
  const TrainResult a = train(ds, c, dir / "a");
  const TrainResult b = train(ds, c, dir / "b");
  ASSERT_EQ(a.log.epochs.size(), 3u);
  for (std::size_t e = 0; e < 3; ++e) {
    EXPECT_EQ(a.log.epochs[e].mean_loss, b.log.epochs[e].mean_loss);
    EXPECT_EQ(a.log.epochs[e].val_kendall_tau, b.log.epochs[e].val_kendall_tau);
  }
  EXPECT_TRUE(a.model.same_as(b.model));
  EXPECT_EQ(read_text(dir / "a" / "runlog.csv"), read_text(dir / "b" / "runlog.csv"));
  EXPECT_EQ(read_text(dir / "a" / "last.ckpt"), read_text(dir / "b" / "last.ckpt"));
  c.seed = 12;
  EXPECT_NE(train(ds, c).log.epochs[0].mean_loss, a.log.epochs[0].mean_loss);
}

TEST(Train, PeriodicCheckpointsAndEvalSchedule) {
  ScratchDir dir;
  const Dataset ds = synth_dataset(20, 4);
  TrainConfig c = quick_config(4);
  c.checkpoint_every = 2;
  c.eval_every = 3;
  c.log_wall_time = true;
  const TrainResult r = train(ds, c, dir.path());
  EXPECT_TRUE(std::filesystem::exists(dir / "epoch_0002.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "epoch_0004.ckpt"));
  EXPECT_FALSE(std::filesystem::exists(dir / "epoch_0003.ckpt"));
  ASSERT_EQ(r.log.epochs.size(), 4u);
  EXPECT_FALSE(r.log.epochs[0].val_kendall_tau.has_value());
  EXPECT_TRUE(r.log.epochs[2].val_kendall_tau.has_value());
  EXPECT_TRUE(r.log.epochs[3].val_kendall_tau.has_value());  // last epoch
  EXPECT_TRUE(r.log.epochs[0].seconds.has_value());
  EXPECT_TRUE(r.best_epoch == 3u || r.best_epoch == 4u);
}

TEST(Train, RequiresSplitAndThreeTrainImages) {
  Dataset ds = synth_dataset(10, 5);
  ds.split.clear();
  EXPECT_THROW(train(ds, quick_config(1)), Error);
  Dataset tiny = synth_dataset(4, 5);
  tiny.assign_split(SplitRatios{0.5, 0.5, 0.0}, 0);
  EXPECT_THROW(train(tiny, quick_config(1)), Error);
}

TEST(Train, SamplerExhaustionPropagates) {
  Dataset ds = synth_dataset(8, 6);
  std::vector<double> flat(64, 0.5);
  for (std::size_t i = 0; i < 8; ++i) flat[i * 9] = 1.0;
  ds.similarity = SimilarityMatrix(8, flat);
  TrainConfig c = quick_config(1);
  c.sampler.kind = SamplerKind::kRandom;
  EXPECT_THROW(train(ds, c), SamplerExhaustedError);
}

TEST(Train, NonFiniteLossAbortsWithTriple) {
  const Dataset ds = synth_dataset(10, 7);
  TrainConfig c = quick_config(1);
  c.loss.nu = 1e-320;  // (a.p - a.n) / nu overflows
  try {
    train(ds, c);
    FAIL() << "expected a non-finite loss error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNonFiniteLoss);
    EXPECT_NE(std::string(e.what()).find("anchor=img_"), std::string::npos) << e.what();
  }
}

TEST(Train, TripletLossImprovesFromFirstToBestEpoch) {
  // Ranking-loss values sit near the entropy of soft targets close to 0.5, so
  // a relative decrease is measured with the triplet loss.
  const Dataset ds = synth_dataset(60, 8);
  TrainConfig c = quick_config(30);
  c.loss.kind = LossKind::kTriplet;
  c.sampler.kind = SamplerKind::kRandom;
  const TrainResult r = train(ds, c);
  double best = r.log.epochs[0].mean_loss;
  for (const auto& e : r.log.epochs) best = std::min(best, e.mean_loss);
  EXPECT_LE(best, 0.95 * r.log.epochs[0].mean_loss)
      << "first " << r.log.epochs[0].mean_loss << " best " << best;
}

TEST(Train, TrainedBeatsUntrainedOnValidation) {
  const Dataset ds = synth_dataset(80, 9);
  const auto val = ds.indices(Split::kVal);
  std::vector<SceneGraph> graphs;
  for (std::size_t i : val) graphs.push_back(augment_trivial(ds.graphs[i], ds.vocab));
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    TrainConfig c = quick_config(10);
    c.seed = seed;
    const TrainResult trained = train(ds, c);
    c.epochs = 0;
    const TrainResult untrained = train(ds, c);
    const double t = *row_wise_kendall(embed_graphs(trained.best, graphs), ds.similarity, val);
    const double u = *row_wise_kendall(embed_graphs(untrained.best, graphs), ds.similarity, val);
    EXPECT_GT(t, u) << "seed " << seed;
  }
}

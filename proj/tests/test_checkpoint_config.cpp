#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "tensortree/checkpoint.hpp"
#include "tensortree/config.hpp"
#include "test_support.hpp"

using namespace tensortree;

namespace {

TreeClassifier make_model(Task task, AggregatorKind kind, std::uint64_t seed) {
  Rng rng(seed);
  ModelSpec spec{task, kind, 3, 2, task == Task::Boolean ? 3u : 5u, UpdateActivation::Sigmoid};
  TreeClassifier m(spec, rng);
  // Non-zero biases so every tensor carries information.
  m.for_each_parameter([&](Parameter& p) { p.value = test::random_tensor(rng, p.value.shape()); });
  return m;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  for (auto kind : kAllAggregatorKinds) {
    const TreeClassifier m = make_model(Task::ListOps, kind, 4);
    const Checkpoint ck = checkpoint_from_model(m, {{"best_epoch", "7"}});
    const Checkpoint back = parse_checkpoint(format_checkpoint(ck));
    EXPECT_EQ(back.meta, ck.meta);
    ASSERT_EQ(back.tensors.size(), ck.tensors.size());
    for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
      EXPECT_EQ(back.tensors[i].first, ck.tensors[i].first);
      EXPECT_EQ(back.tensors[i].second, ck.tensors[i].second);
    }
    const TreeClassifier restored = model_from_checkpoint(back);
    EXPECT_EQ(restored.snapshot(), m.snapshot());
    EXPECT_EQ(restored.spec().update_activation, UpdateActivation::Sigmoid);
  }
}

TEST(Checkpoint, ExtremeValuesRoundTrip) {
  Checkpoint ck;
  ck.tensors.emplace_back(
      "x", DenseTensor::vector({0.1, -0.0, 1e-310, std::numeric_limits<double>::max(),
                                std::numeric_limits<double>::infinity(), 1.0 / 3.0}));
  const auto back = parse_checkpoint(format_checkpoint(ck));
  const auto& a = ck.tensors[0].second;
  const auto& b = back.tensors[0].second;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i], b[i]);
    EXPECT_EQ(std::signbit(a[i]), std::signbit(b[i]));
  }
}

TEST(Checkpoint, PredictionsSurviveSaveLoad) {
  const TreeClassifier m = make_model(Task::Boolean, AggregatorKind::TT, 8);
  const auto path = std::filesystem::temp_directory_path() / "tensortree_ck_test.txt";
  save_checkpoint(path, checkpoint_from_model(m));
  const TreeClassifier back = model_from_checkpoint(load_checkpoint(path));
  std::filesystem::remove(path);
  BooleanGenConfig cfg;
  cfg.outdegree = 3;
  cfg.counts = {30, 1, 1};
  for (const auto& s : gen_boolean_dataset(cfg, 1).train) {
    Tape a, b;
    EXPECT_EQ(a.value(m.logits(a, s.tree)), b.value(back.logits(b, s.tree)));
  }
}

TEST(Checkpoint, RejectsVersionAndCorruption) {
  const std::string good = format_checkpoint(checkpoint_from_model(
      make_model(Task::Boolean, AggregatorKind::Sum, 1)));
  std::string other_version = good;
  other_version.replace(0, good.find('\n'), "tensortree-checkpoint 2");
  try {
    parse_checkpoint(other_version);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos);
  }
  EXPECT_THROW(parse_checkpoint(""), CheckpointError);
  EXPECT_THROW(parse_checkpoint("garbage\n"), CheckpointError);
  EXPECT_THROW(parse_checkpoint(good.substr(0, good.size() / 2)), CheckpointError);
  std::string bad_value = good;
  bad_value.replace(bad_value.find("\n0x") + 1, 2, "zz");
  EXPECT_THROW(parse_checkpoint(bad_value), CheckpointError);
}

TEST(Checkpoint, MissingOrMisshapedTensor) {
  Checkpoint ck = checkpoint_from_model(make_model(Task::Boolean, AggregatorKind::Canonical, 2));
  Checkpoint missing = ck;
  missing.tensors.pop_back();
  EXPECT_THROW(model_from_checkpoint(missing), CheckpointError);
  Checkpoint misshaped = ck;
  misshaped.tensors[0].second = DenseTensor(Shape{1});
  EXPECT_THROW(model_from_checkpoint(misshaped), CheckpointError);
  Checkpoint no_meta = ck;
  no_meta.meta.erase("hidden");
  EXPECT_THROW(model_from_checkpoint(no_meta), CheckpointError);
}

TEST(Checkpoint, ParameterPathsAreNamed) {
  const Checkpoint ck = checkpoint_from_model(make_model(Task::Boolean, AggregatorKind::Canonical, 2));
  std::set<std::string> names;
  for (const auto& [name, t] : ck.tensors) names.insert(name);
  EXPECT_EQ(names.size(), ck.tensors.size());
  EXPECT_TRUE(names.count("op=AND/gate=i/aggr/u1/weight"));
  EXPECT_TRUE(names.count("op=IMPLY/gate=f/u3/bias"));
  EXPECT_TRUE(names.count("leaf/weight"));
}

TEST(GridSettings, ParsesKeysListsAndComments) {
  const auto s = parse_grid_settings(
      "# grid\n"
      "task = bool\n"
      "data = /tmp/x   # trailing comment\n"
      "models = sum, canonical\n"
      "hidden = 4,8\n"
      "rank = 2\n"
      "seeds = 0, 1\n"
      "max_epochs = 3\n"
      "rho = 0.9\n");
  const GridConfig g = make_grid_config(s, 3);
  EXPECT_EQ(g.task, Task::Boolean);
  EXPECT_EQ(g.models, (std::vector<AggregatorKind>{AggregatorKind::Sum, AggregatorKind::Canonical}));
  EXPECT_EQ(g.hidden, (std::vector<std::size_t>{4, 8}));
  EXPECT_EQ(g.train.seeds, (std::vector<std::uint64_t>{0, 1}));
  EXPECT_EQ(g.train.max_epochs, 3u);
  EXPECT_DOUBLE_EQ(g.train.optimizer.rho, 0.9);
  EXPECT_EQ(expand_grid(g).size(), 2u + 2u);
}

TEST(GridSettings, UnknownKeyIsNamed) {
  try {
    parse_grid_settings("task = bool\ndata = d\nlearning_rate = 0.1\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos) << e.what();
  }
}

TEST(GridSettings, Errors) {
  EXPECT_THROW(parse_grid_settings("data = d\n"), ConfigError);
  EXPECT_THROW(parse_grid_settings("task = trees\ndata = d\n"), ConfigError);
  EXPECT_THROW(parse_grid_settings("task = bool\ndata = d\ndata = e\n"), ConfigError);
  EXPECT_THROW(parse_grid_settings("task = bool\ndata d\n"), ConfigError);
  auto make = [](const std::string& extra) {
    return make_grid_config(parse_grid_settings("task = bool\ndata = d\n" + extra), 2);
  };
  EXPECT_THROW(make("models = sum, gru\n"), ConfigError);
  EXPECT_THROW(make("hidden = 4, 0\n"), ConfigError);
  EXPECT_THROW(make("hidden = \n"), ConfigError);
  EXPECT_THROW(make("rho = 1.5\n"), ConfigError);
  EXPECT_THROW(make("epsilon = abc\n"), ConfigError);
  EXPECT_THROW(make("update_activation = relu\n"), ConfigError);
}

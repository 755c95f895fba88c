#include <gtest/gtest.h>

#include <cmath>

#include "tensortree/training.hpp"
#include "test_support.hpp"

using namespace tensortree;

namespace {

DatasetSplit tiny_boolean(std::size_t L = 2, std::uint64_t seed = 3) {
  BooleanGenConfig cfg;
  cfg.outdegree = L;
  cfg.counts = {60, 20, 20};
  cfg.min_height = 2;
  cfg.max_height = 3;
  return gen_boolean_dataset(cfg, seed);
}

ModelSpec boolean_spec(AggregatorKind kind, std::size_t c, std::size_t r, std::size_t L = 2) {
  ModelSpec m;
  m.task = Task::Boolean;
  m.kind = kind;
  m.hidden = c;
  m.rank = r;
  m.outdegree = L;
  return m;
}

TrainConfig small_config(AggregatorKind kind = AggregatorKind::Sum) {
  TrainConfig cfg;
  cfg.model = boolean_spec(kind, 4, 2);
  cfg.batch_size = 10;
  cfg.max_epochs = 4;
  cfg.patience = 2;
  cfg.seeds = {1};
  return cfg;
}

double sample_loss(const TreeClassifier& model, const Sample& s) {
  Tape tape;
  return tape.value(nll_loss(tape, model.logits(tape, s.tree), s.label))[0];
}

}  // namespace

TEST(NllLoss, Examples) {
  Tape tape;
  EXPECT_NEAR(tape.value(nll_loss(tape, tape.constant(DenseTensor::vector({0.3, 0.3})), 1))[0],
              std::log(2.0), 1e-12);
  EXPECT_NEAR(tape.value(nll_loss(tape, tape.constant(DenseTensor::vector({1000, 0})), 0))[0], 0.0,
              1e-12);
  EXPECT_THROW(nll_loss(tape, tape.constant(DenseTensor::vector({1, 2})), 2), std::out_of_range);
  EXPECT_THROW(nll_loss(tape, tape.constant(DenseTensor::vector({1})), 0), std::invalid_argument);
}

TEST(NllLoss, MatchesDirectFormula) {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t K = 2 + rng.below(9);
    const auto z = test::random_tensor(rng, {K}, 3.0);
    const std::size_t t = rng.below(K);
    double denom = 0.0;
    for (double v : z.data()) denom += std::exp(v);
    Tape tape;
    const double loss = tape.value(nll_loss(tape, tape.constant(z), t))[0];
    EXPECT_NEAR(loss, -std::log(std::exp(z[t]) / denom), 1e-10);
    EXPECT_GE(loss, 0.0);
    double total = 0.0;
    for (double p : softmax(z.data())) total += p;
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Argmax, TiesGoToLowestIndex) {
  const std::vector<double> z{0.5, 2.0, 2.0, -1.0};
  EXPECT_EQ(argmax(z), 1u);
}

TEST(AdaDelta, ZeroGradientIsFixedPoint) {
  Parameter p{"p", DenseTensor::vector({0.25, -3.0, 7.5})};
  std::vector<Parameter*> params{&p};
  AdaDeltaState state;
  Gradients g;
  g.slot(p) = DenseTensor(Shape{3});
  for (int i = 0; i < 5; ++i) adadelta_step(params, g, state);
  EXPECT_EQ(p.value, DenseTensor::vector({0.25, -3.0, 7.5}));
  adadelta_step(params, Gradients{}, state);  // absent gradient means zero
  EXPECT_EQ(p.value, DenseTensor::vector({0.25, -3.0, 7.5}));
}

TEST(AdaDelta, FirstStepClosedForm) {
  Parameter p{"p", DenseTensor::vector({0.0})};
  std::vector<Parameter*> params{&p};
  AdaDeltaState state{{0.9, 1e-6}, {}, {}};
  Gradients g;
  g.slot(p) = DenseTensor::vector({1.0});
  adadelta_step(params, g, state);
  EXPECT_NEAR(p.value[0], -3.1623e-3, 1e-7);
  EXPECT_NEAR(p.value[0], -std::sqrt(1e-6) / std::sqrt(0.1 + 1e-6), 1e-15);
}

TEST(AdaDelta, MatchesScalarReference) {
  Rng rng(13);
  Parameter p{"p", test::random_tensor(rng, {4})};
  std::vector<Parameter*> params{&p};
  AdaDeltaState state;
  const double rho = state.config.rho, eps = state.config.epsilon;
  std::vector<double> x(p.value.data().begin(), p.value.data().end()), eg2(4, 0.0), edx2(4, 0.0);
  for (int step = 0; step < 50; ++step) {
    Gradients g;
    g.slot(p) = test::random_tensor(rng, {4});
    for (std::size_t k = 0; k < 4; ++k) {
      const double gk = g.get(p)[k];
      eg2[k] = rho * eg2[k] + (1 - rho) * gk * gk;
      const double dx = -std::sqrt(edx2[k] + eps) / std::sqrt(eg2[k] + eps) * gk;
      edx2[k] = rho * edx2[k] + (1 - rho) * dx * dx;
      x[k] += dx;
    }
    adadelta_step(params, g, state);
    for (std::size_t k = 0; k < 4; ++k) ASSERT_DOUBLE_EQ(p.value[k], x[k]);
  }
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_GE(state.sq_grad[0][k], 0.0);
    EXPECT_GE(state.sq_update[0][k], 0.0);
  }
}

TEST(ClassifierHead, ShapesPerTask) {
  Rng rng(0);
  ModelSpec bool_spec = boolean_spec(AggregatorKind::Sum, 5, 0);
  TreeClassifier b(bool_spec, rng);
  EXPECT_EQ(b.head().kind, HeadKind::Linear);
  ASSERT_EQ(b.head().layers.size(), 1u);
  EXPECT_EQ(b.head().layers[0].out_dim(), 2u);

  ModelSpec list_spec{Task::ListOps, AggregatorKind::Canonical, 6, 3, 5, UpdateActivation::Tanh};
  TreeClassifier l(list_spec, rng);
  EXPECT_EQ(l.head().kind, HeadKind::Mlp2x20);
  ASSERT_EQ(l.head().layers.size(), 3u);
  EXPECT_EQ(l.head().layers[0].in_dim(), 6u);
  EXPECT_EQ(l.head().layers[0].out_dim(), 20u);
  EXPECT_EQ(l.head().layers[1].out_dim(), 20u);
  EXPECT_EQ(l.head().layers[2].out_dim(), 10u);
}

TEST(Evaluate, EmptyAndHandCount) {
  Rng rng(2);
  const TreeClassifier model(boolean_spec(AggregatorKind::Canonical, 3, 2), rng);
  EXPECT_THROW(evaluate(model, {}), std::invalid_argument);

  const auto data = tiny_boolean();
  std::vector<Sample> ten(data.train.begin(), data.train.begin() + 10);
  std::size_t correct = 0;
  std::vector<Sample> agreeing;
  for (const auto& s : ten) {
    Tape tape;
    const std::size_t pred = argmax(tape.value(model.logits(tape, s.tree)).data());
    correct += pred == s.label;
    agreeing.push_back(Sample{s.tree, pred});
  }
  EXPECT_DOUBLE_EQ(evaluate(model, ten), static_cast<double>(correct) / 10.0);
  EXPECT_DOUBLE_EQ(evaluate(model, agreeing), 1.0);
}

TEST(TrainEpoch, DeterministicAndFrozenEvaluation) {
  const auto data = tiny_boolean();
  auto run = [&] {
    Rng init(4), shuffle(5);
    TreeClassifier model(boolean_spec(AggregatorKind::TT, 3, 2), init);
    const auto before = model.snapshot();
    evaluate_full(model, data.valid);
    sample_gradients(model, data.train[0]);
    EXPECT_EQ(model.snapshot(), before);  // no step, no change
    AdaDeltaState opt;
    const EpochRecord rec = train_epoch(model, data.train, opt, 7, shuffle);
    EXPECT_NE(model.snapshot(), before);
    return std::make_pair(rec, model.snapshot());
  };
  const auto [a, pa] = run();
  const auto [b, pb] = run();
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(pa, pb);
}

TEST(TrainEpoch, RepeatedSampleLossDecreases) {
  const auto data = tiny_boolean();
  const std::vector<Sample> same(25, data.train[0]);
  Rng init(1), shuffle(2);
  TreeClassifier model(boolean_spec(AggregatorKind::Sum, 4, 0), init);
  AdaDeltaState opt;
  double prev = sample_loss(model, same[0]);
  for (int epoch = 0; epoch < 5; ++epoch) {
    train_epoch(model, same, opt, 25, shuffle);
    const double now = sample_loss(model, same[0]);
    EXPECT_LT(now, prev) << "epoch " << epoch;
    prev = now;
  }
}

TEST(TrainEpoch, Errors) {
  Rng rng(0);
  TreeClassifier model(boolean_spec(AggregatorKind::Sum, 2, 0), rng);
  AdaDeltaState opt;
  EXPECT_THROW(train_epoch(model, {}, opt, 5, rng), std::invalid_argument);
  EXPECT_THROW(train_epoch(model, tiny_boolean().train, opt, 0, rng), std::invalid_argument);
}

TEST(OneStep, RarelyIncreasesSampleLoss) {
  const auto data = tiny_boolean(3, 9);
  std::size_t non_increase = 0, trials = 0;
  for (std::uint64_t start = 0; start < 100; ++start) {
    Rng rng(start);
    const auto kind = kAllAggregatorKinds[start % 5];
    TreeClassifier model(boolean_spec(kind, 3, 2, 3), rng);
    const Sample& s = data.train[start % data.train.size()];
    auto [before, grads] = sample_gradients(model, s);
    AdaDeltaState opt;
    auto params = model.parameters();
    adadelta_step(params, grads, opt);
    ++trials;
    non_increase += sample_loss(model, s) <= before;
  }
  EXPECT_GE(non_increase, 95u) << non_increase << "/" << trials;
}

TEST(TrainSeed, EarlyStoppingBounds) {
  const auto data = tiny_boolean();
  TrainConfig cfg = small_config();
  cfg.max_epochs = 12;
  const auto run = train_seed(cfg, data, 0);
  EXPECT_LE(run.result.epochs_run, cfg.max_epochs);
  EXPECT_GE(run.result.best_epoch, 1u);
  EXPECT_LE(run.result.epochs_run - run.result.best_epoch, cfg.patience);
  // Restored parameters reproduce the best validation accuracy.
  EXPECT_DOUBLE_EQ(evaluate(run.model, data.valid), run.result.best_valid_accuracy);
  EXPECT_DOUBLE_EQ(evaluate(run.model, data.test), run.result.test_accuracy);
  for (const auto& r : run.result.records) {
    EXPECT_GE(r.accuracy, 0.0);
    EXPECT_LE(r.accuracy, 1.0);
  }
  EXPECT_EQ(run.result.records.back().split, "test");
}

TEST(RunExperiment, SingleSeedHasZeroStd) {
  const auto res = run_experiment(small_config(), tiny_boolean());
  EXPECT_EQ(res.seeds.size(), 1u);
  EXPECT_EQ(res.test_accuracy.stddev, 0.0);
  EXPECT_EQ(res.valid_accuracy.stddev, 0.0);
}

TEST(RunExperiment, Reproducible) {
  TrainConfig cfg = small_config(AggregatorKind::Canonical);
  cfg.seeds = {1, 2, 3};
  cfg.max_epochs = 2;
  const auto data = tiny_boolean();
  std::vector<EpochRecord> streamed;
  const auto a = run_experiment(cfg, data, [&](const EpochRecord& r) { streamed.push_back(r); });
  const auto b = run_experiment(cfg, data);
  EXPECT_EQ(a.test_accuracy.mean, b.test_accuracy.mean);
  EXPECT_EQ(a.test_accuracy.stddev, b.test_accuracy.stddev);
  EXPECT_EQ(a.valid_accuracy.mean, b.valid_accuracy.mean);
  std::size_t records = 0;
  for (const auto& s : a.seeds) records += s.records.size();
  EXPECT_EQ(streamed.size(), records);
  EXPECT_EQ(a.aggregator_param_count, param_count(AggregatorKind::Canonical, 4, 2, 2));
}

TEST(MeanStd, SampleStandardDeviation) {
  const std::vector<double> xs{0.9, 0.8, 1.0};
  const auto ms = mean_std(xs);
  EXPECT_NEAR(ms.mean, 0.9, 1e-12);
  EXPECT_NEAR(ms.stddev, 0.1, 1e-12);
}

TEST(GridSearch, SingleCellEqualsRunExperiment) {
  const auto data = tiny_boolean();
  GridConfig g;
  g.task = Task::Boolean;
  g.models = {AggregatorKind::Canonical};
  g.hidden = {4};
  g.rank = {2};
  g.train = small_config(AggregatorKind::Canonical);
  const auto rows = grid_search(g, data);
  ASSERT_EQ(rows.size(), 1u);
  const auto direct = run_experiment(small_config(AggregatorKind::Canonical), data);
  EXPECT_EQ(rows[0].valid_accuracy.mean, direct.valid_accuracy.mean);
  EXPECT_EQ(rows[0].test_accuracy.mean, direct.test_accuracy.mean);
  EXPECT_EQ(rows[0].aggregator_param_count, param_count(AggregatorKind::Canonical, 4, 2, 2));
}

TEST(GridSearch, RowsSortedAndWorkerIndependent) {
  const auto data = tiny_boolean();
  GridConfig g;
  g.task = Task::Boolean;
  g.models = {AggregatorKind::Sum, AggregatorKind::Full, AggregatorKind::TT};
  g.hidden = {2, 3};
  g.full_hidden = {2};
  g.rank = {1, 2};
  g.train = small_config();
  g.train.max_epochs = 2;
  ASSERT_EQ(expand_grid(g).size(), 2u + 1u + 4u);
  const auto serial = grid_search(g, data);
  g.workers = 3;
  const auto parallel = grid_search(g, data);
  ASSERT_EQ(serial.size(), 7u);
  ASSERT_EQ(parallel.size(), 7u);
  for (std::size_t i = 0; i < serial.size(); ++i) {
    EXPECT_EQ(to_csv(serial[i]), to_csv(parallel[i]));
    const auto& c = serial[i].cell;
    EXPECT_EQ(serial[i].aggregator_param_count, param_count(c.kind, c.hidden, 2, c.rank));
    if (i > 0) {
      EXPECT_GE(serial[i - 1].valid_accuracy.mean, serial[i].valid_accuracy.mean);
    }
  }
}

TEST(DefaultGrid, HasSmallCanonicalAtFive) {
  const GridConfig g = default_grid(Task::Boolean, 5);
  bool found = false;
  for (const auto& cell : expand_grid(g)) {
    if (cell.kind == AggregatorKind::Canonical && cell.hidden == 20 && cell.rank == 20) {
      found = true;
      EXPECT_EQ(param_count(cell.kind, cell.hidden, 5, cell.rank), 2520u);
    }
    if (cell.kind == AggregatorKind::Full) {
      EXPECT_LE(cell.hidden, 6u);
    }
  }
  EXPECT_TRUE(found);
  EXPECT_EQ(g.train.max_epochs, 100u);
  EXPECT_EQ(default_grid(Task::ListOps, 0).train.max_epochs, 20u);
}

TEST(Csv, Formats) {
  EpochRecord r{"sum_c4", 2, 3, "valid", 0.5, 0.75, 1.25};
  EXPECT_EQ(to_csv(r), "sum_c4,2,3,valid,0.5,0.75,1.250000\n");
  EXPECT_EQ(grid_csv_header(),
            "model,hidden,rank,aggregator_param_count,total_param_count,val_acc_mean,val_acc_std,"
            "test_acc_mean,test_acc_std\n");
}

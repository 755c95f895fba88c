#ifndef TENSORTREE_TRAINING_HPP
#define TENSORTREE_TRAINING_HPP

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <functional>
#include <mutex>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "tensortree/aggregators.hpp"
#include "tensortree/autodiff.hpp"
#include "tensortree/datasets.hpp"
#include "tensortree/rng.hpp"
#include "tensortree/treelstm.hpp"

namespace tensortree {

// ---------------------------------------------------------------------------
// Classifier heads

enum class HeadKind { Linear, Mlp2x20 };

inline std::string_view to_string(HeadKind k) { return k == HeadKind::Linear ? "linear" : "mlp2x20"; }

inline std::optional<HeadKind> parse_head_kind(std::string_view s) {
  if (s == "linear") return HeadKind::Linear;
  if (s == "mlp2x20") return HeadKind::Mlp2x20;
  return std::nullopt;
}

/// Linear head for boolean sentences, two hidden layers of 20 for ListOps.
inline HeadKind default_head(Task task) {
  return task == Task::Boolean ? HeadKind::Linear : HeadKind::Mlp2x20;
}

inline constexpr std::size_t kMlpHiddenWidth = 20;

struct ClassifierHead {
  HeadKind kind = HeadKind::Linear;
  std::vector<AffineMap> layers;

  std::size_t classes() const { return layers.back().out_dim(); }

  /// Rectifier between layers, identity on the last.
  Var forward(Tape& tape, Var h) const {
    Var x = h;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      x = apply(tape, layers[l], x);
      if (l + 1 < layers.size()) x = tape.relu(x);
    }
    return x;
  }

  template <typename F>
  void for_each_parameter(F&& f) {
    for (auto& m : layers) {
      f(m.weight);
      f(m.bias);
    }
  }
  template <typename F>
  void for_each_parameter(F&& f) const {
    for (const auto& m : layers) {
      f(m.weight);
      f(m.bias);
    }
  }
};

inline ClassifierHead make_head(HeadKind kind, std::size_t in, std::size_t classes, Rng& rng) {
  ClassifierHead head;
  head.kind = kind;
  if (kind == HeadKind::Linear) {
    head.layers.push_back(make_affine("head/l1", classes, in, rng));
  } else {
    head.layers.push_back(make_affine("head/l1", kMlpHiddenWidth, in, rng));
    head.layers.push_back(make_affine("head/l2", kMlpHiddenWidth, kMlpHiddenWidth, rng));
    head.layers.push_back(make_affine("head/l3", classes, kMlpHiddenWidth, rng));
  }
  return head;
}

// ---------------------------------------------------------------------------
// Model

struct ModelSpec {
  Task task = Task::Boolean;
  AggregatorKind kind = AggregatorKind::Sum;
  std::size_t hidden = 0;
  std::size_t rank = 0;
  std::size_t outdegree = 0;
  UpdateActivation update_activation = UpdateActivation::Tanh;
};

/// Tree-LSTM encoder feeding its root hidden state to a classifier head.
class TreeClassifier {
 public:
  TreeClassifier(const ModelSpec& spec, Rng& rng)
      : spec_(spec), encoder_(make_encoder(spec, rng)),
        head_(make_head(default_head(spec.task), spec.hidden, num_classes(spec.task), rng)) {}

  TreeClassifier(TreeClassifier&&) = default;

  const ModelSpec& spec() const noexcept { return spec_; }
  const TreeLstm& encoder() const noexcept { return encoder_; }
  const ClassifierHead& head() const noexcept { return head_; }

  Var logits(Tape& tape, const Tree& tree, ChildOrder order = ChildOrder::LeftToRight) const {
    return head_.forward(tape, encode_tree(encoder_, tree, tape, order).h);
  }

  template <typename F>
  void for_each_parameter(F&& f) {
    encoder_.for_each_parameter(f);
    head_.for_each_parameter(f);
  }
  template <typename F>
  void for_each_parameter(F&& f) const {
    encoder_.for_each_parameter(f);
    head_.for_each_parameter(f);
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for_each_parameter([&](Parameter& p) { out.push_back(&p); });
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_parameter([&](const Parameter& p) { n += p.value.size(); });
    return n;
  }

  std::vector<DenseTensor> snapshot() const {
    std::vector<DenseTensor> out;
    for_each_parameter([&](const Parameter& p) { out.push_back(p.value); });
    return out;
  }

  void restore(const std::vector<DenseTensor>& values) {
    std::size_t i = 0;
    for_each_parameter([&](Parameter& p) { p.value = values.at(i++); });
  }

 private:
  static TreeLstm make_encoder(const ModelSpec& spec, Rng& rng) {
    TreeLstmConfig cfg = task_config(spec.task, spec.kind, spec.hidden, spec.rank, spec.outdegree);
    cfg.update_activation = spec.update_activation;
    return TreeLstm(std::move(cfg), rng);
  }

  ModelSpec spec_;
  TreeLstm encoder_;
  ClassifierHead head_;
};

// ---------------------------------------------------------------------------
// Loss and optimizer

/// -log softmax(logits)[target].
inline Var nll_loss(Tape& tape, Var logits, std::size_t target) {
  if (tape.value(logits).size() < 2) throw std::invalid_argument("nll_loss needs K >= 2");
  return tape.neg_log_softmax(logits, target);
}

/// Softmax with max-subtraction.
inline std::vector<double> softmax(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double s = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) s += p[k] = std::exp(z[k] - m);
  for (double& x : p) x /= s;
  return p;
}

/// Index of the largest logit; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> z) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < z.size(); ++k)
    if (z[k] > z[best]) best = k;
  return best;
}

struct AdaDeltaConfig {
  double rho = 0.95;
  double epsilon = 1e-6;
};

/// Running averages of squared gradients and squared updates, per parameter.
struct AdaDeltaState {
  AdaDeltaConfig config;
  std::vector<DenseTensor> sq_grad;
  std::vector<DenseTensor> sq_update;
};

/**
 * One AdaDelta update over `params` (whose order must not change between
 * calls). Parameters absent from `grads` take a zero gradient.
 */
inline void adadelta_step(std::span<Parameter* const> params, const Gradients& grads,
                          AdaDeltaState& state) {
  if (state.sq_grad.empty()) {
    for (const Parameter* p : params) {
      state.sq_grad.emplace_back(p->value.shape());
      state.sq_update.emplace_back(p->value.shape());
    }
  }
  if (state.sq_grad.size() != params.size())
    throw std::logic_error("adadelta_step: parameter list changed size");
  const double rho = state.config.rho, eps = state.config.epsilon;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const DenseTensor* g = grads.find(*params[i]);
    DenseTensor& eg2 = state.sq_grad[i];
    DenseTensor& edx2 = state.sq_update[i];
    DenseTensor& value = params[i]->value;
    for (std::size_t k = 0; k < value.size(); ++k) {
      const double gk = g ? (*g)[k] : 0.0;
      eg2[k] = rho * eg2[k] + (1.0 - rho) * gk * gk;
      const double delta = -std::sqrt(edx2[k] + eps) / std::sqrt(eg2[k] + eps) * gk;
      edx2[k] = rho * edx2[k] + (1.0 - rho) * delta * delta;
      value[k] += delta;
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochRecord {
  std::string run_id;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;
  double accuracy = 0.0;
  double seconds = 0.0;
};

inline std::string csv_header_metrics() { return "run_id,seed,epoch,split,loss,accuracy,seconds\n"; }

inline std::string to_csv(const EpochRecord& r) {
  char buf[128];
  std::snprintf(buf, sizeof buf, ",%.10g,%.10g,%.6f\n", r.loss, r.accuracy, r.seconds);
  return r.run_id + "," + std::to_string(r.seed) + "," + std::to_string(r.epoch) + "," +
         r.split + buf;
}

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Mean loss and accuracy of `model` on `data`.
inline EvalResult evaluate_full(const TreeClassifier& model, const std::vector<Sample>& data) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
  double loss = 0.0;
  std::size_t correct = 0;
  for (const auto& s : data) {
    Tape tape;
    Var z = model.logits(tape, s.tree);
    loss += tape.value(nll_loss(tape, z, s.label))[0];
    if (argmax(tape.value(z).data()) == s.label) ++correct;
  }
  const auto n = static_cast<double>(data.size());
  return {loss / n, static_cast<double>(correct) / n};
}

inline double evaluate(const TreeClassifier& model, const std::vector<Sample>& data) {
  return evaluate_full(model, data).accuracy;
}

/// Loss and gradients of one sample.
inline std::pair<double, Gradients> sample_gradients(const TreeClassifier& model, const Sample& s,
                                                     bool* correct = nullptr) {
  Tape tape;
  Var z = model.logits(tape, s.tree);
  Var loss = nll_loss(tape, z, s.label);
  if (correct) *correct = argmax(tape.value(z).data()) == s.label;
  const double lv = tape.value(loss)[0];
  return {lv, tape.backward(loss)};
}

/**
 * One pass over `data` in a seeded shuffled order. Gradients are averaged over
 * each batch of trees, followed by one AdaDelta step. Loss and accuracy are
 * measured on the fly, before each batch's update.
 */
inline EpochRecord train_epoch(TreeClassifier& model, const std::vector<Sample>& data,
                               AdaDeltaState& optimizer, std::size_t batch_size, Rng& rng) {
  if (data.empty()) throw std::invalid_argument("train_epoch: empty dataset");
  if (batch_size == 0) throw std::invalid_argument("train_epoch: batch size must be positive");
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(order));

  const std::vector<Parameter*> params = model.parameters();
  double total_loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
    const std::size_t end = std::min(order.size(), begin + batch_size);
    Gradients batch;
    for (std::size_t i = begin; i < end; ++i) {
      bool ok = false;
      auto [loss, grads] = sample_gradients(model, data[order[i]], &ok);
      total_loss += loss;
      correct += ok ? 1 : 0;
      batch.accumulate(grads);
    }
    batch.scale(1.0 / static_cast<double>(end - begin));
    adadelta_step(params, batch, optimizer);
  }
  EpochRecord rec;
  rec.split = "train";
  rec.loss = total_loss / static_cast<double>(data.size());
  rec.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

struct TrainConfig {
  ModelSpec model;
  std::size_t batch_size = 25;
  std::size_t max_epochs = 100;
  std::size_t patience = 5;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  AdaDeltaConfig optimizer;
  std::string run_id = "run";
};

/// Epoch budget used when none is configured.
inline std::size_t default_max_epochs(Task task) { return task == Task::Boolean ? 100 : 20; }

struct SeedResult {
  std::uint64_t seed = 0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  double best_valid_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::vector<EpochRecord> records;
};

using RecordSink = std::function<void(const EpochRecord&)>;

struct TrainedModel {
  TreeClassifier model;
  SeedResult result;
};

/**
 * Trains one seed with early stopping on validation accuracy. The returned
 * model holds the parameters of the best validation epoch.
 */
inline TrainedModel train_seed(const TrainConfig& cfg, const DatasetSplit& data,
                               std::uint64_t seed, const RecordSink& sink = {}) {
  if (cfg.max_epochs == 0 || cfg.patience == 0)
    throw std::invalid_argument("max_epochs and patience must be positive");
  Rng root(seed);
  Rng init_rng = root.split(0);
  Rng shuffle_rng = root.split(1);
  TrainedModel out{TreeClassifier(cfg.model, init_rng), {}};
  out.result.seed = seed;
  AdaDeltaState optimizer{cfg.optimizer, {}, {}};

  auto emit = [&](EpochRecord rec) {
    rec.run_id = cfg.run_id;
    rec.seed = seed;
    if (sink) sink(rec);
    out.result.records.push_back(std::move(rec));
  };

  std::vector<DenseTensor> best = out.model.snapshot();
  double best_acc = -1.0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    EpochRecord train = train_epoch(out.model, data.train, optimizer, cfg.batch_size, shuffle_rng);
    train.epoch = epoch;
    emit(train);

    const auto start = std::chrono::steady_clock::now();
    const EvalResult valid = evaluate_full(out.model, data.valid);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.split = "valid";
    rec.loss = valid.loss;
    rec.accuracy = valid.accuracy;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    emit(rec);

    out.result.epochs_run = epoch;
    if (valid.accuracy > best_acc) {
      best_acc = valid.accuracy;
      out.result.best_epoch = epoch;
      best = out.model.snapshot();
    } else if (epoch - out.result.best_epoch >= cfg.patience) {
      break;
    }
  }
  out.model.restore(best);
  out.result.best_valid_accuracy = best_acc;

  if (!data.test.empty()) {
    const auto start = std::chrono::steady_clock::now();
    const EvalResult test = evaluate_full(out.model, data.test);
    EpochRecord rec;
    rec.epoch = out.result.best_epoch;
    rec.split = "test";
    rec.loss = test.loss;
    rec.accuracy = test.accuracy;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    emit(rec);
    out.result.test_accuracy = test.accuracy;
  }
  return out;
}

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for a single value
};

inline MeanStd mean_std(std::span<const double> xs) {
  MeanStd out;
  if (xs.empty()) return out;
  for (double x : xs) out.mean += x;
  out.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return out;
}

struct ExperimentResult {
  std::vector<SeedResult> seeds;
  MeanStd valid_accuracy;
  MeanStd test_accuracy;
  std::uint64_t aggregator_param_count = 0;
  std::size_t total_param_count = 0;
};

/// Trains once per configured seed and aggregates best-validation metrics.
inline ExperimentResult run_experiment(const TrainConfig& cfg, const DatasetSplit& data,
                                       const RecordSink& sink = {}) {
  if (cfg.seeds.empty()) throw std::invalid_argument("run_experiment: no seeds");
  ExperimentResult out;
  std::vector<double> valid, test;
  for (std::uint64_t seed : cfg.seeds) {
    TrainedModel run = train_seed(cfg, data, seed, sink);
    if (out.total_param_count == 0) out.total_param_count = run.model.parameter_count();
    valid.push_back(run.result.best_valid_accuracy);
    test.push_back(run.result.test_accuracy);
    out.seeds.push_back(std::move(run.result));
  }
  out.valid_accuracy = mean_std(valid);
  out.test_accuracy = mean_std(test);
  const ModelSpec& m = cfg.model;
  out.aggregator_param_count = param_count(m.kind, m.hidden, m.outdegree, m.rank);
  return out;
}

// ---------------------------------------------------------------------------
// Grid search

struct GridCell {
  AggregatorKind kind = AggregatorKind::Sum;
  std::size_t hidden = 0;
  std::size_t rank = 0;  // 0 for Sum and Full
};

struct GridConfig {
  Task task = Task::Boolean;
  std::vector<AggregatorKind> models;
  std::vector<std::size_t> hidden;
  std::vector<std::size_t> full_hidden;
  std::vector<std::size_t> rank;
  std::vector<std::size_t> hosvd_rank;
  TrainConfig train;
  std::size_t workers = 1;
};

/// Default search space for a task and outdegree.
inline GridConfig default_grid(Task task, std::size_t outdegree) {
  GridConfig g;
  g.task = task;
  g.models.assign(std::begin(kAllAggregatorKinds), std::end(kAllAggregatorKinds));
  g.hidden = {10, 20, 40};
  g.rank = {5, 10, 20};
  const std::size_t L = task == Task::ListOps ? kListOpsMaxArity : outdegree;
  if (L >= 4) {
    g.full_hidden = task == Task::ListOps ? std::vector<std::size_t>{2, 4}
                                          : std::vector<std::size_t>{2, 4, 6};
    g.hosvd_rank = {2, 3, 5};
  } else {
    g.full_hidden = {2, 4, 6, 8};
    g.hosvd_rank = g.rank;
  }
  g.train.model.task = task;
  g.train.model.outdegree = L;
  g.train.max_epochs = default_max_epochs(task);
  return g;
}

/// Cartesian grid; rank is dropped for Sum and Full, so their cells do not repeat.
inline std::vector<GridCell> expand_grid(const GridConfig& g) {
  std::vector<GridCell> cells;
  for (AggregatorKind kind : g.models) {
    const auto& hidden =
        kind == AggregatorKind::Full && !g.full_hidden.empty() ? g.full_hidden : g.hidden;
    const auto& ranks =
        kind == AggregatorKind::Hosvd && !g.hosvd_rank.empty() ? g.hosvd_rank : g.rank;
    for (std::size_t c : hidden) {
      if (!uses_rank(kind)) {
        cells.push_back({kind, c, 0});
        continue;
      }
      for (std::size_t r : ranks) cells.push_back({kind, c, r});
    }
  }
  return cells;
}

struct GridRow {
  GridCell cell;
  std::uint64_t aggregator_param_count = 0;
  std::size_t total_param_count = 0;
  MeanStd valid_accuracy;
  MeanStd test_accuracy;
};

inline std::string grid_run_id(const GridCell& cell) {
  std::string id = std::string(to_string(cell.kind)) + "_c" + std::to_string(cell.hidden);
  if (uses_rank(cell.kind)) id += "_r" + std::to_string(cell.rank);
  return id;
}

/**
 * Runs every grid cell and returns rows sorted by validation accuracy
 * (descending), ties going to fewer aggregator parameters. Cells run on up to
 * `g.workers` threads; results do not depend on the worker count.
 */
inline std::vector<GridRow> grid_search(const GridConfig& g, const DatasetSplit& data,
                                        const RecordSink& sink = {}) {
  const std::vector<GridCell> cells = expand_grid(g);
  std::vector<GridRow> rows(cells.size());
  std::vector<std::exception_ptr> errors(cells.size());
  std::mutex sink_mutex;
  RecordSink locked;
  if (sink)
    locked = [&](const EpochRecord& r) {
      std::lock_guard lock(sink_mutex);
      sink(r);
    };

  auto run_cell = [&](std::size_t i) {
    try {
      TrainConfig cfg = g.train;
      cfg.model.task = g.task;
      cfg.model.kind = cells[i].kind;
      cfg.model.hidden = cells[i].hidden;
      cfg.model.rank = cells[i].rank;
      cfg.run_id = grid_run_id(cells[i]);
      const ExperimentResult res = run_experiment(cfg, data, locked);
      rows[i] = GridRow{cells[i], res.aggregator_param_count, res.total_param_count,
                        res.valid_accuracy, res.test_accuracy};
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(g.workers, cells.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) run_cell(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < cells.size();) run_cell(i);
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::stable_sort(rows.begin(), rows.end(), [](const GridRow& a, const GridRow& b) {
    if (a.valid_accuracy.mean != b.valid_accuracy.mean)
      return a.valid_accuracy.mean > b.valid_accuracy.mean;
    return a.aggregator_param_count < b.aggregator_param_count;
  });
  return rows;
}

inline std::string grid_csv_header() {
  return "model,hidden,rank,aggregator_param_count,total_param_count,val_acc_mean,val_acc_std,"
         "test_acc_mean,test_acc_std\n";
}

inline std::string to_csv(const GridRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, ",%.10g,%.10g,%.10g,%.10g\n", r.valid_accuracy.mean,
                r.valid_accuracy.stddev, r.test_accuracy.mean, r.test_accuracy.stddev);
  return std::string(to_string(r.cell.kind)) + "," + std::to_string(r.cell.hidden) + "," +
         std::to_string(r.cell.rank) + "," + std::to_string(r.aggregator_param_count) + "," +
         std::to_string(r.total_param_count) + buf;
}

}  // namespace tensortree

#endif  // TENSORTREE_TRAINING_HPP

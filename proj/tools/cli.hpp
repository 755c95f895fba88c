#ifndef TENSORTREE_TOOLS_CLI_HPP
#define TENSORTREE_TOOLS_CLI_HPP

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tensortree/tensortree.hpp"

namespace tensortree::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitUsage = 2,
  kExitIo = 3,
  kExitData = 4,
};

/// Bad flag values detected after parsing.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kWorkersEnv = "TENSORTREE_WORKERS";

namespace detail {

inline std::vector<std::size_t> parse_triplet(const std::string& s, std::size_t n,
                                              const char* flag) {
  std::vector<std::size_t> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoul(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw UsageError(std::string(flag) + ": '" + s + "' is not a list of integers");
    }
  }
  if (out.size() != n)
    throw UsageError(std::string(flag) + ": expected " + std::to_string(n) + " values");
  return out;
}

inline void append_metrics(const std::filesystem::path& path,
                           const std::vector<EpochRecord>& records) {
  std::string content;
  if (!std::filesystem::exists(path) || std::filesystem::file_size(path) == 0)
    content = csv_header_metrics();
  for (const auto& r : records) content += to_csv(r);
  append_file(path, content);
}

inline std::size_t default_workers() {
  if (const char* env = std::getenv(kWorkersEnv)) {
    try {
      const auto v = std::stoul(env);
      if (v > 0) return v;
    } catch (const std::logic_error&) {
    }
    throw UsageError(std::string(kWorkersEnv) + " must be a positive integer");
  }
  return 1;
}

}  // namespace detail

struct GenBoolArgs {
  std::size_t outdegree = 0;
  std::uint64_t seed = 0;
  std::string out;
  std::string counts = "7000,1000,2000";
  std::string heights = "4,8";
  double subtree_operator_prob = -1.0;
};

inline int cmd_gen_bool(const GenBoolArgs& a, std::ostream& out) {
  if (a.outdegree < 2 || a.outdegree > 5) throw UsageError("--outdegree must be in 2..5");
  BooleanGenConfig cfg;
  cfg.outdegree = a.outdegree;
  const auto counts = detail::parse_triplet(a.counts, 3, "--counts");
  const auto heights = detail::parse_triplet(a.heights, 2, "--heights");
  cfg.counts = {counts[0], counts[1], counts[2]};
  cfg.min_height = heights[0];
  cfg.max_height = heights[1];
  if (cfg.min_height < 1 || cfg.min_height > cfg.max_height)
    throw UsageError("--heights must satisfy 1 <= lo <= hi");
  cfg.subtree_operator_prob = a.subtree_operator_prob;
  const DatasetSplit split = gen_boolean_dataset(cfg, a.seed);
  write_dataset(a.out, split);
  out << "wrote " << split.train.size() << "/" << split.valid.size() << "/"
      << split.test.size() << " samples to " << a.out << "\n";
  return kExitOk;
}

struct GenListOpsArgs {
  std::uint64_t seed = 0;
  std::string out;
  std::string counts = "10000,1000,2000";
  std::size_t max_depth = 4;
  double operator_prob = 0.25;
};

/// Synthetic ListOps directory (train/valid/test), labels from eval_listops.
inline int cmd_gen_listops(const GenListOpsArgs& a, std::ostream& out) {
  const auto counts = detail::parse_triplet(a.counts, 3, "--counts");
  if (a.max_depth < 1) throw UsageError("--max-depth must be positive");
  const ListOpsGenConfig cfg{a.max_depth, a.operator_prob};
  DatasetSplit split;
  split.task = Task::ListOps;
  split.outdegree = kListOpsMaxArity;
  Rng root(a.seed);
  std::vector<Sample>* parts[] = {&split.train, &split.valid, &split.test};
  for (std::size_t s = 0; s < 3; ++s) {
    Rng rng = root.split(s);
    *parts[s] = gen_listops_samples(rng, counts[s], cfg);
  }
  split.metadata = {{"task", "listops"},
                    {"seed", std::to_string(a.seed)},
                    {"counts", a.counts},
                    {"max_depth", std::to_string(a.max_depth)},
                    {"operator_prob", std::to_string(a.operator_prob)}};
  write_dataset(a.out, split);
  out << "wrote " << split.train.size() << "/" << split.valid.size() << "/"
      << split.test.size() << " samples to " << a.out << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string task;
  std::string model;
  std::size_t hidden = 0;
  std::size_t rank = 0;
  std::string data;
  std::uint64_t seed = 0;
  std::string metrics;
  std::string checkpoint;
  std::string update_activation = "tanh";
  std::size_t batch_size = 25;
  std::size_t max_epochs = 0;
  std::size_t patience = 5;
  double rho = 0.95;
  double epsilon = 1e-6;
};

inline TrainConfig train_config_from(const TrainArgs& a, std::size_t outdegree) {
  auto task = parse_task(a.task);
  if (!task) throw UsageError("--task must be bool or listops");
  auto kind = parse_aggregator_kind(a.model);
  if (!kind) throw UsageError("--model must be one of sum, full, hosvd, canonical, tt");
  if (uses_rank(*kind) && a.rank == 0)
    throw UsageError("--rank is required for --model " + a.model);
  auto act = parse_update_activation(a.update_activation);
  if (!act) throw UsageError("--update-activation must be tanh or sigmoid");
  if (a.hidden == 0) throw UsageError("--hidden must be positive");
  if (a.batch_size == 0 || a.patience == 0) throw UsageError("--batch-size and --patience must be positive");
  TrainConfig cfg;
  cfg.model = ModelSpec{*task, *kind, a.hidden, uses_rank(*kind) ? a.rank : 0, outdegree, *act};
  cfg.batch_size = a.batch_size;
  cfg.max_epochs = a.max_epochs ? a.max_epochs : default_max_epochs(*task);
  cfg.patience = a.patience;
  cfg.seeds = {a.seed};
  cfg.optimizer = {a.rho, a.epsilon};
  cfg.run_id = std::string(to_string(*kind)) + "_c" + std::to_string(a.hidden) +
               (uses_rank(*kind) ? "_r" + std::to_string(a.rank) : "");
  return cfg;
}

inline int cmd_train(const TrainArgs& a, std::ostream& out) {
  auto task = parse_task(a.task);
  if (!task) throw UsageError("--task must be bool or listops");
  train_config_from(a, 0);  // flag errors before any I/O
  const DatasetSplit data = load_dataset(a.data, *task, a.seed);
  const TrainConfig cfg = train_config_from(a, data.outdegree);
  TrainedModel run = train_seed(cfg, data, a.seed);
  if (!a.metrics.empty()) detail::append_metrics(a.metrics, run.result.records);
  if (!a.checkpoint.empty()) {
    const Checkpoint ck = checkpoint_from_model(
        run.model, {{"best_epoch", std::to_string(run.result.best_epoch)},
                    {"seed", std::to_string(a.seed)},
                    {"batch_size", std::to_string(cfg.batch_size)},
                    {"max_epochs", std::to_string(cfg.max_epochs)},
                    {"patience", std::to_string(cfg.patience)}});
    save_checkpoint(a.checkpoint, ck);
  }
  out << "best_epoch " << run.result.best_epoch << "\n"
      << "valid_accuracy " << run.result.best_valid_accuracy << "\n"
      << "test_accuracy " << run.result.test_accuracy << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
};

inline double eval_accuracy(const EvalArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const TreeClassifier model = model_from_checkpoint(ck);
  const auto samples = read_samples(a.data, model.spec().task);
  if (samples.empty()) throw DataError("'" + a.data + "' holds no samples");
  return evaluate(model, samples);
}

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
  out << "accuracy " << eval_accuracy(a) << "\n";
  return kExitOk;
}

struct GridArgs {
  std::string config;
  std::string out_table;
  std::string metrics;
};

inline int cmd_grid(const GridArgs& a, std::ostream& out) {
  const GridSettings settings = parse_grid_settings(read_file(a.config));
  const Task task = grid_task(settings);
  const std::uint64_t split_seed = 0;
  const DatasetSplit data = load_dataset(settings.at("data"), task, split_seed);
  GridConfig grid = make_grid_config(settings, data.outdegree);
  if (!settings.count("workers")) grid.workers = detail::default_workers();

  std::vector<EpochRecord> records;
  const auto rows = grid_search(grid, data, [&](const EpochRecord& r) { records.push_back(r); });
  std::string table = grid_csv_header();
  for (const auto& r : rows) table += to_csv(r);
  atomic_write(a.out_table, table);
  if (!a.metrics.empty()) detail::append_metrics(a.metrics, records);
  out << "wrote " << rows.size() << " rows to " << a.out_table << "\n";
  return kExitOk;
}

/// Parses argv and dispatches; returns a process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Tree-LSTM models with tensor-decomposition aggregators"};
  app.require_subcommand(1);

  GenBoolArgs gen_bool;
  auto* gb = app.add_subcommand("gen-bool", "Generate a boolean-sentence dataset");
  gb->add_option("--outdegree", gen_bool.outdegree, "Operator arity L (2..5)")->required();
  gb->add_option("--seed", gen_bool.seed, "Random seed")->required();
  gb->add_option("--out", gen_bool.out, "Output directory")->required();
  gb->add_option("--counts", gen_bool.counts, "train,valid,test sizes");
  gb->add_option("--heights", gen_bool.heights, "lo,hi tree heights");
  gb->add_option("--subtree-operator-prob", gen_bool.subtree_operator_prob,
                 "Chance an off-spine operand is an operator (default 1/(2L))");

  GenListOpsArgs gen_lo;
  auto* gl = app.add_subcommand("gen-listops", "Generate a synthetic ListOps dataset");
  gl->add_option("--seed", gen_lo.seed, "Random seed")->required();
  gl->add_option("--out", gen_lo.out, "Output directory")->required();
  gl->add_option("--counts", gen_lo.counts, "train,valid,test sizes");
  gl->add_option("--max-depth", gen_lo.max_depth, "Maximum operator nesting depth");
  gl->add_option("--operator-prob", gen_lo.operator_prob, "Chance an operand is an operator");

  TrainArgs train;
  auto* tr = app.add_subcommand("train", "Train one model for one seed");
  tr->add_option("--task", train.task, "bool | listops")->required();
  tr->add_option("--model", train.model, "sum | full | hosvd | canonical | tt")->required();
  tr->add_option("--hidden", train.hidden, "Hidden size c")->required();
  tr->add_option("--rank", train.rank, "Decomposition rank r");
  tr->add_option("--data", train.data, "Dataset directory")->required();
  tr->add_option("--seed", train.seed, "Random seed")->required();
  tr->add_option("--metrics", train.metrics, "Metrics CSV (appended)")->required();
  tr->add_option("--checkpoint", train.checkpoint, "Best-model checkpoint path")->required();
  tr->add_option("--update-activation", train.update_activation, "tanh | sigmoid");
  tr->add_option("--batch-size", train.batch_size, "Trees per optimizer step");
  tr->add_option("--max-epochs", train.max_epochs, "Epoch budget (default 100 bool, 20 listops)");
  tr->add_option("--patience", train.patience, "Early-stopping patience");
  tr->add_option("--rho", train.rho, "AdaDelta decay");
  tr->add_option("--epsilon", train.epsilon, "AdaDelta epsilon");

  EvalArgs eval;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a sample file");
  ev->add_option("--checkpoint", eval.checkpoint, "Checkpoint path")->required();
  ev->add_option("--data", eval.data, "label<TAB>tree file")->required();

  GridArgs grid;
  auto* gr = app.add_subcommand("grid", "Run a grid search");
  gr->add_option("--config", grid.config, "Grid configuration file")->required();
  gr->add_option("--out-table", grid.out_table, "Output table CSV")->required();
  gr->add_option("--metrics", grid.metrics, "Per-epoch metrics CSV (appended)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (gb->parsed()) return cmd_gen_bool(gen_bool, out);
    if (gl->parsed()) return cmd_gen_listops(gen_lo, out);
    if (tr->parsed()) return cmd_train(train, out);
    if (ev->parsed()) return cmd_eval(eval, out);
    if (gr->parsed()) return cmd_grid(grid, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ParseError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kExitData;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace tensortree::cli

#endif  // TENSORTREE_TOOLS_CLI_HPP

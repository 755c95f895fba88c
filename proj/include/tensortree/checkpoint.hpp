#ifndef TENSORTREE_CHECKPOINT_HPP
#define TENSORTREE_CHECKPOINT_HPP

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tensortree/io.hpp"
#include "tensortree/training.hpp"

namespace tensortree {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kCheckpointMagic = "tensortree-checkpoint";

/**
 * Named tensors plus string metadata. On disk it is line-oriented text:
 *
 *   tensortree-checkpoint 1
 *   meta <key> <value>
 *   tensor <name> <order> <dim>...
 *   <hex-float> <hex-float> ...
 *   end
 *
 * Values are written as C99 hexadecimal floats, which round-trip exactly and
 * do not depend on byte order.
 */
struct Checkpoint {
  int version = kCheckpointVersion;
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, DenseTensor>> tensors;
};

inline std::string format_checkpoint(const Checkpoint& ck) {
  std::string out = std::string(kCheckpointMagic) + " " + std::to_string(ck.version) + "\n";
  for (const auto& [k, v] : ck.meta) {
    if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos)
      throw CheckpointError("checkpoint metadata '" + k + "' contains separators");
    out += "meta " + k + " " + v + "\n";
  }
  char buf[40];
  for (const auto& [name, t] : ck.tensors) {
    if (name.find_first_of(" \n") != std::string::npos)
      throw CheckpointError("tensor name '" + name + "' contains separators");
    out += "tensor " + name + " " + std::to_string(t.order());
    for (std::size_t d : t.shape()) out += " " + std::to_string(d);
    out += "\n";
    for (std::size_t i = 0; i < t.size(); ++i) {
      std::snprintf(buf, sizeof buf, i ? " %a" : "%a", t[i]);
      out += buf;
    }
    out += "\n";
  }
  out += "end\n";
  return out;
}

inline Checkpoint parse_checkpoint(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) -> CheckpointError {
    return CheckpointError("checkpoint line " + std::to_string(line_no) + ": " + what);
  };
  auto next = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++line_no;
    return true;
  };

  if (!next()) throw fail("empty file");
  {
    std::istringstream head(line);
    std::string magic;
    int version = 0;
    if (!(head >> magic >> version) || magic != kCheckpointMagic)
      throw fail("not a tensortree checkpoint");
    if (version != kCheckpointVersion)
      throw fail("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                 std::to_string(kCheckpointVersion) + ")");
  }

  Checkpoint ck;
  bool ended = false;
  while (next()) {
    if (line == "end") {
      ended = true;
      break;
    }
    if (line.rfind("meta ", 0) == 0) {
      const auto sp = line.find(' ', 5);
      if (sp == std::string::npos) throw fail("malformed meta line");
      ck.meta[line.substr(5, sp - 5)] = line.substr(sp + 1);
    } else if (line.rfind("tensor ", 0) == 0) {
      std::istringstream head(line.substr(7));
      std::string name;
      std::size_t order = 0;
      if (!(head >> name >> order) || order == 0) throw fail("malformed tensor header");
      Shape shape(order);
      for (auto& d : shape)
        if (!(head >> d)) throw fail("malformed tensor shape");
      if (!next()) throw fail("missing data for tensor '" + name + "'");
      const std::size_t n = shape_size(shape);
      std::vector<double> data;
      data.reserve(n);
      const char* p = line.c_str();
      for (std::size_t i = 0; i < n; ++i) {
        char* end = nullptr;
        errno = 0;
        const double v = std::strtod(p, &end);
        if (end == p) throw fail("tensor '" + name + "' has too few values");
        data.push_back(v);
        p = end;
      }
      while (*p == ' ') ++p;
      if (*p != '\0') throw fail("tensor '" + name + "' has trailing data");
      ck.tensors.emplace_back(name, DenseTensor(std::move(shape), std::move(data)));
    } else {
      throw fail("unexpected record");
    }
  }
  if (!ended) throw fail("truncated checkpoint (no 'end' marker)");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  atomic_write(path, format_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(read_file(path));
}

/// Snapshot of a classifier's parameters and the spec needed to rebuild it.
inline Checkpoint checkpoint_from_model(const TreeClassifier& model,
                                        std::map<std::string, std::string> extra = {}) {
  Checkpoint ck;
  const ModelSpec& s = model.spec();
  ck.meta = std::move(extra);
  ck.meta["task"] = std::string(to_string(s.task));
  ck.meta["model"] = std::string(to_string(s.kind));
  ck.meta["hidden"] = std::to_string(s.hidden);
  ck.meta["rank"] = std::to_string(s.rank);
  ck.meta["outdegree"] = std::to_string(s.outdegree);
  ck.meta["update_activation"] = std::string(to_string(s.update_activation));
  ck.meta["head"] = std::string(to_string(model.head().kind));
  model.for_each_parameter(
      [&](const Parameter& p) { ck.tensors.emplace_back(p.name, p.value); });
  return ck;
}

inline ModelSpec spec_from_checkpoint(const Checkpoint& ck) {
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = ck.meta.find(key);
    if (it == ck.meta.end()) throw CheckpointError("checkpoint lacks metadata '" + key + "'");
    return it->second;
  };
  auto number = [&](const std::string& key) -> std::size_t {
    try {
      return std::stoul(get(key));
    } catch (const std::logic_error&) {
      throw CheckpointError("checkpoint metadata '" + key + "' is not a number");
    }
  };
  ModelSpec s;
  auto task = parse_task(get("task"));
  auto kind = parse_aggregator_kind(get("model"));
  auto act = parse_update_activation(get("update_activation"));
  if (!task || !kind || !act) throw CheckpointError("checkpoint metadata has unknown values");
  s.task = *task;
  s.kind = *kind;
  s.update_activation = *act;
  s.hidden = number("hidden");
  s.rank = number("rank");
  s.outdegree = number("outdegree");
  return s;
}

/// Rebuilds the classifier; every parameter must be present with its shape.
inline TreeClassifier model_from_checkpoint(const Checkpoint& ck) {
  Rng rng(0);
  TreeClassifier model(spec_from_checkpoint(ck), rng);
  std::map<std::string, const DenseTensor*> by_name;
  for (const auto& [name, t] : ck.tensors) by_name[name] = &t;
  std::size_t used = 0;
  model.for_each_parameter([&](Parameter& p) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw CheckpointError("checkpoint lacks tensor '" + p.name + "'");
    if (it->second->shape() != p.value.shape())
      throw CheckpointError("tensor '" + p.name + "' has shape " +
                            shape_string(it->second->shape()) + ", expected " +
                            shape_string(p.value.shape()));
    p.value = *it->second;
    ++used;
  });
  if (used != by_name.size()) throw CheckpointError("checkpoint has unexpected tensors");
  return model;
}

}  // namespace tensortree

#endif  // TENSORTREE_CHECKPOINT_HPP

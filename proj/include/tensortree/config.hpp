#ifndef TENSORTREE_CONFIG_HPP
#define TENSORTREE_CONFIG_HPP

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tensortree/training.hpp"

namespace tensortree {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/**
 * Grid configuration keys. Each line is `key = value` or `key = v1, v2, ...`;
 * '#' starts a comment. Omitted keys keep the task's default grid.
 *
 *   task               bool | listops                       (required)
 *   data               dataset directory                    (required)
 *   models             list of sum, full, hosvd, canonical, tt
 *   hidden             list of hidden sizes
 *   full_hidden        hidden sizes used for Full instead of `hidden`
 *   rank               list of ranks for Canonical and TT (and Hosvd unless hosvd_rank)
 *   hosvd_rank         ranks used for Hosvd instead of `rank`
 *   seeds              list of seeds
 *   batch_size, max_epochs, patience, workers    positive integers
 *   update_activation  tanh | sigmoid
 *   rho, epsilon       AdaDelta constants
 */
inline constexpr std::array<std::string_view, 15> kGridKeys = {
    "task",       "data",     "models",     "hidden",  "full_hidden",
    "rank",       "hosvd_rank", "seeds",    "batch_size", "max_epochs",
    "patience",   "workers",  "update_activation", "rho", "epsilon"};

using GridSettings = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    const auto comma = v.find(',', start);
    const std::string item =
        trim(std::string_view(v).substr(start, comma == std::string::npos ? std::string::npos
                                                                          : comma - start));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& s) {
  if (s.empty() || !std::all_of(s.begin(), s.end(), [](char c) {
        return std::isdigit(static_cast<unsigned char>(c));
      }))
    throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + s + "'");
  return std::stoull(s);
}

inline std::size_t parse_positive(const std::string& key, const std::string& s) {
  const auto v = parse_uint(key, s);
  if (v == 0) throw ConfigError("key '" + key + "': value must be positive");
  return static_cast<std::size_t>(v);
}

inline double parse_double(const std::string& key, const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::logic_error&) {
    throw ConfigError("key '" + key + "': expected a number, got '" + s + "'");
  }
}

inline std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(v)) out.push_back(parse_positive(key, item));
  if (out.empty()) throw ConfigError("key '" + key + "': empty list");
  return out;
}

}  // namespace detail

/// Parses the key/value text; rejects unknown keys, duplicates and malformed lines.
inline GridSettings parse_grid_settings(std::string_view text) {
  GridSettings out;
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line =
        text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    if (detail::trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (std::find(kGridKeys.begin(), kGridKeys.end(), key) == kGridKeys.end())
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    if (!out.emplace(key, value).second)
      throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
  }
  for (const char* required : {"task", "data"})
    if (!out.count(required)) throw ConfigError(std::string("missing required key '") + required + "'");
  if (!parse_task(out.at("task")))
    throw ConfigError("key 'task': expected bool or listops, got '" + out.at("task") + "'");
  return out;
}

inline Task grid_task(const GridSettings& s) { return *parse_task(s.at("task")); }

/// Applies settings over default_grid(task, outdegree).
inline GridConfig make_grid_config(const GridSettings& s, std::size_t outdegree) {
  using namespace detail;
  const Task task = grid_task(s);
  GridConfig g = default_grid(task, outdegree);
  for (const auto& [key, value] : s) {
    if (key == "task" || key == "data") continue;
    if (key == "models") {
      g.models.clear();
      for (const auto& name : split_list(value)) {
        auto kind = parse_aggregator_kind(name);
        if (!kind) throw ConfigError("key 'models': unknown model '" + name + "'");
        g.models.push_back(*kind);
      }
      if (g.models.empty()) throw ConfigError("key 'models': empty list");
    } else if (key == "hidden") {
      g.hidden = parse_size_list(key, value);
    } else if (key == "full_hidden") {
      g.full_hidden = parse_size_list(key, value);
    } else if (key == "rank") {
      g.rank = parse_size_list(key, value);
      if (!s.count("hosvd_rank") && outdegree < 4) g.hosvd_rank = g.rank;
    } else if (key == "hosvd_rank") {
      g.hosvd_rank = parse_size_list(key, value);
    } else if (key == "seeds") {
      g.train.seeds.clear();
      for (const auto& item : split_list(value)) g.train.seeds.push_back(parse_uint(key, item));
      if (g.train.seeds.empty()) throw ConfigError("key 'seeds': empty list");
    } else if (key == "batch_size") {
      g.train.batch_size = parse_positive(key, value);
    } else if (key == "max_epochs") {
      g.train.max_epochs = parse_positive(key, value);
    } else if (key == "patience") {
      g.train.patience = parse_positive(key, value);
    } else if (key == "workers") {
      g.workers = parse_positive(key, value);
    } else if (key == "update_activation") {
      auto act = parse_update_activation(value);
      if (!act) throw ConfigError("key 'update_activation': expected tanh or sigmoid");
      g.train.model.update_activation = *act;
    } else if (key == "rho") {
      g.train.optimizer.rho = parse_double(key, value);
      if (!(g.train.optimizer.rho > 0.0 && g.train.optimizer.rho < 1.0))
        throw ConfigError("key 'rho': must lie in (0, 1)");
    } else if (key == "epsilon") {
      g.train.optimizer.epsilon = parse_double(key, value);
      if (!(g.train.optimizer.epsilon > 0.0)) throw ConfigError("key 'epsilon': must be positive");
    }
  }
  return g;
}

}  // namespace tensortree

#endif  // TENSORTREE_CONFIG_HPP

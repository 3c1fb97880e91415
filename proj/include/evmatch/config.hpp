#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "evmatch/tensor.hpp"

namespace evmatch {

// Flat dotted-key configuration. Every key has a default; unknown keys are
// rejected; the resolved table is echoed verbatim into every artifact.
class RunConfig {
 public:
  RunConfig() : kv_(defaults_table()) {}

  static const std::map<std::string, std::string>& defaults_table() {
    static const std::map<std::string, std::string> defaults = {
        // model
        {"model.bins", "4"},
        {"model.patch", "8"},
        {"model.dim", "64"},
        {"model.fine_dim", "32"},
        {"model.n_interleave", "2"},
        {"model.n_refine", "4"},
        {"model.heads", "4"},
        {"model.mlp_ratio", "2"},
        {"model.time_anchor", "end"},
        {"model.tag", "true"},
        {"model.width", "96"},
        {"model.height", "96"},
        // sparsity-aware token selection
        {"sets.enabled", "true"},
        {"sets.eps", "0.01"},
        {"sets.hidden", "16"},
        {"sets.hard_prune", "false"},
        // matcher
        {"matcher.iters", "4"},
        {"matcher.temperature", "0"},
        {"matcher.omega", "0.2"},
        {"matcher.window", "5"},
        {"loss.alpha", "1.0"},
        {"loss.beta", "0.25"},
        {"loss.gamma", "0.01"},
        // training
        {"train.steps", "600"},
        {"train.batch", "8"},
        {"train.lr", "6e-4"},
        {"train.weight_decay", "0.1"},
        {"train.seed", "1"},
        {"train.threads", "2"},
        {"train.window_ms", "64"},
        {"train.window_min_ms", "0"},  // >0 with max: per-draw window jitter
        {"train.window_max_ms", "0"},
        {"train.checkpoint_every", "100"},
        {"train.log_every", "10"},
        // synthetic data
        {"data.pairs", "64"},
        {"data.seed", "100"},
        {"data.width", "96"},
        {"data.height", "96"},
        {"data.focal", "110"},
        {"data.texture", "256"},
        {"data.duration_s", "0.32"},
        {"data.fps", "500"},
        {"data.rot_deg", "8"},
        {"data.trans", "0.12"},
        {"data.speed_min", "1"},
        {"data.speed_max", "1"},
        {"data.baseline_rot_deg", "10"},
        {"data.baseline_trans", "0.18"},
        {"data.c_min", "0.16"},
        {"data.c_max", "0.34"},
        {"data.noise_rate_hz", "0"},
        {"data.refractory_ns", "0"},
        {"data.two_plane_fraction", "0.5"},
        {"data.image_fraction", "0"},
        {"data.threads", "2"},
        // evaluation protocol
        {"eval.window_ms", "64"},
        {"eval.sweep", "1"},
        {"eval.ransac_iters", "1000"},
        {"eval.ransac_thresh", "1e-3"},
        {"eval.repeats", "5"},
        {"eval.epipolar_thresh", "1e-4"},
        {"eval.px_thresh", "3"},
        {"eval.pose_mode", "max_rt"},
        {"eval.seed", "7"},
    };
    return defaults;
  }

  void set(const std::string& key, const std::string& value) {
    require(kv_.count(key) > 0, "config: unknown key '" + key + "'");
    kv_[key] = value;
  }

  // "key = value" lines; '#' comments and blank lines ignored.
  void load_file(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), "config: cannot open " + path);
    std::string line;
    size_t lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      size_t hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      auto trim = [](std::string s) {
        size_t b = s.find_first_not_of(" \t\r");
        size_t e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      if (trim(line).empty()) continue;
      size_t eq = line.find('=');
      require(eq != std::string::npos,
              "config: missing '=' at " + path + ":" + std::to_string(lineno));
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  // "key=value" (from --set flags).
  void set_from_arg(const std::string& arg) {
    size_t eq = arg.find('=');
    require(eq != std::string::npos, "config: --set expects key=value, got '" + arg + "'");
    set(arg.substr(0, eq), arg.substr(eq + 1));
  }

  const std::string& raw(const std::string& key) const {
    auto it = kv_.find(key);
    require(it != kv_.end(), "config: unknown key '" + key + "'");
    return it->second;
  }

  int64_t get_int(const std::string& key) const {
    try {
      return std::stoll(raw(key));
    } catch (const std::exception&) {
      fail("config: key '" + key + "' is not an integer: '" + raw(key) + "'");
    }
  }
  double get_double(const std::string& key) const {
    try {
      return std::stod(raw(key));
    } catch (const std::exception&) {
      fail("config: key '" + key + "' is not a number: '" + raw(key) + "'");
    }
  }
  bool get_bool(const std::string& key) const {
    const std::string& v = raw(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    fail("config: key '" + key + "' is not a bool: '" + v + "'");
  }
  std::string get_string(const std::string& key) const { return raw(key); }

  std::vector<double> get_list(const std::string& key) const {
    std::vector<double> out;
    std::stringstream ss(raw(key));
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) out.push_back(std::stod(item));
    require(!out.empty(), "config: key '" + key + "' is an empty list");
    return out;
  }

  // Canonical echo, one sorted "key = value" per line.
  std::string to_text() const {
    std::ostringstream os;
    for (const auto& [k, v] : kv_) os << k << " = " << v << "\n";
    return os.str();
  }

  static RunConfig from_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      size_t eq = line.find('=');
      require(eq != std::string::npos, "config: malformed echo line '" + line + "'");
      std::string key = line.substr(0, eq);
      std::string value = line.substr(eq + 1);
      while (!key.empty() && key.back() == ' ') key.pop_back();
      while (!value.empty() && value.front() == ' ') value.erase(0, 1);
      cfg.set(key, value);
    }
    return cfg;
  }

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace evmatch

#pragma once

// Flat `section.key = value` run configuration. Every key has a registered
// default; unknown keys and malformed values raise config_error naming the
// key. The resolved configuration is written next to every output.

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace energyflow::cli {

class config_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Requested input artifact (dataset, checkpoint) does not exist.
class missing_artifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct KeySpec {
  const char* key;
  const char* value;
  const char* help;
};

inline const std::vector<KeySpec>& key_schema() {
  static const std::vector<KeySpec> keys{
      {"seed", "0", "global seed"},
      {"out", "out", "output directory"},
      {"threads", "1", "worker threads for loss evaluation"},
      {"expert.kind", "gaussian", "gaussian | mixture2"},
      {"demos.source", "expert", "expert (reference expert, uniform states) | mdp (goal expert rollouts)"},
      {"demos.n", "10000", "demonstrations drawn from the reference expert"},
      {"demos.episodes", "200", "expert episodes when demos.source = mdp"},
      {"demos.path", "", "dataset file (default <out>/demos.csv)"},
      {"schedule.sigma_min", "0.01", ""},
      {"schedule.sigma_max", "10", ""},
      {"schedule.horizon", "1", ""},
      {"model.time_frequencies", "8", ""},
      {"model.time_freq_min", "1", ""},
      {"model.time_freq_max", "50", ""},
      {"model.cond_hidden", "64", ""},
      {"model.trunk_hidden", "128", ""},
      {"model.trunk_blocks", "2", ""},
      {"model.head_hidden", "64", ""},
      {"model.output_scaling", "true", ""},
      {"model.checkpoint", "", "checkpoint file (default <out>/model.ckpt)"},
      {"train.steps", "20000", ""},
      {"train.lr", "1e-4", ""},
      {"train.weight_decay", "1e-6", ""},
      {"train.batch", "128", ""},
      {"train.warmup", "500", ""},
      {"train.clip", "1.0", ""},
      {"ode.steps", "20", "Euler steps K"},
      {"ode.gamma", "1e-3", "terminal time"},
      {"sample.n", "2000", "samples per state"},
      {"sample.state", "0,0", "raw state to sample at"},
      {"reward.gamma", "1e-3", ""},
      {"reward.samples", "16", "reference actions M for the baseline"},
      {"reward.alpha", "1", ""},
      {"reward.energy_scale", "1", "energy weight in centered_plus_sparse"},
      {"reward.rows", "1000", "demonstrations scored in rewards.csv"},
      {"reward.states", "50", "states in the ranking report"},
      {"reward.grid", "21", "grid points per axis in the ranking report"},
      {"sac.arms", "sparse,raw,centered,centered_plus_sparse,oracle_dense", ""},
      {"sac.seeds", "5", ""},
      {"sac.steps", "50000", ""},
      {"sac.hidden", "64,64", ""},
      {"sac.batch", "64", ""},
      {"sac.lr", "3e-4", "actor, critic and temperature learning rate"},
      {"sac.discount", "0.99", ""},
      {"sac.polyak", "0.005", ""},
      {"sac.initial_alpha", "0.1", ""},
      {"sac.random_steps", "1000", ""},
      {"sac.eval_every", "2500", ""},
      {"sac.eval_episodes", "20", ""},
      {"sac.success_threshold", "0.8", ""},
      {"theory.suite", "sweep", "sweep | property"},
      {"theory.dims", "1,2,4,8,16,32", ""},
      {"theory.shifts", "0,0.5,1,2", "levels 0, S, M, L"},
      {"theory.seeds", "10", ""},
      {"theory.n_train", "200", ""},
      {"theory.n_eval", "2000", ""},
      {"theory.features", "32", ""},
      {"theory.hidden", "64", ""},
      {"theory.extra_scale", "0.05", ""},
      {"theory.ridge", "1e-4", ""},
      {"theory.noise", "0.01", ""},
      {"theory.states", "50", "states in the property suite"},
  };
  return keys;
}

class RunConfig {
 public:
  RunConfig() {
    for (const auto& k : key_schema()) values_[k.key] = k.value;
  }

  /// Sets a known key; unknown keys are rejected.
  void set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw config_error("unknown config key: " + key);
    it->second = value;
  }

  /// Parses `key = value` lines; '#' starts a comment.
  void load_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw missing_artifact("config file not found: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string t = trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw config_error(path + ":" + std::to_string(lineno) + ": expected key = value");
      set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
  }

  /// `key=value` assignment as given on the command line.
  void apply_assignment(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw config_error("expected key=value, got: " + kv);
    set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw config_error("unknown config key: " + key);
    return it->second;
  }

  double real(const std::string& key) const { return parse<double>(key, [](const std::string& s, std::size_t* p) { return std::stod(s, p); }); }
  long integer(const std::string& key) const { return parse<long>(key, [](const std::string& s, std::size_t* p) { return std::stol(s, p); }); }
  std::uint64_t u64(const std::string& key) const {
    const std::string& v = str(key);
    if (!v.empty() && v[0] == '-') throw config_error("config key " + key + ": expected a non-negative integer, got '" + v + "'");
    return parse<std::uint64_t>(key, [](const std::string& s, std::size_t* p) { return std::stoull(s, p); });
  }
  bool boolean(const std::string& key) const {
    const std::string& v = str(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw config_error("config key " + key + ": expected true or false, got '" + v + "'");
  }
  std::vector<double> reals(const std::string& key) const {
    std::vector<double> out;
    for (const auto& item : split(str(key))) out.push_back(parse_one<double>(key, item, [](const std::string& s, std::size_t* p) { return std::stod(s, p); }));
    return out;
  }
  std::vector<int> ints(const std::string& key) const {
    std::vector<int> out;
    for (const auto& item : split(str(key))) out.push_back(parse_one<int>(key, item, [](const std::string& s, std::size_t* p) { return std::stoi(s, p); }));
    return out;
  }
  std::vector<std::string> strings(const std::string& key) const { return split(str(key)); }

  /// Every key in schema order, one `key = value` per line.
  std::string resolved() const {
    std::ostringstream os;
    os << "# energyflow resolved config\n";
    for (const auto& k : key_schema()) os << k.key << " = " << values_.at(k.key) << "\n";
    return os.str();
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  template <typename T, typename Fn>
  static T parse_one(const std::string& key, const std::string& v, Fn fn) {
    try {
      std::size_t pos = 0;
      const T x = fn(v, &pos);
      if (pos != v.size()) throw std::invalid_argument("trailing characters");
      return x;
    } catch (const std::exception&) {
      throw config_error("config key " + key + ": cannot parse '" + v + "'");
    }
  }

  template <typename T, typename Fn>
  T parse(const std::string& key, Fn fn) const {
    return parse_one<T>(key, str(key), fn);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace energyflow::cli

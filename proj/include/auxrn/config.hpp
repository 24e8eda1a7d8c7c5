#pragma once

// Flat key=value run configuration. Unknown keys are rejected.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "auxrn/auxiliary.hpp"
#include "auxrn/encoders.hpp"
#include "auxrn/graphworld.hpp"
#include "auxrn/model.hpp"

namespace auxrn {

struct TrainConfig {
  std::uint64_t seed = 1;

  // data
  int n_worlds = 10;
  int nodes_per_world = 10;
  double avg_degree = 3.0;
  int episodes_per_world = 50;
  double frac_train = 0.6;
  double frac_val_seen = 0.1;
  double frac_val_unseen = 0.15;
  double frac_test_unseen = 0.15;

  // model
  int hidden = 64;
  int word_dim = 32;
  VisionQuery vision_query = VisionQuery::CrossModal;

  // optimization
  int iterations = 2000;
  int batch_size = 8;
  int eval_every = 200;
  int probe_every = 50;
  double learning_rate = 1e-2;
  double momentum = 0.9;
  double clip_norm = 5.0;
  double gamma = 0.9;
  double value_weight = 0.5;
  bool use_rl = true;
  double success_radius = 1.0;
  int max_steps = kMaxPathNodes;

  // auxiliary tasks
  AuxWeights aux{};
  ProgressLoss progress_loss = ProgressLoss::Bce;
  AngleNorm angle_norm = AngleNorm::L2;

  // augmentation stages
  int augment_samples = 200;
  int augment_iterations = 0;
  int pre_explore_iterations = 500;
  double augment_aux_scale = 0.5;

  ModelConfig model() const { return {hidden, word_dim, vision_query}; }

  SplitFractions fractions() const { return {frac_train, frac_val_seen, frac_val_unseen, frac_test_unseen}; }

  WorldParams world_params() const { return {nodes_per_world, avg_degree}; }

  std::vector<std::uint64_t> world_seeds() const {
    std::vector<std::uint64_t> s;
    for (int i = 0; i < n_worlds; ++i) s.push_back(seed * 1000 + static_cast<std::uint64_t>(i));
    return s;
  }

  void set(const std::string& key, const std::string& value) {
    auto it = setters().find(key);
    if (it == setters().end()) throw std::invalid_argument("unknown config key: " + key);
    try {
      it->second(*this, value);
    } catch (const std::invalid_argument&) {
      throw std::invalid_argument("bad value for config key " + key + ": " + value);
    } catch (const std::out_of_range&) {
      throw std::invalid_argument("bad value for config key " + key + ": " + value);
    }
  }

  // Canonical text: one key=value per line in key order.
  std::string to_text() const {
    std::ostringstream os;
    for (const auto& [key, get] : getters()) os << key << '=' << get(*this) << '\n';
    return os.str();
  }

  std::uint64_t hash() const {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : to_text()) {
      h ^= c;
      h *= 0x100000001B3ULL;
    }
    return h;
  }

  void apply_text(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash_pos = line.find('#');
      if (hash_pos != std::string::npos) line.erase(hash_pos);
      const auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key=value");
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  void apply_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    apply_text(ss.str());
  }

  void validate() const {
    if (n_worlds < 1 || nodes_per_world < 2 || episodes_per_world < 0) throw std::invalid_argument("config: bad data sizes");
    if (hidden < 1 || word_dim < 1) throw std::invalid_argument("config: bad model sizes");
    if (iterations < 0 || batch_size < 2 || eval_every < 1 || probe_every < 1)
      throw std::invalid_argument("config: iterations >= 0, batch_size >= 2, eval_every >= 1 required");
    if (max_steps < 1) throw std::invalid_argument("config: max_steps must be >= 1");
    aux.validate();
  }

 private:
  using Setter = std::function<void(TrainConfig&, const std::string&)>;
  using Getter = std::function<std::string(const TrainConfig&)>;

  static std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  }

  static bool parse_bool(const std::string& v) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw std::invalid_argument("bool");
  }

  static std::size_t parse_size(const std::string& v) {
    std::size_t pos = 0;
    const unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return static_cast<std::size_t>(x);
  }
  static int parse_int(const std::string& v) {
    std::size_t pos = 0;
    const int x = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return x;
  }
  static double parse_double(const std::string& v) {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return x;
  }

  struct Field {
    Setter set;
    Getter get;
  };

  static const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> f = [] {
      std::map<std::string, Field> m;
      auto int_field = [&m](const std::string& k, int TrainConfig::*p) {
        m[k] = {[p](TrainConfig& c, const std::string& v) { c.*p = parse_int(v); },
                [p](const TrainConfig& c) { return std::to_string(c.*p); }};
      };
      auto dbl_field = [&m](const std::string& k, double TrainConfig::*p) {
        m[k] = {[p](TrainConfig& c, const std::string& v) { c.*p = parse_double(v); },
                [p](const TrainConfig& c) { return fmt_double(c.*p); }};
      };
      auto aux_field = [&m](const std::string& k, double AuxWeights::*p) {
        m[k] = {[p](TrainConfig& c, const std::string& v) { c.aux.*p = parse_double(v); },
                [p](const TrainConfig& c) { return fmt_double(c.aux.*p); }};
      };
      m["seed"] = {[](TrainConfig& c, const std::string& v) { c.seed = parse_size(v); },
                   [](const TrainConfig& c) { return std::to_string(c.seed); }};
      int_field("n_worlds", &TrainConfig::n_worlds);
      int_field("nodes_per_world", &TrainConfig::nodes_per_world);
      dbl_field("avg_degree", &TrainConfig::avg_degree);
      int_field("episodes_per_world", &TrainConfig::episodes_per_world);
      dbl_field("frac_train", &TrainConfig::frac_train);
      dbl_field("frac_val_seen", &TrainConfig::frac_val_seen);
      dbl_field("frac_val_unseen", &TrainConfig::frac_val_unseen);
      dbl_field("frac_test_unseen", &TrainConfig::frac_test_unseen);
      int_field("hidden", &TrainConfig::hidden);
      int_field("word_dim", &TrainConfig::word_dim);
      m["vision_query"] = {[](TrainConfig& c, const std::string& v) { c.vision_query = parse_vision_query(v); },
                           [](const TrainConfig& c) { return std::string(vision_query_name(c.vision_query)); }};
      int_field("iterations", &TrainConfig::iterations);
      int_field("batch_size", &TrainConfig::batch_size);
      int_field("eval_every", &TrainConfig::eval_every);
      int_field("probe_every", &TrainConfig::probe_every);
      dbl_field("learning_rate", &TrainConfig::learning_rate);
      dbl_field("momentum", &TrainConfig::momentum);
      dbl_field("clip_norm", &TrainConfig::clip_norm);
      dbl_field("gamma", &TrainConfig::gamma);
      dbl_field("value_weight", &TrainConfig::value_weight);
      m["use_rl"] = {[](TrainConfig& c, const std::string& v) { c.use_rl = parse_bool(v); },
                     [](const TrainConfig& c) { return std::string(c.use_rl ? "1" : "0"); }};
      dbl_field("success_radius", &TrainConfig::success_radius);
      int_field("max_steps", &TrainConfig::max_steps);
      aux_field("aux_speaker", &AuxWeights::speaker);
      aux_field("aux_progress", &AuxWeights::progress);
      aux_field("aux_matching", &AuxWeights::matching);
      aux_field("aux_angle", &AuxWeights::angle);
      m["progress_loss"] = {[](TrainConfig& c, const std::string& v) { c.progress_loss = parse_progress_loss(v); },
                            [](const TrainConfig& c) { return std::string(progress_loss_name(c.progress_loss)); }};
      m["angle_norm"] = {[](TrainConfig& c, const std::string& v) {
                           if (v == "l2") c.angle_norm = AngleNorm::L2;
                           else if (v == "l1") c.angle_norm = AngleNorm::L1;
                           else throw std::invalid_argument("angle_norm");
                         },
                         [](const TrainConfig& c) { return std::string(c.angle_norm == AngleNorm::L2 ? "l2" : "l1"); }};
      int_field("augment_samples", &TrainConfig::augment_samples);
      int_field("augment_iterations", &TrainConfig::augment_iterations);
      int_field("pre_explore_iterations", &TrainConfig::pre_explore_iterations);
      dbl_field("augment_aux_scale", &TrainConfig::augment_aux_scale);
      return m;
    }();
    return f;
  }

  static const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> s = [] {
      std::map<std::string, Setter> m;
      for (const auto& [k, f] : fields()) m[k] = f.set;
      return m;
    }();
    return s;
  }

  static const std::map<std::string, Getter>& getters() {
    static const std::map<std::string, Getter> g = [] {
      std::map<std::string, Getter> m;
      for (const auto& [k, f] : fields()) m[k] = f.get;
      return m;
    }();
    return g;
  }
};

// "speaker,progress,matching,angle" as four comma-separated weights.
inline AuxWeights parse_aux_weights(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    v.push_back(std::stod(item, &pos));
    if (pos != item.size()) throw std::invalid_argument("aux weights: bad number '" + item + "'");
  }
  if (v.size() != 4) throw std::invalid_argument("aux weights: expected speaker,progress,matching,angle");
  AuxWeights w{v[0], v[1], v[2], v[3]};
  w.validate();
  return w;
}

}  // namespace auxrn

// SPDX-License-Identifier: Apache-2.0
#include "cdiff/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace cdiff {

namespace {

struct Binding {
  const char* type;
  std::function<bool(Config&, const std::string&)> set;  // false on type mismatch
  std::function<std::string(const Config&)> get;
};

template <typename T>
bool parse_number(const std::string& s, T& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
Binding uint_key(T Config::*section, std::size_t T::*field) {
  return {"unsigned integer",
          [=](Config& c, const std::string& v) { return parse_number(v, (c.*section).*field); },
          [=](const Config& c) { return std::to_string((c.*section).*field); }};
}

template <typename T>
Binding double_key(T Config::*section, double T::*field) {
  return {"real", [=](Config& c, const std::string& v) { return parse_number(v, (c.*section).*field); },
          [=](const Config& c) { return fmt_double((c.*section).*field); }};
}

template <typename T>
Binding bool_key(T Config::*section, bool T::*field) {
  return {"boolean",
          [=](Config& c, const std::string& v) {
            if (v == "true" || v == "1") {
              (c.*section).*field = true;
            } else if (v == "false" || v == "0") {
              (c.*section).*field = false;
            } else {
              return false;
            }
            return true;
          },
          [=](const Config& c) { return std::string((c.*section).*field ? "true" : "false"); }};
}

const std::map<std::string, Binding>& bindings() {
  static const std::map<std::string, Binding> table = [] {
    std::map<std::string, Binding> m;
    m["run.seed"] = {"unsigned integer", [](Config& c, const std::string& v) { return parse_number(v, c.seed); },
                     [](const Config& c) { return std::to_string(c.seed); }};

    m["data.image_size"] = uint_key(&Config::scene, &SceneSpec::image_size);
    m["data.objects_min"] = uint_key(&Config::scene, &SceneSpec::objects_min);
    m["data.objects_max"] = uint_key(&Config::scene, &SceneSpec::objects_max);
    m["data.speckle_looks"] = double_key(&Config::scene, &SceneSpec::speckle_looks);
    m["data.discrepancy_prob"] = double_key(&Config::scene, &SceneSpec::discrepancy_prob);
    m["data.misalign_max"] = double_key(&Config::scene, &SceneSpec::misalign_max);
    m["data.polarization"] = {"single|full",
                              [](Config& c, const std::string& v) {
                                if (v == "single") {
                                  c.scene.polarization = Polarization::single;
                                } else if (v == "full") {
                                  c.scene.polarization = Polarization::full;
                                } else {
                                  return false;
                                }
                                return true;
                              },
                              [](const Config& c) {
                                return std::string(c.scene.polarization == Polarization::full ? "full" : "single");
                              }};
    m["data.count"] = {"unsigned integer", [](Config& c, const std::string& v) { return parse_number(v, c.data_count); },
                       [](const Config& c) { return std::to_string(c.data_count); }};
    m["data.sar_normalization"] = {"none|max|p99",
                                   [](Config& c, const std::string& v) {
                                     try {
                                       c.sar_normalization = parse_sar_normalization(v);
                                     } catch (const std::invalid_argument&) {
                                       return false;
                                     }
                                     return true;
                                   },
                                   [](const Config& c) {
                                     switch (c.sar_normalization) {
                                       case SarNormalization::max:
                                         return std::string("max");
                                       case SarNormalization::p99:
                                         return std::string("p99");
                                       default:
                                         return std::string("none");
                                     }
                                   }};

    m["diffusion.T"] = {"integer", [](Config& c, const std::string& v) { return parse_number(v, c.T); },
                        [](const Config& c) { return std::to_string(c.T); }};
    m["diffusion.beta_start"] = {"real", [](Config& c, const std::string& v) { return parse_number(v, c.beta_start); },
                                 [](const Config& c) { return fmt_double(c.beta_start); }};
    m["diffusion.beta_end"] = {"real", [](Config& c, const std::string& v) { return parse_number(v, c.beta_end); },
                               [](const Config& c) { return fmt_double(c.beta_end); }};
    m["inference.steps"] = {"integer", [](Config& c, const std::string& v) { return parse_number(v, c.inference_steps); },
                            [](const Config& c) { return std::to_string(c.inference_steps); }};
    m["inference.t_frac"] = {"real", [](Config& c, const std::string& v) { return parse_number(v, c.t_frac); },
                             [](const Config& c) { return fmt_double(c.t_frac); }};

    m["vae.epochs"] = uint_key(&Config::vae, &VaeTrainConfig::epochs);
    m["vae.batch_size"] = uint_key(&Config::vae, &VaeTrainConfig::batch_size);
    m["vae.lr"] = double_key(&Config::vae, &VaeTrainConfig::lr);
    m["vae.kl_weight"] = double_key(&Config::vae, &VaeTrainConfig::kl_weight);
    m["vae.augment"] = bool_key(&Config::vae, &VaeTrainConfig::augment);

    m["train.iterations"] = uint_key(&Config::train, &TrainConfig::iterations);
    m["train.warmup_steps"] = uint_key(&Config::train, &TrainConfig::warmup_steps);
    m["train.batch_size"] = uint_key(&Config::train, &TrainConfig::batch_size);
    m["train.lr"] = double_key(&Config::train, &TrainConfig::lr_init);
    m["train.weight_decay"] = double_key(&Config::train, &TrainConfig::weight_decay);
    m["train.grad_clip"] = double_key(&Config::train, &TrainConfig::grad_clip);
    m["train.eval_every"] = uint_key(&Config::train, &TrainConfig::eval_every);
    m["train.checkpoint_every"] = uint_key(&Config::train, &TrainConfig::checkpoint_every);
    m["model.base_channels"] = uint_key(&Config::train, &TrainConfig::base_channels);

    m["loss.beta"] = {"real", [](Config& c, const std::string& v) { return parse_number(v, c.train.loss.beta); },
                      [](const Config& c) { return fmt_double(c.train.loss.beta); }};
    m["loss.tau"] = {"real", [](Config& c, const std::string& v) { return parse_number(v, c.train.loss.tau); },
                     [](const Config& c) { return fmt_double(c.train.loss.tau); }};
    m["loss.stop_grad_weight"] = {"boolean",
                                  [](Config& c, const std::string& v) {
                                    if (v != "true" && v != "false" && v != "1" && v != "0") return false;
                                    c.train.loss.stop_grad_weight = v == "true" || v == "1";
                                    return true;
                                  },
                                  [](const Config& c) { return std::string(c.train.loss.stop_grad_weight ? "true" : "false"); }};
    m["loss.literal_weighting"] = {"boolean",
                             [](Config& c, const std::string& v) {
                               if (v != "true" && v != "false" && v != "1" && v != "0") return false;
                               c.train.loss.literal = v == "true" || v == "1";
                               return true;
                             },
                             [](const Config& c) { return std::string(c.train.loss.literal ? "true" : "false"); }};
    return m;
  }();
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void Config::apply_seed() {
  scene.seed = seed;
  vae.seed = seed;
  train.seed = seed;
}

std::string Config::to_text() const {
  std::string out;
  for (const auto& [key, b] : bindings()) out += key + " = " + b.get(*this) + "\n";
  return out;
}

void Config::validate() const {
  scene.validate();
  if (data_count == 0) throw ConfigError("data.count must be positive");
  if (inference_steps < 1 || inference_steps > T) throw ConfigError("inference.steps must lie in [1, diffusion.T]");
  if (!(t_frac > 0.0 && t_frac <= 1.0)) throw ConfigError("inference.t_frac must lie in (0, 1]");
  if (vae.epochs == 0 || vae.batch_size == 0) throw ConfigError("vae.epochs and vae.batch_size must be positive");
  try {
    (void)schedule();
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

Config parse_config_text(const std::string& text, const std::string& origin) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected `section.key = value`");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = bindings().find(key);
    if (it == bindings().end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (value.empty() || !it->second.set(cfg, value)) {
      throw ConfigError(where + "type mismatch for '" + key + "': expected " + it->second.type + ", got '" + value + "'");
    }
  }
  cfg.apply_seed();
  cfg.validate();
  return cfg;
}

Config parse_config(const std::filesystem::path& path) {
  if (path.empty()) {
    Config cfg;
    cfg.apply_seed();
    return cfg;
  }
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

}  // namespace cdiff

#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "sceneadapt/errors.hpp"
#include "sceneadapt/io.hpp"
#include "sceneadapt/losses.hpp"
#include "sceneadapt/random.hpp"
#include "sceneadapt/scenegen.hpp"

namespace sceneadapt {

using nlohmann::json;

// JSON text plus its origin, so that errors can point at a line.
struct ConfigSource {
  json doc = json::object();
  std::string text;
  std::string name = "<defaults>";

  std::string locate(const std::string& key) const {
    if (text.empty()) return name;
    const auto pos = text.find("\"" + key + "\"");
    if (pos == std::string::npos) return name;
    return name + ":" + std::to_string(1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
  }
};

inline ConfigSource parse_config_text(const std::string& text, const std::string& name) {
  ConfigSource src;
  src.text = text;
  src.name = name;
  try {
    src.doc = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto upto = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
    throw ConfigError(name + ":" + std::to_string(line) + ": invalid JSON: " + e.what());
  }
  if (!src.doc.is_object()) throw ConfigError(name + ":1: top level must be a JSON object");
  return src;
}

inline ConfigSource load_config_file(const fs::path& path) { return parse_config_text(read_file(path), path.string()); }

// Applies "a.b.c=value"; the value is parsed as JSON when possible, otherwise
// taken as a string.
inline void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

namespace detail {

// Reads fields from a JSON object, rejecting unknown keys and wrong types.
class FieldReader {
 public:
  FieldReader(const json& obj, const ConfigSource& src, std::string prefix = "")
      : obj_(obj), src_(src), prefix_(std::move(prefix)) {
    if (!obj_.is_object()) throw ConfigError(src_.locate(last_component()) + ": '" + path("") + "' must be an object");
  }

  template <class V>
  void read(const std::string& key, V& out) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    if (it == obj_.end() || it->is_null()) return;
    try {
      if constexpr (std::is_unsigned_v<V> && !std::is_same_v<V, bool>) {
        if (!it->is_number_unsigned()) throw ConfigError("expected a non-negative integer");
      } else if constexpr (std::is_integral_v<V> && !std::is_same_v<V, bool>) {
        if (!it->is_number_integer()) throw ConfigError("expected an integer");
      } else if constexpr (std::is_floating_point_v<V>) {
        if (!it->is_number()) throw ConfigError("expected a number");
      }
      out = it->template get<V>();
    } catch (const std::exception& e) {
      throw ConfigError(src_.locate(key) + ": field '" + path(key) + "': " + e.what());
    }
  }

  bool has(const std::string& key) const { return obj_.contains(key) && !obj_.at(key).is_null(); }
  void mark(const std::string& key) { seen_.insert(key); }

  FieldReader child(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    const auto it = obj_.find(key);
    return FieldReader(it == obj_.end() || it->is_null() ? empty : *it, src_, path(key));
  }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    throw ConfigError(src_.locate(key) + ": field '" + path(key) + "': " + msg);
  }

  void finish() const {
    for (const auto& [k, v] : obj_.items())
      if (!seen_.count(k)) throw ConfigError(src_.locate(k) + ": unknown field '" + path(k) + "'");
  }

 private:
  std::string path(const std::string& key) const { return prefix_.empty() ? key : (key.empty() ? prefix_ : prefix_ + "." + key); }
  std::string last_component() const {
    const auto dot = prefix_.rfind('.');
    return dot == std::string::npos ? prefix_ : prefix_.substr(dot + 1);
  }

  const json& obj_;
  const ConfigSource& src_;
  std::string prefix_;
  std::set<std::string> seen_;
};

}  // namespace detail

// ---- dataset generation -----------------------------------------------------

inline GenConfig parse_gen_config(const ConfigSource& src) {
  GenConfig cfg;
  detail::FieldReader r(src.doc, src);
  r.read("scenes", cfg.scenes);
  r.read("views", cfg.views);
  r.read("frames", cfg.frames);
  r.read("width", cfg.width);
  r.read("height", cfg.height);
  r.read("classes", cfg.classes);
  r.read("seed", cfg.seed);
  r.finish();
  if (cfg.frames == 0) r.fail("frames", "must be positive");
  if (cfg.width == 0 || cfg.height == 0) r.fail("width", "resolution must be positive");
  if (cfg.classes != 8 && cfg.classes != 13) r.fail("classes", "must be 8 or 13");
  if (cfg.scenes.empty()) r.fail("scenes", "must be non-empty");
  for (const int s : cfg.scenes)
    if (s < 1) r.fail("scenes", "scene ids start at 1");
  for (const auto& v : cfg.views)
    if (v != "A" && v != "B") r.fail("views", "unknown view id '" + v + "' (expected A or B)");
  return cfg;
}

inline json gen_config_to_json(const GenConfig& c) {
  return {{"scenes", c.scenes}, {"views", c.views},   {"frames", c.frames}, {"width", c.width},
          {"height", c.height}, {"classes", c.classes}, {"seed", c.seed}};
}

// ---- experiments ------------------------------------------------------------

enum class Method { NA, FT, WARP, SceneAdapt };
enum class AdaptationKind { PointOfView, Scene };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::NA: return "NA";
    case Method::FT: return "FT";
    case Method::WARP: return "WARP";
    case Method::SceneAdapt: return "SceneAdapt";
  }
  return "?";
}

inline std::string to_string(AdaptationKind k) { return k == AdaptationKind::PointOfView ? "point-of-view" : "scene"; }

inline AdaptationKind adaptation_kind(const std::string& source, const std::string& target) {
  const auto [sv, ss] = parse_subset(source);
  const auto [tv, ts] = parse_subset(target);
  return ss == ts && sv != tv ? AdaptationKind::PointOfView : AdaptationKind::Scene;
}

struct ExperimentConfig {
  Method method = Method::SceneAdapt;
  std::string dataset = "data/manifest.json";
  std::string source = "A1";
  std::string target = "B1";
  AdaptationKind adaptation = AdaptationKind::PointOfView;
  LossToggles losses{true, true, true};
  LossWeights weights{};
  GeneratorObjective gan_objective = GeneratorObjective::NonSaturating;
  std::size_t net_width = 16;
  std::size_t net_depth = 3;
  std::string optimizer = "auto";  // auto: SGD for supervised baselines, Adam for SceneAdapt
  double sgd_lr = 0.007, sgd_momentum = 0.9, sgd_weight_decay = 0.0, poly_power = 0.9;
  double adam_lr = 0.0002, adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
  std::size_t epochs = 40;
  std::size_t batch_size = 4;
  std::size_t iterations = 3000;
  std::size_t eval_every_epochs = 1;
  std::size_t eval_every_iterations = 250;
  std::uint64_t seed = 0;
  std::string out = "runs/default";

  bool supervised() const { return method != Method::SceneAdapt; }
  bool uses_adam() const { return optimizer == "adam" || (optimizer == "auto" && !supervised()); }
};

inline json config_to_json(const ExperimentConfig& c) {
  return {{"method", to_string(c.method)},
          {"dataset", c.dataset},
          {"source", c.source},
          {"target", c.target},
          {"adaptation", to_string(c.adaptation)},
          {"losses", {{"sem", c.losses.sem}, {"rec", c.losses.rec}, {"gan", c.losses.gan}}},
          {"weights", {{"sem", c.weights.sem}, {"rec", c.weights.rec}, {"gan", c.weights.gan}}},
          {"gan_objective", c.gan_objective == GeneratorObjective::Minimax ? "minimax" : "non-saturating"},
          {"net", {{"width", c.net_width}, {"depth", c.net_depth}}},
          {"optimizer", c.optimizer},
          {"sgd", {{"lr", c.sgd_lr}, {"momentum", c.sgd_momentum}, {"weight_decay", c.sgd_weight_decay},
                   {"poly_power", c.poly_power}}},
          {"adam", {{"lr", c.adam_lr}, {"beta1", c.adam_beta1}, {"beta2", c.adam_beta2}, {"eps", c.adam_eps}}},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"iterations", c.iterations},
          {"eval_every_epochs", c.eval_every_epochs},
          {"eval_every_iterations", c.eval_every_iterations},
          {"seed", c.seed},
          {"out", c.out}};
}

// Identifies the experiment; the output location is not part of it.
inline std::uint64_t config_digest(const ExperimentConfig& c) {
  json j = config_to_json(c);
  j.erase("out");
  return fnv1a64(j.dump());
}

inline ExperimentConfig parse_experiment_config(const ConfigSource& src) {
  ExperimentConfig c;
  detail::FieldReader r(src.doc, src);

  std::string method = "SceneAdapt";
  r.read("method", method);
  if (method == "NA") c.method = Method::NA;
  else if (method == "FT") c.method = Method::FT;
  else if (method == "WARP") c.method = Method::WARP;
  else if (method == "SceneAdapt") c.method = Method::SceneAdapt;
  else r.fail("method", "unknown method '" + method + "' (expected NA, FT, WARP or SceneAdapt)");

  r.read("dataset", c.dataset);
  r.read("source", c.source);
  r.read("target", c.target);
  for (const char* key : {"source", "target"}) {
    try {
      const auto [view, scene] = parse_subset(key[0] == 's' ? c.source : c.target);
      if (view != "A" && view != "B") r.fail(key, "unknown view '" + view + "' (expected A or B)");
      if (scene < 1) r.fail(key, "scene ids start at 1");
    } catch (const ConfigError& e) {
      r.fail(key, e.what());
    }
  }
  if (c.source == c.target) r.fail("target", "source and target subsets must differ");
  c.adaptation = adaptation_kind(c.source, c.target);
  if (r.has("adaptation")) {
    std::string kind;
    r.read("adaptation", kind);
    if (kind != "point-of-view" && kind != "scene") r.fail("adaptation", "expected 'point-of-view' or 'scene'");
    if (kind != to_string(c.adaptation))
      r.fail("adaptation", "'" + kind + "' contradicts the pair " + c.source + "-" + c.target + " (" +
                               to_string(c.adaptation) + ")");
  }
  r.mark("adaptation");

  c.losses = c.supervised() ? LossToggles{true, false, false} : LossToggles{true, true, true};
  {
    auto l = r.child("losses");
    l.read("sem", c.losses.sem);
    l.read("rec", c.losses.rec);
    l.read("gan", c.losses.gan);
    l.finish();
    if (!c.losses.sem) l.fail("sem", "the semantic loss cannot be disabled");
    if (c.supervised() && (c.losses.rec || c.losses.gan))
      l.fail(c.losses.rec ? "rec" : "gan", "baseline " + method + " trains with the semantic loss only");
    if (!c.supervised() && !c.losses.rec && !c.losses.gan)
      l.fail("rec", "SceneAdapt needs at least one of the rec and gan losses");
  }
  {
    auto w = r.child("weights");
    w.read("sem", c.weights.sem);
    w.read("rec", c.weights.rec);
    w.read("gan", c.weights.gan);
    w.finish();
  }
  std::string objective = "non-saturating";
  r.read("gan_objective", objective);
  if (objective == "minimax") c.gan_objective = GeneratorObjective::Minimax;
  else if (objective != "non-saturating") r.fail("gan_objective", "expected 'non-saturating' or 'minimax'");
  {
    auto n = r.child("net");
    n.read("width", c.net_width);
    n.read("depth", c.net_depth);
    n.finish();
    if (c.net_width == 0) n.fail("width", "must be positive");
    if (c.net_depth == 0 || c.net_depth > 6) n.fail("depth", "must be in [1, 6]");
  }
  r.read("optimizer", c.optimizer);
  if (c.optimizer != "auto" && c.optimizer != "sgd" && c.optimizer != "adam")
    r.fail("optimizer", "expected 'auto', 'sgd' or 'adam'");
  {
    auto s = r.child("sgd");
    s.read("lr", c.sgd_lr);
    s.read("momentum", c.sgd_momentum);
    s.read("weight_decay", c.sgd_weight_decay);
    s.read("poly_power", c.poly_power);
    s.finish();
  }
  {
    auto a = r.child("adam");
    a.read("lr", c.adam_lr);
    a.read("beta1", c.adam_beta1);
    a.read("beta2", c.adam_beta2);
    a.read("eps", c.adam_eps);
    a.finish();
  }
  r.read("epochs", c.epochs);
  r.read("batch_size", c.batch_size);
  r.read("iterations", c.iterations);
  r.read("eval_every_epochs", c.eval_every_epochs);
  r.read("eval_every_iterations", c.eval_every_iterations);
  r.read("seed", c.seed);
  r.read("out", c.out);
  r.finish();

  if (c.epochs == 0) r.fail("epochs", "must be positive");
  if (c.batch_size == 0) r.fail("batch_size", "must be positive");
  if (c.iterations == 0) r.fail("iterations", "must be positive");
  if (c.eval_every_epochs == 0) r.fail("eval_every_epochs", "must be positive");
  if (c.eval_every_iterations == 0) r.fail("eval_every_iterations", "must be positive");
  if (c.method == Method::WARP && c.adaptation != AdaptationKind::PointOfView)
    r.fail("method", "WARP applies to point-of-view pairs only; " + c.source + "-" + c.target + " is a scene pair");
  return c;
}

// Defaults, then the optional file, then key=value overrides, then the seed flag.
inline ExperimentConfig resolve_experiment_config(const std::optional<fs::path>& file,
                                                  const std::vector<std::string>& overrides,
                                                  std::optional<std::uint64_t> seed = std::nullopt) {
  ConfigSource src = file ? load_config_file(*file) : ConfigSource{};
  if (!file && !overrides.empty()) src.name = "<overrides>";
  for (const auto& o : overrides) apply_override(src.doc, o);
  if (seed) src.doc["seed"] = *seed;
  return parse_experiment_config(src);
}

}  // namespace sceneadapt

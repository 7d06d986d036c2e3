#include "waferscope/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "waferscope/error.hpp"

namespace waferscope {
namespace {

// Reads typed fields out of one JSON object and rejects keys it never saw.
class Reader {
 public:
  Reader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(label() + "expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(label() + key + ": wrong type");
    }
  }

  template <class Fn>
  void with(const char* key, Fn&& fn) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it != j_.end()) fn(*it, where_.empty() ? std::string(key) : where_ + "." + key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      (void)v;
      if (!seen_.count(k)) throw ConfigError(label() + "unknown key \"" + k + "\"");
    }
  }

 private:
  std::string label() const { return where_.empty() ? std::string() : where_ + ": "; }

  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

ClassLabel label_or_config_error(const nlohmann::json& v, const std::string& where) {
  if (!v.is_string()) throw ConfigError(where + ": expected a class name");
  const auto l = parse_label(v.get<std::string>());
  if (!l) throw ConfigError(where + ": unknown class \"" + v.get<std::string>() + "\"");
  return *l;
}

std::vector<ClassLabel> labels_from(const nlohmann::json& v, const std::string& where) {
  if (!v.is_array()) throw ConfigError(where + ": expected an array of class names");
  std::vector<ClassLabel> out;
  for (const auto& e : v) out.push_back(label_or_config_error(e, where));
  return out;
}

Json labels_to_json(std::span<const ClassLabel> ls) {
  Json a = Json::array();
  for (ClassLabel l : ls) a.push_back(std::string(label_name(l)));
  return a;
}

std::vector<ScorerKind> scorers_from(const nlohmann::json& v, const std::string& where) {
  if (!v.is_array()) throw ConfigError(where + ": expected an array of scorer names");
  std::vector<ScorerKind> out;
  for (const auto& e : v) {
    if (!e.is_string()) throw ConfigError(where + ": expected a scorer name");
    out.push_back(parse_scorer(e.get<std::string>()));
  }
  return out;
}

Json to_json(const ClassTransformSet& t) {
  Json j;
  j["rotations"] = t.rotations;
  j["flip"] = t.flip;
  j["max_translation"] = t.max_translation;
  j["noise"] = t.noise;
  j["mixing"] = t.mixing;
  j["mix_probability"] = t.mix_probability;
  j["mix_sources"] = t.mix_sources;
  return j;
}

ClassTransformSet transform_set_from(const nlohmann::json& j, const std::string& where) {
  ClassTransformSet t;
  Reader r(j, where);
  r.get("rotations", t.rotations);
  r.get("flip", t.flip);
  r.get("max_translation", t.max_translation);
  r.get("noise", t.noise);
  r.get("mixing", t.mixing);
  r.get("mix_probability", t.mix_probability);
  r.get("mix_sources", t.mix_sources);
  r.finish();
  return t;
}

SscnConfig sscn_from(const nlohmann::json& j, const std::string& where) {
  SscnConfig c;
  Reader r(j, where);
  r.get("num_blocks", c.num_blocks);
  r.get("block_channels", c.block_channels);
  r.get("kernel_size", c.kernel_size);
  r.get("kernel_sizes", c.kernel_sizes);
  r.get("input_channels", c.input_channels);
  r.get("latent_dim", c.latent_dim);
  r.get("num_classes", c.num_classes);
  r.get("grid_size", c.grid_size);
  r.get("bn_eps", c.bn_eps);
  r.get("bn_momentum", c.bn_momentum);
  r.get("seed", c.seed);
  r.finish();
  return c;
}

TrainConfig train_from(const nlohmann::json& j, const std::string& where) {
  TrainConfig c;
  Reader r(j, where);
  r.get("learning_rate", c.learning_rate);
  r.get("beta1", c.beta1);
  r.get("beta2", c.beta2);
  r.get("adam_eps", c.adam_eps);
  r.get("batch_size", c.batch_size);
  r.get("epochs", c.epochs);
  r.get("seed", c.seed);
  r.finish();
  return c;
}

AugmentationPolicy augmentation_from(const nlohmann::json& j, const std::string& where) {
  AugmentationPolicy p;
  Reader r(j, where);
  r.get("enabled", p.enabled);
  r.get("rotations", p.rotations);
  r.get("flip", p.flip);
  r.get("translation_fraction", p.translation_fraction);
  r.get("noise", p.noise);
  r.with("mixing_classes", [&](const nlohmann::json& v, const std::string& w) { p.mixing_classes = labels_from(v, w); });
  r.get("mix_probability", p.mix_probability);
  r.get("mix_sources", p.mix_sources);
  r.get("mix_resample_fraction", p.mix_resample_fraction);
  r.get("fit_versions", p.fit_versions);
  r.with("overrides", [&](const nlohmann::json& v, const std::string& w) {
    if (!v.is_object()) throw ConfigError(w + ": expected an object keyed by class name");
    for (const auto& [k, set] : v.items()) {
      const auto l = parse_label(k);
      if (!l) throw ConfigError(w + ": unknown class \"" + k + "\"");
      p.overrides[*l] = transform_set_from(set, w + "." + k);
    }
  });
  r.finish();
  return p;
}

GmmFitOptions gmm_from(const nlohmann::json& j, const std::string& where) {
  GmmFitOptions o;
  Reader r(j, where);
  r.get("components", o.components);
  r.with("init", [&](const nlohmann::json& v, const std::string& w) {
    const std::string s = v.is_string() ? v.get<std::string>() : std::string();
    if (s == "labels") {
      o.init = GmmInit::Labels;
    } else if (s == "kmeans++") {
      o.init = GmmInit::KMeansPlusPlus;
    } else {
      throw ConfigError(w + ": expected \"labels\" or \"kmeans++\"");
    }
  });
  r.get("tol", o.tol);
  r.get("max_iter", o.max_iter);
  r.get("ridge_scale", o.ridge_scale);
  r.get("max_condition", o.max_condition);
  r.get("seed", o.seed);
  r.finish();
  return o;
}

Json to_json(const GmmFitOptions& o) {
  Json j;
  j["components"] = o.components;
  j["init"] = o.init == GmmInit::Labels ? "labels" : "kmeans++";
  j["tol"] = o.tol;
  j["max_iter"] = o.max_iter;
  j["ridge_scale"] = o.ridge_scale;
  j["max_condition"] = o.max_condition;
  j["seed"] = o.seed;
  return j;
}

ScorerOptions scorer_options_from(const nlohmann::json& j, const std::string& where) {
  ScorerOptions o;
  Reader r(j, where);
  r.get("openmax_tail", o.openmax_tail);
  r.get("ci_lambda", o.ci_lambda);
  r.get("iforest_trees", o.iforest_trees);
  r.get("iforest_subsample", o.iforest_subsample);
  r.with("gmm", [&](const nlohmann::json& v, const std::string& w) { o.gmm = gmm_from(v, w); });
  r.get("seed", o.seed);
  r.finish();
  return o;
}

Json to_json(const SynthParams& p) {
  Json j = Json::object();
  if (p.noise_lambda) j["noise_lambda"] = *p.noise_lambda;
  if (p.count) j["count"] = *p.count;
  if (p.radius_fraction) j["radius_fraction"] = *p.radius_fraction;
  if (p.width_fraction) j["width_fraction"] = *p.width_fraction;
  if (p.angle_span) j["angle_span"] = *p.angle_span;
  return j;
}

template <class T>
void get_optional(Reader& r, const char* key, std::optional<T>& out) {
  r.with(key, [&](const nlohmann::json& v, const std::string& w) {
    if (v.is_null()) return;
    try {
      out = v.get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(w + ": wrong type");
    }
  });
}

SynthSettings synth_from(const nlohmann::json& j, const std::string& where) {
  SynthSettings s;
  Reader r(j, where);
  r.with("counts", [&](const nlohmann::json& v, const std::string& w) {
    if (!v.is_object()) throw ConfigError(w + ": expected an object keyed by class name");
    s.counts.clear();
    for (const auto& [k, n] : v.items()) {
      const auto l = parse_label(k);
      if (!l) throw ConfigError(w + ": unknown class \"" + k + "\"");
      if (!n.is_number_integer() || n.get<long long>() < 0) throw ConfigError(w + "." + k + ": expected a count >= 0");
      s.counts[*l] = n.get<int>();
    }
  });
  r.get("radius_fraction", s.radius_fraction);
  r.with("params", [&](const nlohmann::json& v, const std::string& w) {
    Reader pr(v, w);
    get_optional(pr, "noise_lambda", s.params.noise_lambda);
    get_optional(pr, "count", s.params.count);
    get_optional(pr, "radius_fraction", s.params.radius_fraction);
    get_optional(pr, "width_fraction", s.params.width_fraction);
    get_optional(pr, "angle_span", s.params.angle_span);
    pr.finish();
  });
  r.finish();
  return s;
}

}  // namespace

Json to_json(const SscnConfig& c) {
  Json j;
  j["num_blocks"] = c.num_blocks;
  j["block_channels"] = c.block_channels;
  j["kernel_size"] = c.kernel_size;
  j["kernel_sizes"] = c.kernel_sizes;
  j["input_channels"] = c.input_channels;
  j["latent_dim"] = c.latent_dim;
  j["num_classes"] = c.num_classes;
  j["grid_size"] = c.grid_size;
  j["bn_eps"] = c.bn_eps;
  j["bn_momentum"] = c.bn_momentum;
  j["seed"] = c.seed;
  return j;
}

SscnConfig sscn_config_from_json(const nlohmann::json& j) { return sscn_from(j, "network"); }

Json to_json(const TrainConfig& c) {
  Json j;
  j["learning_rate"] = c.learning_rate;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["adam_eps"] = c.adam_eps;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["seed"] = c.seed;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) { return train_from(j, "train"); }

Json to_json(const AugmentationPolicy& p) {
  Json j;
  j["enabled"] = p.enabled;
  j["rotations"] = p.rotations;
  j["flip"] = p.flip;
  j["translation_fraction"] = p.translation_fraction;
  j["noise"] = p.noise;
  j["mixing_classes"] = labels_to_json(p.mixing_classes);
  j["mix_probability"] = p.mix_probability;
  j["mix_sources"] = p.mix_sources;
  j["mix_resample_fraction"] = p.mix_resample_fraction;
  j["fit_versions"] = p.fit_versions;
  Json o = Json::object();
  for (const auto& [l, t] : p.overrides) o[std::string(label_name(l))] = to_json(t);
  j["overrides"] = o;
  return j;
}

AugmentationPolicy augmentation_from_json(const nlohmann::json& j) { return augmentation_from(j, "augmentation"); }

Json to_json(const ScorerOptions& o) {
  Json j;
  j["openmax_tail"] = o.openmax_tail;
  j["ci_lambda"] = o.ci_lambda;
  j["iforest_trees"] = o.iforest_trees;
  j["iforest_subsample"] = o.iforest_subsample;
  j["gmm"] = to_json(o.gmm);
  j["seed"] = o.seed;
  return j;
}

ScorerOptions scorer_options_from_json(const nlohmann::json& j) { return scorer_options_from(j, "scorer_options"); }

void ExperimentConfig::validate() const {
  network.validate();
  train.validate();
  augmentation.validate();
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in (0, 1]");
  if (tta < 1) throw ConfigError("N must be at least 1");
  if (!(synth.radius_fraction > 0.0 && synth.radius_fraction <= 0.5))
    throw ConfigError("synth.radius_fraction must be in (0, 0.5]");
  double sum = 0.0;
  for (double f : split) {
    if (!(f >= 0.0)) throw ConfigError("split fractions must be non-negative");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test_fraction must be in (0, 1)");
  if (scorer_options.openmax_tail < 1) throw ConfigError("openmax_tail must be at least 1");
  if (!(scorer_options.ci_lambda > 0.0)) throw ConfigError("ci_lambda must be positive");
  if (scorer_options.iforest_trees < 1 || scorer_options.iforest_subsample < 2)
    throw ConfigError("iforest needs at least 1 tree and a subsample of at least 2");
  if (scorer_options.gmm.components < 1) throw ConfigError("gmm.components must be at least 1");
  if (loo_scorers.empty()) throw ConfigError("loo.scorers must not be empty");
  if (workers < 0) throw ConfigError("loo.workers must be non-negative");
  for (ClassLabel l : held_out)
    if (l == ClassLabel::Normal) throw ConfigError("Normal is always known and cannot be held out");
}

LooConfig ExperimentConfig::loo() const {
  LooConfig c;
  c.network = network;
  c.train = train;
  c.augmentation = augmentation;
  c.scorer = scorer_options;
  c.scorers = loo_scorers;
  c.test_fraction = test_fraction;
  c.split = split;
  c.tta = tta;
  c.alpha = alpha;
  c.seed = seeds.split ^ (seeds.train << 1) ^ (seeds.eval << 2);
  c.held_out = held_out;
  c.workers = workers;
  return c;
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  Reader r(j, "");
  r.with("paths", [&](const nlohmann::json& v, const std::string& w) {
    Reader pr(v, w);
    pr.get("dataset", c.paths.dataset);
    pr.get("checkpoint", c.paths.checkpoint);
    pr.get("scorer", c.paths.scorer);
    pr.get("reports", c.paths.reports);
    pr.finish();
  });
  r.with("network", [&](const nlohmann::json& v, const std::string& w) { c.network = sscn_from(v, w); });
  r.with("train", [&](const nlohmann::json& v, const std::string& w) { c.train = train_from(v, w); });
  r.with("augmentation", [&](const nlohmann::json& v, const std::string& w) { c.augmentation = augmentation_from(v, w); });
  r.with("scorer", [&](const nlohmann::json& v, const std::string& w) {
    if (!v.is_string()) throw ConfigError(w + ": expected a scorer name");
    c.scorer = parse_scorer(v.get<std::string>());
  });
  r.with("scorer_options", [&](const nlohmann::json& v, const std::string& w) { c.scorer_options = scorer_options_from(v, w); });
  r.get("alpha", c.alpha);
  r.get("N", c.tta);
  r.with("seeds", [&](const nlohmann::json& v, const std::string& w) {
    Reader sr(v, w);
    sr.get("data", c.seeds.data);
    sr.get("split", c.seeds.split);
    sr.get("train", c.seeds.train);
    sr.get("eval", c.seeds.eval);
    sr.finish();
  });
  r.with("synth", [&](const nlohmann::json& v, const std::string& w) { c.synth = synth_from(v, w); });
  r.get("split", c.split);
  r.get("test_fraction", c.test_fraction);
  r.with("loo", [&](const nlohmann::json& v, const std::string& w) {
    Reader lr(v, w);
    lr.with("scorers", [&](const nlohmann::json& s, const std::string& ww) { c.loo_scorers = scorers_from(s, ww); });
    lr.with("held_out", [&](const nlohmann::json& s, const std::string& ww) { c.held_out = labels_from(s, ww); });
    lr.get("workers", c.workers);
    lr.finish();
  });
  r.finish();
  c.validate();
  return c;
}

ExperimentConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  ExperimentConfig c = parse_config(ss.str());
  const auto base = path.parent_path();
  for (std::string* p : {&c.paths.dataset, &c.paths.checkpoint, &c.paths.scorer, &c.paths.reports}) {
    if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (base / *p).lexically_normal().string();
  }
  return c;
}

Json to_json(const ExperimentConfig& c) {
  Json j;
  j["paths"] = {{"dataset", c.paths.dataset},
                {"checkpoint", c.paths.checkpoint},
                {"scorer", c.paths.scorer},
                {"reports", c.paths.reports}};
  j["network"] = to_json(c.network);
  j["train"] = to_json(c.train);
  j["augmentation"] = to_json(c.augmentation);
  j["scorer"] = std::string(scorer_name(c.scorer));
  j["scorer_options"] = to_json(c.scorer_options);
  j["alpha"] = c.alpha;
  j["N"] = c.tta;
  j["seeds"] = {{"data", c.seeds.data}, {"split", c.seeds.split}, {"train", c.seeds.train}, {"eval", c.seeds.eval}};
  Json counts = Json::object();
  for (const auto& [l, n] : c.synth.counts) counts[std::string(label_name(l))] = n;
  j["synth"] = {{"counts", counts}, {"radius_fraction", c.synth.radius_fraction}, {"params", to_json(c.synth.params)}};
  j["split"] = c.split;
  j["test_fraction"] = c.test_fraction;
  Json sc = Json::array();
  for (ScorerKind k : c.loo_scorers) sc.push_back(std::string(scorer_name(k)));
  j["loo"] = {{"scorers", sc}, {"held_out", labels_to_json(c.held_out)}, {"workers", c.workers}};
  return j;
}

std::string config_hash(const Json& canonical) {
  const std::string s = canonical.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const ExperimentConfig& cfg) {
  Json j = to_json(cfg);
  j.erase("paths");
  return config_hash(j);
}

}  // namespace waferscope

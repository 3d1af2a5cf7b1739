#include "pbn/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "pbn/errors.hpp"

namespace pbn {

using json = nlohmann::ordered_json;

const char* application_name(ApplicationKind k) {
  return k == ApplicationKind::SrDesign ? "sr_design" : "mri_prior";
}

const char* engine_name(EngineKind k) {
  switch (k) {
    case EngineKind::Standard: return "standard";
    case EngineKind::MemoryEfficient: return "memory_efficient";
    case EngineKind::Hybrid: return "hybrid";
  }
  return "?";
}

namespace {

[[noreturn]] void bad(const std::string& msg) { raise(ErrorKind::Config, msg); }

void reject_unknown(const json& obj, const std::set<std::string>& known,
                    const std::string& scope) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!known.count(it.key())) {
      bad("unknown key '" + (scope.empty() ? it.key() : scope + "." + it.key()) + "'");
    }
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    bad(std::string("key '") + key + "' has the wrong type");
  }
}

ApplicationKind parse_application(const std::string& s) {
  if (s == "sr_design") return ApplicationKind::SrDesign;
  if (s == "mri_prior") return ApplicationKind::MriPrior;
  bad("unknown application '" + s + "'");
}

EngineKind parse_engine(const std::string& s) {
  if (s == "standard") return EngineKind::Standard;
  if (s == "memory_efficient") return EngineKind::MemoryEfficient;
  if (s == "hybrid") return EngineKind::Hybrid;
  bad("unknown engine '" + s + "'");
}

OptimizerConfig::Method parse_method(const std::string& s) {
  if (s == "sgd") return OptimizerConfig::Method::Sgd;
  if (s == "adam") return OptimizerConfig::Method::Adam;
  bad("unknown optimizer method '" + s + "'");
}

ExperimentConfig from_json(const json& j) {
  if (!j.is_object()) bad("config root must be an object");
  reject_unknown(j,
                 {"schema_version", "application", "seed", "image_size", "unrolls",
                  "fixed_point_iters", "engine", "checkpoint_every", "epochs",
                  "batch_size", "noise_std", "train_examples", "test_examples",
                  "optimizer", "alpha_scale", "learn", "sr", "mri",
                  "shadow_diagnostics"},
                 "");
  ExperimentConfig cfg;
  if (!j.contains("schema_version")) bad("missing schema_version");
  read(j, "schema_version", cfg.schema_version);
  if (cfg.schema_version != 1) {
    bad("unsupported schema_version " + std::to_string(cfg.schema_version));
  }
  if (!j.contains("seed")) bad("missing seed (mandatory for reproducibility)");
  read(j, "seed", cfg.seed);
  if (j.contains("application")) {
    cfg.application = parse_application(j.at("application").get<std::string>());
  }
  read(j, "image_size", cfg.image_size);
  read(j, "unrolls", cfg.unrolls);
  read(j, "fixed_point_iters", cfg.fixed_point_iters);
  if (j.contains("engine")) cfg.engine = parse_engine(j.at("engine").get<std::string>());
  read(j, "checkpoint_every", cfg.checkpoint_every);
  read(j, "epochs", cfg.epochs);
  read(j, "batch_size", cfg.batch_size);
  read(j, "noise_std", cfg.noise_std);
  read(j, "train_examples", cfg.train_examples);
  read(j, "test_examples", cfg.test_examples);
  read(j, "alpha_scale", cfg.alpha_scale);
  read(j, "shadow_diagnostics", cfg.shadow_diagnostics);

  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    reject_unknown(o, {"method", "lr", "beta1", "beta2", "eps"}, "optimizer");
    if (o.contains("method")) {
      cfg.optimizer.method = parse_method(o.at("method").get<std::string>());
    }
    read(o, "lr", cfg.optimizer.lr);
    read(o, "beta1", cfg.optimizer.beta1);
    read(o, "beta2", cfg.optimizer.beta2);
    read(o, "eps", cfg.optimizer.eps);
  }
  if (j.contains("learn")) {
    const json& o = j.at("learn");
    reject_unknown(o, {"design", "alpha", "prox_strength", "prior"}, "learn");
    read(o, "design", cfg.learn.design);
    read(o, "alpha", cfg.learn.alpha);
    read(o, "prox_strength", cfg.learn.prox_strength);
    read(o, "prior", cfg.learn.prior);
  }
  if (j.contains("sr")) {
    const json& o = j.at("sr");
    reject_unknown(o, {"sources", "channels", "prox_lambda_scale"}, "sr");
    read(o, "sources", cfg.sr.sources);
    read(o, "channels", cfg.sr.channels);
    read(o, "prox_lambda_scale", cfg.sr.prox_lambda_scale);
  }
  if (j.contains("mri")) {
    const json& o = j.at("mri");
    reject_unknown(o,
                   {"coils", "acceleration", "center_fraction", "hidden_channels",
                    "kernel_size", "lipschitz_budget", "share_prior"},
                   "mri");
    read(o, "coils", cfg.mri.coils);
    read(o, "acceleration", cfg.mri.acceleration);
    read(o, "center_fraction", cfg.mri.center_fraction);
    read(o, "hidden_channels", cfg.mri.hidden_channels);
    read(o, "kernel_size", cfg.mri.kernel_size);
    read(o, "lipschitz_budget", cfg.mri.lipschitz_budget);
    read(o, "share_prior", cfg.mri.share_prior);
  }

  if (cfg.image_size == 0 || cfg.unrolls == 0 || cfg.fixed_point_iters == 0) {
    bad("image_size, unrolls and fixed_point_iters must be positive");
  }
  if (cfg.checkpoint_every == 0) bad("checkpoint_every must be positive");
  if (cfg.noise_std < 0.0) bad("noise_std must be >= 0");
  if (cfg.train_examples == 0) bad("train_examples must be positive");
  return cfg;
}

json merge_override(json root, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) bad("override must look like key=value: " + spec);
  const std::string path = spec.substr(0, eq);
  const std::string raw = spec.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;  // unquoted strings: engine=standard
  }
  json* node = &root;
  std::size_t begin = 0;
  while (true) {
    const auto dot = path.find('.', begin);
    const std::string key = path.substr(begin, dot - begin);
    if (key.empty()) bad("empty key segment in override: " + spec);
    if (dot == std::string::npos) {
      (*node)[key] = value;
      break;
    }
    if (!node->contains(key) || !(*node)[key].is_object()) (*node)[key] = json::object();
    node = &(*node)[key];
    begin = dot + 1;
  }
  return root;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    bad(std::string("malformed JSON: ") + e.what());
  }
  return from_json(j);
}

ExperimentConfig load_config_file(const std::string& path) {
  return load_config_file(path, {});
}

ExperimentConfig load_config_file(const std::string& path,
                                  const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) raise(ErrorKind::Io, "cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::exception& e) {
    bad(std::string("malformed JSON in ") + path + ": " + e.what());
  }
  for (const auto& o : overrides) j = merge_override(std::move(j), o);
  return from_json(j);
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["schema_version"] = cfg.schema_version;
  j["application"] = application_name(cfg.application);
  j["seed"] = cfg.seed;
  j["image_size"] = cfg.image_size;
  j["unrolls"] = cfg.unrolls;
  j["fixed_point_iters"] = cfg.fixed_point_iters;
  j["engine"] = engine_name(cfg.engine);
  j["checkpoint_every"] = cfg.checkpoint_every;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["noise_std"] = cfg.noise_std;
  j["train_examples"] = cfg.train_examples;
  j["test_examples"] = cfg.test_examples;
  j["optimizer"] = {
      {"method", cfg.optimizer.method == OptimizerConfig::Method::Adam ? "adam" : "sgd"},
      {"lr", cfg.optimizer.lr},
      {"beta1", cfg.optimizer.beta1},
      {"beta2", cfg.optimizer.beta2},
      {"eps", cfg.optimizer.eps}};
  j["alpha_scale"] = cfg.alpha_scale;
  j["learn"] = {{"design", cfg.learn.design},
                {"alpha", cfg.learn.alpha},
                {"prox_strength", cfg.learn.prox_strength},
                {"prior", cfg.learn.prior}};
  j["sr"] = {{"sources", cfg.sr.sources},
             {"channels", cfg.sr.channels},
             {"prox_lambda_scale", cfg.sr.prox_lambda_scale}};
  j["mri"] = {{"coils", cfg.mri.coils},
              {"acceleration", cfg.mri.acceleration},
              {"center_fraction", cfg.mri.center_fraction},
              {"hidden_channels", cfg.mri.hidden_channels},
              {"kernel_size", cfg.mri.kernel_size},
              {"lipschitz_budget", cfg.mri.lipschitz_budget},
              {"share_prior", cfg.mri.share_prior}};
  j["shadow_diagnostics"] = cfg.shadow_diagnostics;
  return j.dump(2);
}

}  // namespace pbn

#include "srl4h/cli/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "srl4h/errors.hpp"

namespace srl4h::cli {

namespace {

using nlohmann::json;

template <typename T>
const char* type_label() {
  if constexpr (std::is_same_v<T, bool>) {
    return "a boolean";
  } else if constexpr (std::is_integral_v<T>) {
    return "an integer";
  } else if constexpr (std::is_floating_point_v<T>) {
    return "a number";
  } else if constexpr (std::is_same_v<T, std::string>) {
    return "a string";
  } else {
    return "a list";
  }
}

// Reads keys out of one JSON section and remembers which ones were used.
class Section {
 public:
  Section(const json& doc, std::string name) : name_(std::move(name)) {
    if (doc.contains(name_)) {
      if (!doc[name_].is_object()) throw ConfigError(name_ + ": section must be an object");
      obj_ = &doc[name_];
    }
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!obj_ || !obj_->contains(key)) return;
    const json& v = (*obj_)[key];
    const std::string path = name_ + "." + key;
    auto bad = [&]() { return ConfigError(path + ": expected " + type_label<T>() + ", got " + v.dump()); };
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw bad();
      out = v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw bad();
      if constexpr (std::is_unsigned_v<T>) {
        if (v.get<long long>() < 0) throw ConfigError(path + ": must be >= 0");
      }
      out = v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw bad();
      out = v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw bad();
      out = v.get<std::string>();
    } else {
      if (!v.is_array()) throw bad();
      T tmp;
      for (const auto& e : v) {
        if (!e.is_number_integer()) throw ConfigError(path + ": expected a list of integers, got " + v.dump());
        tmp.push_back(e.get<typename T::value_type>());
      }
      out = std::move(tmp);
    }
  }

  const json* raw(const std::string& key) {
    seen_.insert(key);
    if (!obj_ || !obj_->contains(key)) return nullptr;
    return &(*obj_)[key];
  }

  void finish() const {
    if (!obj_) return;
    for (const auto& [k, v] : obj_->items()) {
      if (!seen_.count(k)) throw ConfigError(name_ + "." + k + ": unknown key");
    }
  }

 private:
  std::string name_;
  const json* obj_ = nullptr;
  std::set<std::string> seen_;
};

const std::set<std::string> kSections = {"env", "agent", "srl", "trainer", "logging"};

std::string granularity_name(trainer::IntervalGranularity g) {
  return g == trainer::IntervalGranularity::kIteration ? "iteration" : "gradient_step";
}

}  // namespace

json to_json(const ExperimentConfig& c) {
  const auto& t = c.trainer;
  const auto& e = t.env;
  const auto& n = t.network;
  const auto& p = t.ppo;
  const auto& s = t.srl;
  json doc;
  doc["env"] = {{"name", e.name},
                {"dt", e.dt},
                {"sigma", e.sigma},
                {"obs_noise", e.obs_noise},
                {"mass_min", e.mass_min},
                {"mass_max", e.mass_max},
                {"drag_min", e.drag_min},
                {"drag_max", e.drag_max},
                {"horizon", e.resolved_horizon()},
                {"num_clips", e.num_clips},
                {"clip_length", e.clip_length},
                {"reference_seed", e.reference_seed}};
  doc["agent"] = {{"encoder_hidden", n.encoder_hidden},
                  {"latent_dim", n.latent_dim},
                  {"head_hidden", n.head_hidden},
                  {"init_std", n.init_std},
                  {"log_std_min", n.log_std_min},
                  {"log_std_max", n.log_std_max},
                  {"gamma", p.gamma},
                  {"gae_lambda", p.gae_lambda},
                  {"clip", p.clip},
                  {"entropy_coef", p.entropy_coef},
                  {"value_coef", p.value_coef},
                  {"value_clip", p.value_clip},
                  {"desired_kl", p.desired_kl},
                  {"learning_rate", p.learning_rate},
                  {"adaptive_lr", p.adaptive_lr},
                  {"lr_min", p.lr_min},
                  {"lr_max", p.lr_max},
                  {"epochs", p.epochs},
                  {"minibatches", p.minibatches},
                  {"max_grad_norm", p.max_grad_norm}};
  json augment = json::array();
  for (auto op : s.resolved_augment()) augment.push_back(srl::to_string(op));
  doc["srl"] = {{"method", srl::to_string(s.method)},
                {"lambda", s.resolved_lambda()},
                {"target", srl::to_string(s.target)},
                {"augment", augment},
                {"spr_steps", s.spr_steps},
                {"ema_tau", s.ema_tau},
                {"vae_latent", s.vae_latent},
                {"predictor_hidden", s.predictor_hidden},
                {"dynamics_hidden", s.dynamics_hidden},
                {"decoder_hidden", s.decoder_hidden},
                {"mask_prob", s.augment_params.mask_prob},
                {"noise_std", s.augment_params.noise_std},
                {"scale_min", s.augment_params.scale_min},
                {"scale_max", s.augment_params.scale_max}};
  doc["trainer"] = {{"max_iterations", t.max_iterations},
                    {"horizon", t.horizon},
                    {"num_envs", e.num_envs},
                    {"srl_interval", t.srl_interval},
                    {"data_proportion", t.data_proportion},
                    {"interval_granularity", granularity_name(t.interval_granularity)},
                    {"checkpoint_every", t.checkpoint_every},
                    {"normalize_rewards", t.normalize_rewards},
                    {"stagger_episodes", t.stagger_episodes},
                    {"seed", t.seed}};
  doc["logging"] = {{"print_every", c.logging.print_every}, {"probe_size", c.logging.probe_size}};
  return doc;
}

ExperimentConfig from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config: top level must be a JSON object");
  for (const auto& [k, v] : doc.items()) {
    if (!kSections.count(k)) throw ConfigError(k + ": unknown section (allowed: env, agent, srl, trainer, logging)");
  }
  ExperimentConfig c;
  auto& t = c.trainer;
  auto& e = t.env;
  auto& n = t.network;
  auto& p = t.ppo;
  auto& s = t.srl;

  Section env(doc, "env");
  env.get("name", e.name);
  env.get("dt", e.dt);
  env.get("sigma", e.sigma);
  env.get("obs_noise", e.obs_noise);
  env.get("mass_min", e.mass_min);
  env.get("mass_max", e.mass_max);
  env.get("drag_min", e.drag_min);
  env.get("drag_max", e.drag_max);
  env.get("horizon", e.horizon);
  env.get("num_clips", e.num_clips);
  env.get("clip_length", e.clip_length);
  env.get("reference_seed", e.reference_seed);
  env.finish();

  Section agent(doc, "agent");
  agent.get("encoder_hidden", n.encoder_hidden);
  agent.get("latent_dim", n.latent_dim);
  agent.get("head_hidden", n.head_hidden);
  agent.get("init_std", n.init_std);
  agent.get("log_std_min", n.log_std_min);
  agent.get("log_std_max", n.log_std_max);
  agent.get("gamma", p.gamma);
  agent.get("gae_lambda", p.gae_lambda);
  agent.get("clip", p.clip);
  agent.get("entropy_coef", p.entropy_coef);
  agent.get("value_coef", p.value_coef);
  agent.get("value_clip", p.value_clip);
  agent.get("desired_kl", p.desired_kl);
  agent.get("learning_rate", p.learning_rate);
  agent.get("adaptive_lr", p.adaptive_lr);
  agent.get("lr_min", p.lr_min);
  agent.get("lr_max", p.lr_max);
  agent.get("epochs", p.epochs);
  agent.get("minibatches", p.minibatches);
  agent.get("max_grad_norm", p.max_grad_norm);
  agent.finish();

  Section srl_sec(doc, "srl");
  std::string method = srl::to_string(s.method);
  srl_sec.get("method", method);
  s.method = srl::parse_method(method);
  if (const json* l = srl_sec.raw("lambda")) {
    if (l->is_null()) {
      s.lambda.reset();
    } else if (l->is_number()) {
      s.lambda = l->get<double>();
    } else {
      throw ConfigError("srl.lambda: expected a number or null, got " + l->dump());
    }
  }
  std::string target = srl::to_string(s.target);
  srl_sec.get("target", target);
  s.target = srl::parse_target(target);
  if (const json* a = srl_sec.raw("augment")) {
    if (!a->is_array()) throw ConfigError("srl.augment: expected a list of op names, got " + a->dump());
    s.augment.clear();
    for (const auto& op : *a) {
      if (!op.is_string()) throw ConfigError("srl.augment: expected a list of op names, got " + a->dump());
      s.augment.push_back(srl::parse_augment(op.get<std::string>()));
    }
  }
  srl_sec.get("spr_steps", s.spr_steps);
  srl_sec.get("ema_tau", s.ema_tau);
  srl_sec.get("vae_latent", s.vae_latent);
  srl_sec.get("predictor_hidden", s.predictor_hidden);
  srl_sec.get("dynamics_hidden", s.dynamics_hidden);
  srl_sec.get("decoder_hidden", s.decoder_hidden);
  srl_sec.get("mask_prob", s.augment_params.mask_prob);
  srl_sec.get("noise_std", s.augment_params.noise_std);
  srl_sec.get("scale_min", s.augment_params.scale_min);
  srl_sec.get("scale_max", s.augment_params.scale_max);
  srl_sec.finish();

  Section tr(doc, "trainer");
  tr.get("max_iterations", t.max_iterations);
  tr.get("horizon", t.horizon);
  tr.get("num_envs", e.num_envs);
  tr.get("srl_interval", t.srl_interval);
  tr.get("data_proportion", t.data_proportion);
  std::string gran = granularity_name(t.interval_granularity);
  tr.get("interval_granularity", gran);
  if (gran == "iteration") {
    t.interval_granularity = trainer::IntervalGranularity::kIteration;
  } else if (gran == "gradient_step") {
    t.interval_granularity = trainer::IntervalGranularity::kGradientStep;
  } else {
    throw ConfigError("trainer.interval_granularity: unknown value '" + gran +
                      "' (allowed: iteration, gradient_step)");
  }
  tr.get("checkpoint_every", t.checkpoint_every);
  tr.get("normalize_rewards", t.normalize_rewards);
  tr.get("stagger_episodes", t.stagger_episodes);
  tr.get("seed", t.seed);
  tr.finish();

  Section log(doc, "logging");
  log.get("print_every", c.logging.print_every);
  log.get("probe_size", c.logging.probe_size);
  log.finish();
  if (c.logging.print_every < 0) throw ConfigError("logging.print_every: must be >= 0");
  t.probe_size = c.logging.probe_size;

  t.validate();
  return c;
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("--set: expected section.key=value, got '" + assignment + "'");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  const auto dot = path.find('.');
  if (dot == std::string::npos || path.find('.', dot + 1) != std::string::npos) {
    throw ConfigError("--set: key '" + path + "' must have the form section.key");
  }
  const std::string section = path.substr(0, dot);
  const std::string key = path.substr(dot + 1);
  if (!kSections.count(section)) throw ConfigError(path + ": unknown section '" + section + "'");
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  if (!doc.contains(section)) doc[section] = json::object();
  doc[section][key] = value;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ConfigError(path.string() + ": not valid JSON");
  return doc;
}

void write_json_file(const std::filesystem::path& path, const json& doc) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write " + path.string());
    out << doc.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

ExperimentConfig load_config(const std::optional<std::filesystem::path>& path, const std::vector<std::string>& overrides,
                             std::optional<std::uint64_t> seed) {
  json doc = path ? read_json_file(*path) : json::object();
  for (const auto& o : overrides) apply_override(doc, o);
  if (seed) {
    if (!doc.contains("trainer")) doc["trainer"] = json::object();
    doc["trainer"]["seed"] = *seed;
  }
  return from_json(doc);
}

std::string config_group_hash(const json& resolved) {
  json copy = resolved;
  if (copy.contains("trainer")) copy["trainer"].erase("seed");
  // FNV-1a over the canonical dump (keys are sorted by nlohmann::json).
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : copy.dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << h;
  std::string s = os.str();
  return std::string(16 - s.size(), '0') + s;
}

}  // namespace srl4h::cli

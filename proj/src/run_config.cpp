#include "geca/run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace geca {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && p == end;
}

bool parse_bool(const std::string& s, bool& out) {
  if (s == "true" || s == "1" || s == "yes") return out = true, true;
  if (s == "false" || s == "0" || s == "no") return out = false, true;
  return false;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"seed", KeyType::UInt, "0", "global seed"},
      {"data.manifest", KeyType::Text, "", "training manifest (CSV path,labels)"},
      {"data.test_manifest", KeyType::Text, "", "held-out manifest for classification"},
      {"model.gamma", KeyType::Int, "8", "positional-encoding channels"},
      {"model.hidden", KeyType::Int, "16", "hidden channels"},
      {"model.heads", KeyType::Int, "4", "attention heads"},
      {"model.cond_dim", KeyType::Int, "128", "conditioning width"},
      {"model.freq_dim", KeyType::Int, "64", "timestep feature width"},
      {"train.out_dir", KeyType::Text, "run", "checkpoint and log directory"},
      {"train.batch", KeyType::Int, "16", "batch size"},
      {"train.steps", KeyType::Int, "5000", "optimiser steps"},
      {"train.updates", KeyType::Int, "12", "cell updates M per timestep"},
      {"train.randomize_updates", KeyType::Bool, "false", "draw M uniformly from [1, M]"},
      {"train.fire_rate", KeyType::Real, "0.5", "per-cell update probability"},
      {"train.lr", KeyType::Real, "1e-3", "Adam learning rate"},
      {"train.cosine_lr", KeyType::Bool, "true", "anneal the learning rate to 0 over train.steps"},
      {"train.beta1", KeyType::Real, "0.9", "Adam beta1"},
      {"train.beta2", KeyType::Real, "0.999", "Adam beta2"},
      {"train.eps", KeyType::Real, "1e-8", "Adam epsilon"},
      {"train.schedule", KeyType::Text, "linear", "linear or cosine"},
      {"train.T", KeyType::Int, "250", "diffusion timesteps"},
      {"train.checkpoint_every", KeyType::Int, "1000", "steps between checkpoints"},
      {"train.label_drop", KeyType::Real, "0.1", "probability of training on the null label"},
      {"train.heredity_pool", KeyType::Real, "0.5", "share of items continuing a pooled reverse trajectory"},
      {"train.pool_size", KeyType::Int, "16", "trajectories kept in the pool"},
      {"train.overflow_weight", KeyType::Real, "1", "penalty on hidden values outside [-1, 1]"},
      {"sample.updates", KeyType::Int, "12", "cell updates M per timestep"},
      {"sample.guidance", KeyType::Real, "1.5", "classifier-free guidance scale w"},
      {"sample.mode", KeyType::Text, "h", "inheritance mode: none, out, out+h, h"},
      {"sample.variant", KeyType::Text, "ddpm-standard", "ddpm-standard or paper-literal"},
      {"sample.fire_rate", KeyType::Real, "0.5", "per-cell update probability"},
      {"sample.steps", KeyType::Int, "0", "respaced sampling timesteps (0: training T)"},
      {"ablate.n", KeyType::Int, "32", "samples per inheritance mode"},
      {"expand.k", KeyType::Int, "5", "expansion factor"},
      {"expand.batch", KeyType::Int, "8", "trajectories sampled together"},
      {"expand.threads", KeyType::Int, "0", "worker threads (0: all cores)"},
      {"classify.epochs", KeyType::Int, "20", "classifier epochs"},
      {"classify.batch", KeyType::Int, "32", "classifier batch size"},
      {"classify.lr", KeyType::Real, "2e-3", "classifier learning rate"},
      {"classify.repeats", KeyType::Int, "3", "seeds per setting"},
      {"classify.val_fraction", KeyType::Real, "0.2", "validation share of the training set"},
      {"classify.test_fraction", KeyType::Real, "0.25", "test share when no test manifest is given"},
      {"toy.n", KeyType::Int, "200", "toy dataset size"},
      {"toy.size", KeyType::Int, "16", "toy image height and width"},
      {"toy.labels", KeyType::Int, "5", "toy attributes (1 to 5)"},
  };
  return keys;
}

RunConfig::RunConfig() {
  for (const auto& k : config_keys()) values_[k.name] = k.fallback;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    try {
      c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

const ConfigKey& RunConfig::lookup(const std::string& key) const {
  for (const auto& k : config_keys())
    if (key == k.name) return k;
  throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const ConfigKey& k = lookup(key);
  bool ok = true;
  switch (k.type) {
    case KeyType::Int: {
      long v;
      ok = parse_number(value, v);
      break;
    }
    case KeyType::UInt: {
      std::uint64_t v;
      ok = parse_number(value, v);
      break;
    }
    case KeyType::Real: {
      double v;
      ok = parse_number(value, v);
      break;
    }
    case KeyType::Bool: {
      bool v;
      ok = parse_bool(value, v);
      break;
    }
    case KeyType::Text: break;
  }
  if (!ok) throw ConfigError("invalid value '" + value + "' for " + key);
  values_[key] = value;
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' must look like key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

const std::string& RunConfig::text(const std::string& key) const {
  lookup(key);
  return values_.at(key);
}

long RunConfig::integer(const std::string& key) const {
  long v = 0;
  parse_number(text(key), v);
  return v;
}

std::uint64_t RunConfig::uinteger(const std::string& key) const {
  std::uint64_t v = 0;
  parse_number(text(key), v);
  return v;
}

double RunConfig::real(const std::string& key) const {
  double v = 0;
  parse_number(text(key), v);
  return v;
}

bool RunConfig::boolean(const std::string& key) const {
  bool v = false;
  parse_bool(text(key), v);
  return v;
}

std::string RunConfig::dump() const {
  std::ostringstream os;
  for (const auto& k : config_keys()) os << k.name << " = " << values_.at(k.name) << '\n';
  return os.str();
}

TrainConfig RunConfig::train_config() const {
  TrainConfig c;
  c.batch = integer("train.batch");
  c.steps = integer("train.steps");
  c.updates = static_cast<int>(integer("train.updates"));
  c.randomize_updates = boolean("train.randomize_updates");
  c.fire_rate = real("train.fire_rate");
  c.adam = {real("train.lr"), real("train.beta1"), real("train.beta2"), real("train.eps")};
  c.cosine_lr = boolean("train.cosine_lr");
  c.seed = uinteger("seed");
  c.schedule = parse_schedule_kind(text("train.schedule"));
  c.T = static_cast<int>(integer("train.T"));
  c.checkpoint_every = integer("train.checkpoint_every");
  c.label_drop = real("train.label_drop");
  c.heredity_pool = real("train.heredity_pool");
  c.pool_size = static_cast<int>(integer("train.pool_size"));
  c.overflow_weight = real("train.overflow_weight");
  c.validate();
  return c;
}

SamplerConfig RunConfig::sampler_config() const {
  SamplerConfig c;
  c.updates = static_cast<int>(integer("sample.updates"));
  c.guidance = real("sample.guidance");
  c.mode = parse_inheritance_mode(text("sample.mode"));
  c.variant = parse_step_variant(text("sample.variant"));
  c.fire_rate = real("sample.fire_rate");
  c.seed = uinteger("seed");
  return c;
}

ThetaConfig RunConfig::theta_config(Index channels, Index num_labels) const {
  ThetaConfig c;
  c.layout = ChannelLayout::make(channels, integer("model.gamma"), integer("model.hidden"));
  c.heads = integer("model.heads");
  c.cond_dim = integer("model.cond_dim");
  c.freq_dim = integer("model.freq_dim");
  c.num_labels = num_labels;
  c.validate();
  return c;
}

ClassifierConfig RunConfig::classifier_config(Index channels, Index num_labels) const {
  ClassifierConfig c;
  c.channels = channels;
  c.num_labels = num_labels;
  c.epochs = static_cast<int>(integer("classify.epochs"));
  c.batch = integer("classify.batch");
  c.adam.lr = real("classify.lr");
  c.seed = uinteger("seed");
  return c;
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    int v = 0;
    if (!parse_number(trim(item), v)) throw ConfigError("invalid integer list '" + text + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("empty integer list");
  return out;
}

}  // namespace geca

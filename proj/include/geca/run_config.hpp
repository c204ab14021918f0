#pragma once

// Flat `key = value` experiment configuration. Every key has a default;
// unknown keys and unparsable values are rejected.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "geca/classifier.hpp"
#include "geca/diffusion.hpp"
#include "geca/sampler.hpp"

namespace geca {

enum class KeyType { Int, UInt, Real, Bool, Text };

struct ConfigKey {
  const char* name;
  KeyType type;
  const char* fallback;
  const char* help;
};

const std::vector<ConfigKey>& config_keys();

class RunConfig {
 public:
  RunConfig();

  static RunConfig load(const std::filesystem::path& path);
  /// Parses `key = value` lines; '#' starts a comment.
  static RunConfig parse(const std::string& text, const std::string& origin = "<config>");

  void set(const std::string& key, const std::string& value);
  /// "key=value" form used by --set.
  void apply_override(const std::string& assignment);

  const std::string& text(const std::string& key) const;
  long integer(const std::string& key) const;
  std::uint64_t uinteger(const std::string& key) const;
  double real(const std::string& key) const;
  bool boolean(const std::string& key) const;

  /// Fully resolved config, one `key = value` line per key in table order.
  std::string dump() const;

  TrainConfig train_config() const;
  SamplerConfig sampler_config() const;
  ThetaConfig theta_config(Index channels, Index num_labels) const;
  ClassifierConfig classifier_config(Index channels, Index num_labels) const;

 private:
  const ConfigKey& lookup(const std::string& key) const;
  std::map<std::string, std::string> values_;
};

/// "6,12,24" -> {6, 12, 24}.
std::vector<int> parse_int_list(const std::string& text);

}  // namespace geca

#include "geca/sampler.hpp"

namespace geca {

InheritanceMode parse_inheritance_mode(const std::string& name) {
  if (name == "none") return InheritanceMode::None;
  if (name == "out") return InheritanceMode::OutOnly;
  if (name == "out+h") return InheritanceMode::OutAndHidden;
  if (name == "h") return InheritanceMode::HiddenOnly;
  throw ConfigError("unknown inheritance mode '" + name + "' (expected none, out, out+h or h)");
}

std::string to_string(InheritanceMode mode) {
  switch (mode) {
    case InheritanceMode::None: return "none";
    case InheritanceMode::OutOnly: return "out";
    case InheritanceMode::OutAndHidden: return "out+h";
    case InheritanceMode::HiddenOnly: return "h";
  }
  return "?";
}

StepVariant parse_step_variant(const std::string& name) {
  if (name == "ddpm-standard" || name == "ddpm") return StepVariant::DdpmStandard;
  if (name == "paper-literal" || name == "literal") return StepVariant::PaperLiteral;
  throw ConfigError("unknown step variant '" + name + "' (expected ddpm-standard or paper-literal)");
}

std::string to_string(StepVariant variant) {
  return variant == StepVariant::DdpmStandard ? "ddpm-standard" : "paper-literal";
}

}  // namespace geca

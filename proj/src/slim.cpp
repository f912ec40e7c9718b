#include "sseds/slim.hpp"

namespace sseds {

std::string_view to_string(InitMode mode) {
  return mode == InitMode::random ? "random" : "winning_ticket";
}

InitMode parse_init_mode(std::string_view name) {
  if (name == "winning_ticket") return InitMode::winning_ticket;
  if (name == "random") return InitMode::random;
  throw UsageError("unknown init mode: " + std::string(name));
}

TransformInit parse_transform_init(std::string_view name) {
  if (name == "random") return TransformInit::random;
  if (name == "identity") return TransformInit::identity;
  throw UsageError("unknown transform init: " + std::string(name));
}

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::winning_ticket: return "winning_ticket";
    case Provenance::random: return "random";
    case Provenance::identity: return "identity";
  }
  return "unknown";
}

}  // namespace sseds

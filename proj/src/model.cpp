#include "sseds/model.hpp"

namespace sseds {

std::string_view to_string(Architecture a) {
  switch (a) {
    case Architecture::fm: return "fm";
    case Architecture::wide_deep: return "widedeep";
    case Architecture::deepfm: return "deepfm";
  }
  return "unknown";
}

Architecture parse_architecture(std::string_view name) {
  if (name == "fm") return Architecture::fm;
  if (name == "widedeep" || name == "wide_deep" || name == "wide&deep") return Architecture::wide_deep;
  if (name == "deepfm") return Architecture::deepfm;
  throw UsageError("unknown architecture: " + std::string(name));
}

void ModelConfig::validate() const {
  if (embedding_dim < 1) throw UsageError("embedding dimension must be >= 1");
  for (Index h : hidden) {
    if (h < 1) throw UsageError("hidden layer sizes must be >= 1");
  }
}

namespace detail {

std::uint64_t fingerprint(const Batch& batch) {
  // FNV-1a over shape, tokens and labels.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xffu;
      h *= 0x100000001b3ULL;
    }
  };
  mix(static_cast<std::uint64_t>(batch.tokens.rows()));
  mix(static_cast<std::uint64_t>(batch.tokens.cols()));
  for (Index k = 0; k < batch.tokens.size(); ++k) mix(batch.tokens.data()[k]);
  for (Index k = 0; k < batch.labels.size(); ++k) mix(batch.labels.data()[k]);
  return h;
}

}  // namespace detail
}  // namespace sseds

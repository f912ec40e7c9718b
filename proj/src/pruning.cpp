#include "sseds/pruning.hpp"

#include <algorithm>
#include <numeric>

namespace sseds {

std::string_view to_string(SelectionMode mode) {
  return mode == SelectionMode::quantile ? "quantile" : "weighted_greedy";
}

SelectionMode parse_selection_mode(std::string_view name) {
  if (name == "weighted_greedy") return SelectionMode::weighted_greedy;
  if (name == "quantile") return SelectionMode::quantile;
  throw UsageError("unknown selection mode: " + std::string(name));
}

SaliencyMap saliency(const SlotGradients& gradients) {
  if (gradients.values.size() == 0) throw NumericalError("degenerate saliency");
  if (!gradients.values.allFinite()) throw NumericalError("non-finite slot gradients");
  Eigen::MatrixXd magnitude = gradients.values.cwiseAbs();
  double total = magnitude.sum();
  if (!(total > 0.0)) throw NumericalError("degenerate saliency");
  return {magnitude / total};
}

PruneMask select_mask(const SaliencyMap& saliency, std::span<const std::uint32_t> cardinalities, double kappa,
                      SelectionMode mode) {
  if (!(kappa > 0.0 && kappa <= 1.0)) throw UsageError("kappa must lie in (0, 1]");
  const Index m = saliency.scores.rows();
  const Index d = saliency.scores.cols();
  if (static_cast<Index>(cardinalities.size()) != m) throw UsageError("one cardinality per field is required");

  PruneMask mask;
  mask.kappa = kappa;
  mask.mode = mode;
  mask.kept = SlotMask::Constant(m, d, false);
  for (auto n : cardinalities) mask.total_params += static_cast<std::int64_t>(n) * d;
  // The epsilon absorbs representation error in kappa (0.1 * 40 must be 4).
  mask.budget_params = static_cast<std::int64_t>(std::floor(kappa * static_cast<double>(mask.total_params) + 1e-9));
  const auto slot_budget = static_cast<Index>(std::floor(kappa * static_cast<double>(m * d) + 1e-9));

  std::vector<Index> order(static_cast<std::size_t>(m * d));
  std::iota(order.begin(), order.end(), Index{0});
  // Row-major slot index i * d + j, so stable sorting breaks ties by (i, j).
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return saliency.scores(a / d, a % d) > saliency.scores(b / d, b % d);
  });

  Index kept = 0;
  for (Index slot : order) {
    const Index i = slot / d, j = slot % d;
    const std::int64_t cost = cardinalities[static_cast<std::size_t>(i)];
    bool fits = mode == SelectionMode::weighted_greedy ? mask.kept_params + cost <= mask.budget_params
                                                       : kept + 1 <= slot_budget;
    if (!fits) break;
    mask.kept(i, j) = true;
    mask.kept_params += cost;
    mask.threshold = saliency.scores(i, j);
    ++kept;
  }
  if (kept == 0) mask.warnings.push_back("budget admits no slot; every field is pruned");
  return mask;
}

nlohmann::json pruning_report(const SaliencyMap& saliency, const PruneMask& mask,
                              std::span<const std::uint32_t> field_ids,
                              std::span<const std::uint32_t> cardinalities, std::uint64_t passes) {
  using nlohmann::json;
  const Index m = mask.kept.rows();
  const Index d = mask.kept.cols();
  json fields = json::array();
  json removed = json::array();
  json scores = json::array();
  for (Index i = 0; i < m; ++i) {
    json dims = json::array();
    json row = json::array();
    for (Index j = 0; j < d; ++j) {
      if (mask.kept(i, j)) dims.push_back(j);
      row.push_back(saliency.scores(i, j));
    }
    const auto k = static_cast<std::size_t>(i);
    if (dims.empty()) removed.push_back(field_ids[k]);
    fields.push_back({{"field_id", field_ids[k]},
                      {"n", cardinalities[k]},
                      {"d", dims.size()},
                      {"kept_dims", std::move(dims)}});
    scores.push_back(std::move(row));
  }
  json report = {{"schema_version", 1},
                 {"kappa", mask.kappa},
                 {"mode", to_string(mask.mode)},
                 {"original_dim", d},
                 {"total_params", mask.total_params},
                 {"budget_params", mask.budget_params},
                 {"kept_params", mask.kept_params},
                 {"kept_slots", mask.kept_slots()},
                 {"pruned_slots", m * d - mask.kept_slots()},
                 {"threshold", mask.threshold ? json(*mask.threshold) : json(nullptr)},
                 {"forward_backward_passes", passes},
                 {"fields", std::move(fields)},
                 {"removed_fields", std::move(removed)},
                 {"saliency", std::move(scores)},
                 {"warnings", mask.warnings}};
  return report;
}

}  // namespace sseds

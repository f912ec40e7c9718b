#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sseds/common.hpp"
#include "sseds/model.hpp"

namespace sseds {

/// Instrumentation for the single-shot claim: one forward plus one backward
/// over a batch counts as one pass.
struct PassCounter {
  std::uint64_t forward_backward = 0;
};

/// g(i, j) = dL(V . alpha) / d alpha(i, j) at alpha = 1, for field i and
/// embedding dimension j, where alpha(i, j) scales column j of table i.
struct SlotGradients {
  Eigen::MatrixXd values;
};

/// s(i, j) = |g(i, j)| / sum |g|.
struct SaliencyMap {
  Eigen::MatrixXd scores;
};

enum class SelectionMode {
  weighted_greedy,  // budget counts n_i parameters per slot
  quantile,         // budget counts slots, ignoring n_i
};

std::string_view to_string(SelectionMode mode);
SelectionMode parse_selection_mode(std::string_view name);

using SlotMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct PruneMask {
  SlotMask kept;                     // m x d
  std::optional<double> threshold;   // saliency of the last kept slot
  double kappa = 1.0;
  SelectionMode mode = SelectionMode::weighted_greedy;
  std::int64_t total_params = 0;
  std::int64_t budget_params = 0;
  std::int64_t kept_params = 0;
  std::vector<std::string> warnings;

  Index kept_slots() const { return kept.count(); }
};

/// Pruned tables: kept columns of each surviving field, in original order.
template <typename Scalar>
struct MixedDimTable {
  struct FieldTable {
    std::uint32_t field_id = 0;
    std::vector<Index> kept_dims;
    RowMat<Scalar> values;  // n_i x d_i
  };
  std::vector<FieldTable> fields;  // q <= m retained fields
  std::vector<std::uint32_t> removed_fields;
  Index original_dim = 0;

  std::int64_t params() const {
    std::int64_t n = 0;
    for (const auto& f : fields) n += f.values.size();
    return n;
  }
};

namespace detail {

template <typename Scalar>
void require_uniform_tables(const Model<Scalar>& model) {
  model.validate();
  for (const auto& t : model.tables) {
    if (t.cols() != model.tables.front().cols())
      throw UsageError("slot saliency needs one shared embedding dimension");
  }
}

template <typename Scalar>
double scaled_slot_loss(const Model<Scalar>& model, const Batch& batch, Index field, Index dim, double scale) {
  if (field < 0 || field >= model.num_fields() || dim < 0 || dim >= model.tables[field].cols())
    throw UsageError("slot out of range");
  Model<Scalar> masked = model;
  masked.tables[static_cast<std::size_t>(field)].col(dim) *= static_cast<Scalar>(scale);
  return loss(forward(masked, batch).probs, batch.labels);
}

}  // namespace detail

/// All m x d slot gradients from a single forward-backward pass:
/// g(i, j) = sum over records of e_i[j] * dL/de_i[j], taken on the per-record
/// embedding outputs before they are scattered back into table rows.
template <typename Scalar>
SlotGradients compute_slot_gradients(const Model<Scalar>& model, const Batch& batch, PassCounter& counter) {
  detail::require_uniform_tables(model);
  if (batch.size() == 0) throw DataError("empty saliency batch");
  auto trace = forward(model, batch);
  Gradients<Scalar> scratch;
  auto draw = detail::backprop(model, batch, trace, scratch);
  ++counter.forward_backward;

  const Index m = model.num_fields();
  SlotGradients g;
  g.values.resize(m, model.tables.front().cols());
  for (Index i = 0; i < m; ++i) {
    const auto k = static_cast<std::size_t>(i);
    g.values.row(i) = trace.raw[k].cwiseProduct(draw[k]).colwise().sum().template cast<double>();
  }
  return g;
}

/// Mean slot gradient over several saliency batches; one pass per batch.
template <typename Scalar>
SlotGradients compute_slot_gradients(const Model<Scalar>& model, std::span<const Batch> batches,
                                     PassCounter& counter) {
  if (batches.empty()) throw DataError("no saliency batches");
  SlotGradients total = compute_slot_gradients(model, batches.front(), counter);
  for (std::size_t b = 1; b < batches.size(); ++b)
    total.values += compute_slot_gradients(model, batches[b], counter).values;
  total.values /= static_cast<double>(batches.size());
  return total;
}

/// (L(V) - L(V with column j of table i scaled by 1 - delta)) / delta, from
/// two full forward passes. Use a double model for meaningful values.
template <typename Scalar>
double finite_diff_oracle(const Model<Scalar>& model, const Batch& batch, Index field, Index dim, double delta) {
  if (!(delta > 0.0 && delta <= 1.0)) throw UsageError("delta must lie in (0, 1]");
  double base = loss(forward(model, batch).probs, batch.labels);
  return (base - detail::scaled_slot_loss(model, batch, field, dim, 1.0 - delta)) / delta;
}

/// L(V) - L(V with slot (i, j) zeroed). Costs two forward passes per slot.
template <typename Scalar>
double exact_loss_change(const Model<Scalar>& model, const Batch& batch, Index field, Index dim) {
  double base = loss(forward(model, batch).probs, batch.labels);
  return base - detail::scaled_slot_loss(model, batch, field, dim, 0.0);
}

SaliencyMap saliency(const SlotGradients& gradients);

/// Ranks slots by saliency (ties by ascending field, then dimension) and keeps
/// the longest prefix that fits the budget.
PruneMask select_mask(const SaliencyMap& saliency, std::span<const std::uint32_t> cardinalities, double kappa,
                      SelectionMode mode = SelectionMode::weighted_greedy);

/// Extracts the kept columns verbatim; fields with no kept column are removed.
template <typename Scalar>
MixedDimTable<Scalar> apply_mask(const Model<Scalar>& model, const PruneMask& mask) {
  detail::require_uniform_tables(model);
  if (mask.kept.rows() != model.num_fields() || mask.kept.cols() != model.tables.front().cols())
    throw UsageError("mask shape does not match the embedding table");
  MixedDimTable<Scalar> out;
  out.original_dim = model.tables.front().cols();
  for (Index i = 0; i < model.num_fields(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    std::vector<Index> dims;
    for (Index j = 0; j < mask.kept.cols(); ++j)
      if (mask.kept(i, j)) dims.push_back(j);
    if (dims.empty()) {
      out.removed_fields.push_back(model.field_ids[k]);
      continue;
    }
    RowMat<Scalar> values = model.tables[k](Eigen::all, dims);
    out.fields.push_back({model.field_ids[k], std::move(dims), std::move(values)});
  }
  return out;
}

/// JSON pruning report: budget, parameter counts, threshold, per-field
/// searched dimensions and the full saliency matrix.
nlohmann::json pruning_report(const SaliencyMap& saliency, const PruneMask& mask,
                              std::span<const std::uint32_t> field_ids,
                              std::span<const std::uint32_t> cardinalities, std::uint64_t passes);

}  // namespace sseds

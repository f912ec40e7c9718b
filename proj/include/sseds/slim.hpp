#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

#include "sseds/model.hpp"
#include "sseds/pruning.hpp"
#include "sseds/train.hpp"

namespace sseds {

enum class InitMode : std::uint8_t { winning_ticket = 0, random = 1 };
enum class TransformInit : std::uint8_t { random = 0, identity = 1 };

std::string_view to_string(InitMode mode);
InitMode parse_init_mode(std::string_view name);
TransformInit parse_transform_init(std::string_view name);

/// Where a parameter group's starting values came from.
enum class Provenance : std::uint8_t { winning_ticket = 0, random = 1, identity = 2 };
std::string_view to_string(Provenance p);

enum class ParamGroup : std::size_t { embeddings = 0, transforms, linear, mlp_input, mlp_hidden };
inline constexpr std::size_t kParamGroups = 5;

struct SlimOptions {
  InitMode init = InitMode::winning_ticket;
  TransformInit transform_init = TransformInit::random;
  // Only consulted for winning_ticket; random mode starts every group fresh.
  bool restore_linear = true;
  bool restore_hidden = true;
};

struct SlimLayout {
  Index original_dim = 0;
  std::vector<std::vector<Index>> kept_dims;  // per retained field
  std::vector<std::uint32_t> removed_fields;
  std::array<Provenance, kParamGroups> provenance{};

  Provenance& operator[](ParamGroup g) { return provenance[static_cast<std::size_t>(g)]; }
  Provenance operator[](ParamGroup g) const { return provenance[static_cast<std::size_t>(g)]; }
};

/// Mixed-dimension model: `net.tables` holds the pruned tables (n_i x d_i) and
/// `net.transforms` the alignment matrices M_i (d_max x d_i).
template <typename Scalar>
struct SlimModel {
  Model<Scalar> net;
  SlimLayout layout;

  Index d_max() const { return net.width(); }
};

namespace detail {

template <typename Scalar>
std::size_t pretrained_index(const Model<Scalar>& pretrained, std::uint32_t field_id) {
  auto it = std::find(pretrained.field_ids.begin(), pretrained.field_ids.end(), field_id);
  if (it == pretrained.field_ids.end()) throw UsageError("pruned field missing from the pretrained model");
  return static_cast<std::size_t>(it - pretrained.field_ids.begin());
}

}  // namespace detail

/// Builds the slim model around a mixed-dimension table.
///
/// winning_ticket copies the pruned embeddings verbatim and restores the wide
/// part, bias and MLP layers from `pretrained` where shapes permit; the MLP
/// input layer is only restored when the aligned width q * d_max equals the
/// pretrained input width. random resamples everything from the initializers.
/// M is random (U[-1/sqrt(d_i), 1/sqrt(d_i)]) or identity-padded.
template <typename Scalar>
SlimModel<Scalar> build_slim(const MixedDimTable<Scalar>& table, const Model<Scalar>& pretrained,
                             const SlimOptions& options, Rng& rng) {
  const auto q = table.fields.size();
  if (q < 2) throw UsageError("insufficient fields");
  const bool ticket = options.init == InitMode::winning_ticket;

  SlimModel<Scalar> slim;
  auto& net = slim.net;
  net.architecture = pretrained.architecture;
  slim.layout.original_dim = table.original_dim;
  slim.layout.removed_fields = table.removed_fields;

  Index d_max = 0;
  for (const auto& f : table.fields) d_max = std::max<Index>(d_max, f.values.cols());

  const double init_bound = 1.0 / std::sqrt(static_cast<double>(std::max<Index>(table.original_dim, 1)));
  for (const auto& f : table.fields) {
    net.field_ids.push_back(f.field_id);
    slim.layout.kept_dims.push_back(f.kept_dims);
    if (ticket) {
      net.tables.push_back(f.values);
    } else {
      RowMat<Scalar> fresh(f.values.rows(), f.values.cols());
      fill_uniform(fresh, init_bound, rng);
      net.tables.push_back(std::move(fresh));
    }
  }
  slim.layout[ParamGroup::embeddings] = ticket ? Provenance::winning_ticket : Provenance::random;

  for (const auto& t : net.tables) {
    const Index d_i = t.cols();
    if (options.transform_init == TransformInit::identity) {
      net.transforms.push_back(Mat<Scalar>::Identity(d_max, d_i));
    } else {
      Mat<Scalar> m(d_max, d_i);
      fill_uniform(m, 1.0 / std::sqrt(static_cast<double>(d_i)), rng);
      net.transforms.push_back(std::move(m));
    }
  }
  slim.layout[ParamGroup::transforms] =
      options.transform_init == TransformInit::identity ? Provenance::identity : Provenance::random;

  const bool restore_linear = ticket && options.restore_linear;
  net.theta.bias = restore_linear ? pretrained.theta.bias : Scalar(0);
  for (const auto& f : table.fields) {
    if (restore_linear) {
      net.theta.linear.push_back(pretrained.theta.linear[detail::pretrained_index(pretrained, f.field_id)]);
    } else {
      net.theta.linear.push_back(Vec<Scalar>::Zero(f.values.rows()));
    }
  }
  slim.layout[ParamGroup::linear] = restore_linear ? Provenance::winning_ticket : Provenance::random;

  slim.layout[ParamGroup::mlp_input] = Provenance::random;
  slim.layout[ParamGroup::mlp_hidden] = Provenance::random;
  if (has_mlp(net.architecture)) {
    const auto& base = pretrained.theta.mlp;
    std::vector<Index> hidden;
    for (std::size_t l = 0; l + 1 < base.size(); ++l) hidden.push_back(base[l].weight.rows());
    const Index input = static_cast<Index>(q) * d_max;
    net.theta.mlp = detail::make_mlp<Scalar>(input, hidden, rng);
    if (ticket && base.front().weight.cols() == input) {
      net.theta.mlp.front() = base.front();
      slim.layout[ParamGroup::mlp_input] = Provenance::winning_ticket;
    }
    if (ticket && options.restore_hidden) {
      for (std::size_t l = 1; l < base.size(); ++l) net.theta.mlp[l] = base[l];
      slim.layout[ParamGroup::mlp_hidden] = Provenance::winning_ticket;
    }
  }
  net.validate();
  return slim;
}

/// e_bar_i = M_i * V_bar_i[token_i], each of length d_max.
template <typename Scalar>
std::vector<Vec<Scalar>> align(const SlimModel<Scalar>& slim, const Record& record) {
  auto raw = embed_lookup(slim.net, record);
  std::vector<Vec<Scalar>> out;
  for (std::size_t k = 0; k < raw.size(); ++k) out.push_back(slim.net.transforms[k] * raw[k]);
  return out;
}

template <typename Scalar>
Scalar interact_aligned(const Vec<Scalar>& a, const Vec<Scalar>& b) {
  if (a.size() != b.size()) throw UsageError("aligned embeddings differ in length");
  return a.dot(b);
}

/// Jointly optimizes V_bar, M and Theta_bar with a fresh Adam state. Zero
/// epochs returns the initialization unchanged.
template <typename Scalar>
TrainLog retrain(SlimModel<Scalar>& slim, const Dataset& train, const Dataset& valid, const TrainConfig& config) {
  auto state = make_adam_state(slim.net, config.adam);
  return fit(slim.net, train, &valid, config, state);
}

}  // namespace sseds

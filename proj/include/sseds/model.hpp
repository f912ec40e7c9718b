#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sseds/common.hpp"
#include "sseds/dataio.hpp"

namespace sseds {

enum class Architecture : std::uint32_t { fm = 0, wide_deep = 1, deepfm = 2 };

inline bool has_fm(Architecture a) { return a != Architecture::wide_deep; }
inline bool has_mlp(Architecture a) { return a != Architecture::fm; }
std::string_view to_string(Architecture a);
Architecture parse_architecture(std::string_view name);

struct ModelConfig {
  Architecture architecture = Architecture::deepfm;
  Index embedding_dim = 128;
  std::vector<Index> hidden{1024, 1024};  // ReLU layers of the deep part

  void validate() const;
};

template <typename Scalar>
struct DenseLayer {
  Mat<Scalar> weight;  // out x in
  Vec<Scalar> bias;    // out
};

/// Everything except the embedding tables: the wide (per-token linear) part,
/// the global bias and the MLP. The last MLP layer has a single output unit.
template <typename Scalar>
struct InteractionParams {
  Scalar bias{0};
  std::vector<Vec<Scalar>> linear;
  std::vector<DenseLayer<Scalar>> mlp;
};

/// A feature-interaction model over per-field embedding tables.
///
/// Field k reads dataset column `field_ids[k]` and looks the token up in
/// `tables[k]` (n_k x d_k, one row per token). When `transforms` is non-empty
/// each looked-up row is projected to the common interaction width by
/// `transforms[k]` (width x d_k) before the FM and MLP see it; otherwise all
/// d_k must agree and the width is that shared d.
template <typename Scalar>
struct Model {
  Architecture architecture = Architecture::deepfm;
  std::vector<std::uint32_t> field_ids;
  std::vector<RowMat<Scalar>> tables;
  std::vector<Mat<Scalar>> transforms;
  InteractionParams<Scalar> theta;
  // Bumped by every optimizer step; traces from an older generation are stale.
  std::uint64_t generation = 0;

  Index num_fields() const { return static_cast<Index>(tables.size()); }

  Index width() const {
    if (tables.empty()) return 0;
    return transforms.empty() ? tables.front().cols() : transforms.front().rows();
  }

  Index embedding_params() const {
    Index n = 0;
    for (const auto& t : tables) n += t.size();
    return n;
  }

  Index transform_params() const {
    Index n = 0;
    for (const auto& m : transforms) n += m.size();
    return n;
  }

  Index theta_params() const {
    Index n = 1;
    for (const auto& l : theta.linear) n += l.size();
    for (const auto& layer : theta.mlp) n += layer.weight.size() + layer.bias.size();
    return n;
  }

  template <typename Other>
  Model<Other> cast() const {
    Model<Other> out;
    out.architecture = architecture;
    out.field_ids = field_ids;
    out.generation = generation;
    for (const auto& t : tables) out.tables.push_back(t.template cast<Other>());
    for (const auto& m : transforms) out.transforms.push_back(m.template cast<Other>());
    out.theta.bias = static_cast<Other>(theta.bias);
    for (const auto& l : theta.linear) out.theta.linear.push_back(l.template cast<Other>());
    for (const auto& layer : theta.mlp)
      out.theta.mlp.push_back({layer.weight.template cast<Other>(), layer.bias.template cast<Other>()});
    return out;
  }

  void validate() const {
    const auto q = tables.size();
    if (q == 0) throw UsageError("model has no fields");
    if (field_ids.size() != q || theta.linear.size() != q)
      throw UsageError("model field bookkeeping is inconsistent");
    if (!transforms.empty() && transforms.size() != q)
      throw UsageError("one transform per field is required");
    const Index w = width();
    if (w < 1) throw UsageError("model width must be >= 1");
    for (std::size_t k = 0; k < q; ++k) {
      if (tables[k].cols() < 1) throw UsageError("retained fields need d_i >= 1");
      if (theta.linear[k].size() != tables[k].rows())
        throw UsageError("linear weights must match the vocabulary size");
      if (transforms.empty()) {
        if (tables[k].cols() != w) throw UsageError("untransformed tables must share one dimension");
      } else if (transforms[k].rows() != w || transforms[k].cols() != tables[k].cols()) {
        throw UsageError("transform shape must be width x d_i");
      }
    }
    if (has_mlp(architecture)) {
      if (theta.mlp.empty()) throw UsageError("deep architecture without MLP layers");
      Index in = static_cast<Index>(q) * w;
      for (const auto& layer : theta.mlp) {
        if (layer.weight.cols() != in || layer.bias.size() != layer.weight.rows())
          throw UsageError("MLP layer shapes are inconsistent");
        in = layer.weight.rows();
      }
      if (in != 1) throw UsageError("MLP must end in a single output unit");
    } else if (!theta.mlp.empty()) {
      throw UsageError("FM architecture carries no MLP");
    }
  }
};

namespace detail {

template <typename Scalar>
std::vector<DenseLayer<Scalar>> make_mlp(Index input, std::span<const Index> hidden, Rng& rng) {
  std::vector<DenseLayer<Scalar>> layers;
  Index in = input;
  auto add = [&](Index out) {
    DenseLayer<Scalar> layer{Mat<Scalar>(out, in), Vec<Scalar>::Zero(out)};
    fill_uniform(layer.weight, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    layers.push_back(std::move(layer));
    in = out;
  };
  for (Index h : hidden) add(h);
  add(1);
  return layers;
}

template <typename Scalar>
RowMat<Scalar> make_table(Index rows, Index dim, Rng& rng) {
  RowMat<Scalar> t(rows, dim);
  fill_uniform(t, 1.0 / std::sqrt(static_cast<double>(dim)), rng);
  return t;
}

std::uint64_t fingerprint(const Batch& batch);

}  // namespace detail

/// Fresh model with uniform embedding dimension: embeddings U[-1/sqrt(d), 1/sqrt(d)],
/// MLP weights U[-1/sqrt(fan_in), 1/sqrt(fan_in)], zero biases and wide weights.
template <typename Scalar>
Model<Scalar> make_model(const FieldSchema& schema, const ModelConfig& config, Rng& rng) {
  schema.validate();
  config.validate();
  Model<Scalar> model;
  model.architecture = config.architecture;
  for (const auto& f : schema.fields) {
    model.field_ids.push_back(f.id);
    model.tables.push_back(detail::make_table<Scalar>(f.cardinality, config.embedding_dim, rng));
    model.theta.linear.push_back(Vec<Scalar>::Zero(f.cardinality));
  }
  if (has_mlp(config.architecture)) {
    model.theta.mlp = detail::make_mlp<Scalar>(static_cast<Index>(schema.size()) * config.embedding_dim,
                                               config.hidden, rng);
  }
  return model;
}

inline constexpr double kProbabilityClamp = 1e-7;

template <typename Scalar>
Scalar clamped_sigmoid(Scalar z) {
  Scalar p = z >= 0 ? Scalar(1) / (Scalar(1) + std::exp(-z)) : std::exp(z) / (Scalar(1) + std::exp(z));
  const Scalar lo = static_cast<Scalar>(kProbabilityClamp);
  return std::clamp(p, lo, Scalar(1) - lo);
}

/// Cached activations of one forward pass.
template <typename Scalar>
struct ForwardTrace {
  std::uint64_t generation = 0;
  std::uint64_t fingerprint = 0;
  std::vector<Mat<Scalar>> raw;      // looked-up rows, B x d_k
  std::vector<Mat<Scalar>> aligned;  // B x width, only when the model has transforms
  Mat<Scalar> field_sum;             // B x width, FM architectures
  std::vector<Mat<Scalar>> layer_inputs;  // input of each MLP layer
  Vec<Scalar> logits;
  Vec<Scalar> probs;

  const Mat<Scalar>& field(std::size_t k) const { return aligned.empty() ? raw[k] : aligned[k]; }
};

/// e_k = V_k[token_k] for every model field.
template <typename Scalar>
std::vector<Vec<Scalar>> embed_lookup(const Model<Scalar>& model, const Record& record) {
  std::vector<Vec<Scalar>> e;
  for (std::size_t k = 0; k < model.tables.size(); ++k) {
    auto col = model.field_ids[k];
    if (col >= record.tokens.size()) throw DataError("record lacks field " + std::to_string(col));
    auto t = static_cast<Index>(record.tokens[col]);
    if (t >= model.tables[k].rows()) throw DataError("token out of range");
    e.push_back(model.tables[k].row(t).transpose());
  }
  return e;
}

template <typename Scalar>
ForwardTrace<Scalar> forward(const Model<Scalar>& model, const Batch& batch) {
  const Index B = batch.size();
  const auto q = model.tables.size();
  const Index w = model.width();
  ForwardTrace<Scalar> tr;
  tr.generation = model.generation;
  tr.fingerprint = detail::fingerprint(batch);
  tr.raw.resize(q);

  tr.logits = Vec<Scalar>::Constant(B, model.theta.bias);
  for (std::size_t k = 0; k < q; ++k) {
    const auto col = static_cast<Index>(model.field_ids[k]);
    if (col >= batch.tokens.cols()) throw DataError("batch lacks field " + std::to_string(col));
    const auto& table = model.tables[k];
    const auto& lin = model.theta.linear[k];
    Mat<Scalar>& e = tr.raw[k];
    e.resize(B, table.cols());
    for (Index r = 0; r < B; ++r) {
      auto t = static_cast<Index>(batch.tokens(r, col));
      if (t >= table.rows()) throw DataError("token out of range");
      e.row(r) = table.row(t);
      tr.logits(r) += lin(t);
    }
  }
  if (!model.transforms.empty()) {
    tr.aligned.resize(q);
    for (std::size_t k = 0; k < q; ++k) tr.aligned[k].noalias() = tr.raw[k] * model.transforms[k].transpose();
  }

  if (has_fm(model.architecture)) {
    // sum_{k<l} <e_k, e_l> = (|sum_k e_k|^2 - sum_k |e_k|^2) / 2
    tr.field_sum = Mat<Scalar>::Zero(B, w);
    Vec<Scalar> self = Vec<Scalar>::Zero(B);
    for (std::size_t k = 0; k < q; ++k) {
      tr.field_sum += tr.field(k);
      self += tr.field(k).rowwise().squaredNorm();
    }
    tr.logits += Scalar(0.5) * (tr.field_sum.rowwise().squaredNorm() - self);
  }

  if (has_mlp(model.architecture)) {
    Mat<Scalar> x(B, static_cast<Index>(q) * w);
    for (std::size_t k = 0; k < q; ++k) x.middleCols(static_cast<Index>(k) * w, w) = tr.field(k);
    const auto& layers = model.theta.mlp;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      Mat<Scalar> h = x * layers[l].weight.transpose();
      h.rowwise() += layers[l].bias.transpose();
      if (l + 1 < layers.size()) h = h.cwiseMax(Scalar(0));
      tr.layer_inputs.push_back(std::move(x));
      x = std::move(h);
    }
    tr.logits += x.col(0);
  }

  if (!tr.logits.allFinite()) throw NumericalError("numerical blowup");
  tr.probs = tr.logits.unaryExpr([](Scalar z) { return clamped_sigmoid(z); });
  return tr;
}

/// Summed binary cross-entropy -sum[y log p + (1-y) log(1-p)], accumulated in double.
template <typename Scalar>
double loss(const Vec<Scalar>& probs, const LabelVector& labels) {
  if (probs.size() != labels.size()) throw UsageError("prediction/label count mismatch");
  double total = 0.0;
  for (Index r = 0; r < probs.size(); ++r) {
    double p = static_cast<double>(probs(r));
    total -= labels(r) ? std::log(p) : std::log1p(-p);
  }
  return total;
}

template <typename Scalar>
double mean_loss(const Vec<Scalar>& probs, const LabelVector& labels) {
  return probs.size() == 0 ? 0.0 : loss(probs, labels) / static_cast<double>(probs.size());
}

/// Gradient restricted to the rows touched by a batch.
template <typename Scalar>
struct SparseRows {
  std::vector<Index> rows;  // sorted, unique
  Mat<Scalar> values;       // rows.size() x cols
};

template <typename Scalar>
struct Gradients {
  std::vector<SparseRows<Scalar>> tables;
  std::vector<SparseRows<Scalar>> linear;
  Scalar bias{0};
  std::vector<DenseLayer<Scalar>> mlp;
  std::vector<Mat<Scalar>> transforms;
};

namespace detail {

template <typename Scalar, typename Derived>
SparseRows<Scalar> scatter_rows(const Batch& batch, Index column, const Eigen::MatrixBase<Derived>& per_record) {
  const Index B = batch.size();
  SparseRows<Scalar> out;
  out.rows.reserve(static_cast<std::size_t>(B));
  for (Index r = 0; r < B; ++r) out.rows.push_back(static_cast<Index>(batch.tokens(r, column)));
  std::sort(out.rows.begin(), out.rows.end());
  out.rows.erase(std::unique(out.rows.begin(), out.rows.end()), out.rows.end());
  out.values = Mat<Scalar>::Zero(static_cast<Index>(out.rows.size()), per_record.cols());
  for (Index r = 0; r < B; ++r) {
    auto t = static_cast<Index>(batch.tokens(r, column));
    auto slot = std::lower_bound(out.rows.begin(), out.rows.end(), t) - out.rows.begin();
    out.values.row(slot) += per_record.row(r);
  }
  return out;
}

/// Backpropagates dL/dz through the interaction layers and the alignment.
/// Returns dL/d(raw looked-up rows) per field; fills `grads` with the dense
/// parameter gradients (bias, MLP, transforms) and the wide-part rows.
template <typename Scalar>
std::vector<Mat<Scalar>> backprop(const Model<Scalar>& model, const Batch& batch,
                                  const ForwardTrace<Scalar>& tr, Gradients<Scalar>& grads) {
  if (tr.generation != model.generation || tr.fingerprint != fingerprint(batch) ||
      tr.probs.size() != batch.size())
    throw UsageError("stale trace");
  const Index B = batch.size();
  const auto q = model.tables.size();
  const Index w = model.width();

  Vec<Scalar> dz = tr.probs - batch.labels.template cast<Scalar>();
  grads.bias = dz.sum();
  grads.linear.clear();
  for (std::size_t k = 0; k < q; ++k)
    grads.linear.push_back(scatter_rows<Scalar>(batch, static_cast<Index>(model.field_ids[k]), dz));

  std::vector<Mat<Scalar>> dfield(q, Mat<Scalar>::Zero(B, w));
  if (has_fm(model.architecture)) {
    for (std::size_t k = 0; k < q; ++k)
      dfield[k] = ((tr.field_sum - tr.field(k)).array().colwise() * dz.array()).matrix();
  }

  grads.mlp.clear();
  if (has_mlp(model.architecture)) {
    const auto& layers = model.theta.mlp;
    grads.mlp.resize(layers.size());
    Mat<Scalar> upstream = dz;  // B x 1
    for (std::size_t l = layers.size(); l-- > 0;) {
      if (l + 1 < layers.size()) {
        // ReLU: the next layer's input is this layer's activation.
        upstream = (tr.layer_inputs[l + 1].array() > Scalar(0)).select(upstream.array(), Scalar(0)).matrix();
      }
      grads.mlp[l].weight.noalias() = upstream.transpose() * tr.layer_inputs[l];
      grads.mlp[l].bias = upstream.colwise().sum().transpose();
      Mat<Scalar> down = upstream * layers[l].weight;
      upstream = std::move(down);
    }
    for (std::size_t k = 0; k < q; ++k) dfield[k] += upstream.middleCols(static_cast<Index>(k) * w, w);
  }

  grads.transforms.clear();
  if (model.transforms.empty()) return dfield;
  std::vector<Mat<Scalar>> draw(q);
  for (std::size_t k = 0; k < q; ++k) {
    grads.transforms.push_back(dfield[k].transpose() * tr.raw[k]);
    draw[k].noalias() = dfield[k] * model.transforms[k];
  }
  return draw;
}

}  // namespace detail

/// Exact gradients of the summed loss. Embedding and wide rows are sparse:
/// only tokens present in the batch appear.
template <typename Scalar>
Gradients<Scalar> backward(const Model<Scalar>& model, const Batch& batch, const ForwardTrace<Scalar>& trace) {
  Gradients<Scalar> grads;
  auto draw = detail::backprop(model, batch, trace, grads);
  for (std::size_t k = 0; k < model.tables.size(); ++k)
    grads.tables.push_back(detail::scatter_rows<Scalar>(batch, static_cast<Index>(model.field_ids[k]), draw[k]));
  return grads;
}

}  // namespace sseds

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "sseds/model.hpp"

namespace sseds {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename Scalar>
struct Moments {
  std::vector<RowMat<Scalar>> tables;
  std::vector<Vec<Scalar>> linear;
  Scalar bias{0};
  std::vector<DenseLayer<Scalar>> mlp;
  std::vector<Mat<Scalar>> transforms;

  static Moments zeros_like(const Model<Scalar>& model) {
    Moments m;
    for (const auto& t : model.tables) m.tables.push_back(RowMat<Scalar>::Zero(t.rows(), t.cols()));
    for (const auto& l : model.theta.linear) m.linear.push_back(Vec<Scalar>::Zero(l.size()));
    for (const auto& layer : model.theta.mlp)
      m.mlp.push_back({Mat<Scalar>::Zero(layer.weight.rows(), layer.weight.cols()),
                       Vec<Scalar>::Zero(layer.bias.size())});
    for (const auto& t : model.transforms) m.transforms.push_back(Mat<Scalar>::Zero(t.rows(), t.cols()));
    return m;
  }
};

/// Adam moments mirroring every parameter of a model, plus the shared step count.
template <typename Scalar>
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  Moments<Scalar> first;
  Moments<Scalar> second;
};

template <typename Scalar>
AdamState<Scalar> make_adam_state(const Model<Scalar>& model, const AdamConfig& config = {}) {
  return {config, 0, Moments<Scalar>::zeros_like(model), Moments<Scalar>::zeros_like(model)};
}

namespace detail {

template <typename Scalar>
struct AdamCoefficients {
  Scalar beta1, beta2, epsilon, step_size, second_correction;
};

template <typename P, typename G, typename M, typename V, typename Scalar>
void adam_update(P&& param, const G& grad, M&& m, V&& v, const AdamCoefficients<Scalar>& c) {
  m = c.beta1 * m + (Scalar(1) - c.beta1) * grad;
  v = c.beta2 * v + (Scalar(1) - c.beta2) * grad.cwiseProduct(grad);
  // step_size already folds in lr / (1 - beta1^t).
  param.array() -= c.step_size * m.array() / ((v.array() / c.second_correction).sqrt() + c.epsilon);
}

template <typename Scalar, typename Table, typename Moment>
void adam_sparse(Table& table, const SparseRows<Scalar>& grad, Moment& m, Moment& v,
                 const AdamCoefficients<Scalar>& c) {
  for (std::size_t s = 0; s < grad.rows.size(); ++s) {
    const Index r = grad.rows[s];
    adam_update(table.row(r), grad.values.row(static_cast<Index>(s)), m.row(r), v.row(r), c);
  }
}

}  // namespace detail

/// One bias-corrected Adam step. Embedding and wide rows absent from the
/// sparse gradient keep both their value and their moments.
template <typename Scalar>
void adam_step(Model<Scalar>& model, const Gradients<Scalar>& grads, AdamState<Scalar>& state) {
  const auto q = model.tables.size();
  if (grads.tables.size() != q || grads.linear.size() != q || grads.mlp.size() != model.theta.mlp.size() ||
      grads.transforms.size() != model.transforms.size() || state.first.tables.size() != q)
    throw UsageError("gradient/state shapes do not match the model");

  ++state.step;
  const auto t = static_cast<double>(state.step);
  const auto& cfg = state.config;
  detail::AdamCoefficients<Scalar> c{
      static_cast<Scalar>(cfg.beta1), static_cast<Scalar>(cfg.beta2), static_cast<Scalar>(cfg.epsilon),
      static_cast<Scalar>(cfg.lr / (1.0 - std::pow(cfg.beta1, t))),
      static_cast<Scalar>(1.0 - std::pow(cfg.beta2, t))};

  for (std::size_t k = 0; k < q; ++k) {
    detail::adam_sparse(model.tables[k], grads.tables[k], state.first.tables[k], state.second.tables[k], c);
    detail::adam_sparse(model.theta.linear[k], grads.linear[k], state.first.linear[k], state.second.linear[k], c);
  }
  {
    Vec<Scalar> p = Vec<Scalar>::Constant(1, model.theta.bias);
    Vec<Scalar> g = Vec<Scalar>::Constant(1, grads.bias);
    Vec<Scalar> m = Vec<Scalar>::Constant(1, state.first.bias);
    Vec<Scalar> v = Vec<Scalar>::Constant(1, state.second.bias);
    detail::adam_update(p, g, m, v, c);
    model.theta.bias = p(0);
    state.first.bias = m(0);
    state.second.bias = v(0);
  }
  for (std::size_t l = 0; l < model.theta.mlp.size(); ++l) {
    auto& layer = model.theta.mlp[l];
    detail::adam_update(layer.weight, grads.mlp[l].weight, state.first.mlp[l].weight, state.second.mlp[l].weight, c);
    detail::adam_update(layer.bias, grads.mlp[l].bias, state.first.mlp[l].bias, state.second.mlp[l].bias, c);
  }
  for (std::size_t k = 0; k < model.transforms.size(); ++k)
    detail::adam_update(model.transforms[k], grads.transforms[k], state.first.transforms[k],
                        state.second.transforms[k], c);
  ++model.generation;
}

}  // namespace sseds

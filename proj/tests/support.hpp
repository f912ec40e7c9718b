#pragma once

#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "sseds/dataio.hpp"
#include "sseds/model.hpp"

namespace sseds::testing {

inline FieldSchema schema_of(std::initializer_list<std::uint32_t> cards) {
  FieldSchema s;
  std::uint32_t id = 0;
  for (auto n : cards) {
    s.fields.push_back({id, FieldKind::categorical, "f" + std::to_string(id), n});
    ++id;
  }
  return s;
}

inline FieldSchema schema_of(const std::vector<std::uint32_t>& cards) {
  FieldSchema s;
  for (std::uint32_t id = 0; id < cards.size(); ++id)
    s.fields.push_back({id, FieldKind::categorical, "f" + std::to_string(id), cards[id]});
  return s;
}

// Uniformly random tokens and labels; both classes present when rows >= 2.
inline Batch random_batch(const FieldSchema& schema, Index rows, Rng& rng) {
  Batch b;
  b.tokens.resize(rows, static_cast<Index>(schema.size()));
  b.labels.resize(rows);
  for (Index r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < schema.size(); ++i) {
      std::uniform_int_distribution<std::uint32_t> tok(0, schema.fields[i].cardinality - 1);
      b.tokens(r, static_cast<Index>(i)) = tok(rng);
    }
    b.labels(r) = static_cast<std::uint8_t>(std::bernoulli_distribution(0.5)(rng));
  }
  if (rows >= 2) {
    b.labels(0) = 0;
    b.labels(1) = 1;
  }
  return b;
}

// Randomizes the wide part and biases too, so every parameter is exercised.
template <typename Scalar>
Model<Scalar> random_model(const FieldSchema& schema, Architecture arch, Index d, std::vector<Index> hidden,
                           Rng& rng, double scale = 0.5) {
  ModelConfig cfg{arch, d, std::move(hidden)};
  auto model = make_model<Scalar>(schema, cfg, rng);
  for (auto& t : model.tables) fill_uniform(t, scale, rng);
  for (auto& l : model.theta.linear) fill_uniform(l, 0.1, rng);
  for (auto& layer : model.theta.mlp) fill_uniform(layer.bias, 0.1, rng);
  model.theta.bias = static_cast<Scalar>(0.05);
  return model;
}

// Visits every scalar parameter of a model by reference, in a fixed order.
template <typename Scalar>
void for_each_param(Model<Scalar>& model, const std::function<void(Scalar&, const std::string&)>& fn) {
  for (std::size_t k = 0; k < model.tables.size(); ++k)
    for (Index i = 0; i < model.tables[k].size(); ++i) fn(model.tables[k].data()[i], "table");
  for (std::size_t k = 0; k < model.theta.linear.size(); ++k)
    for (Index i = 0; i < model.theta.linear[k].size(); ++i) fn(model.theta.linear[k](i), "linear");
  fn(model.theta.bias, "bias");
  for (auto& layer : model.theta.mlp) {
    for (Index i = 0; i < layer.weight.size(); ++i) fn(layer.weight.data()[i], "weight");
    for (Index i = 0; i < layer.bias.size(); ++i) fn(layer.bias(i), "mlp_bias");
  }
  for (auto& m : model.transforms)
    for (Index i = 0; i < m.size(); ++i) fn(m.data()[i], "transform");
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("sseds_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace sseds::testing

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sseds/common.hpp"
#include "sseds/dataio.hpp"
#include "sseds/model.hpp"

namespace sseds {

/// Area under the ROC curve as the Mann-Whitney statistic with midranks, so
/// tied predictions count one half. Throws DataError("undefined AUC") unless
/// both classes are present.
double auc(std::span<const double> predictions, std::span<const std::uint8_t> labels);

struct ParamCountOptions {
  bool transforms = false;
  bool theta = false;
};

/// Tables are described by their shapes: sum of rows * cols.
std::int64_t count_params(std::span<const std::pair<std::int64_t, std::int64_t>> table_shapes);

/// ||V||_0 of a model's tables, plus transforms and interaction parameters
/// when flagged.
template <typename Scalar>
std::int64_t count_params(const Model<Scalar>& model, ParamCountOptions options = {}) {
  std::vector<std::pair<std::int64_t, std::int64_t>> shapes;
  for (const auto& t : model.tables) shapes.emplace_back(t.rows(), t.cols());
  std::int64_t n = count_params(shapes);
  if (options.transforms) n += model.transform_params();
  if (options.theta) n += model.theta_params();
  return n;
}

struct MetricsRecord {
  double auc = 0.0;
  double logloss = 0.0;
  std::int64_t param_count = 0;  // embedding + transform + interaction parameters
  std::int64_t embedding_params = 0;
  std::int64_t transform_params = 0;
  std::int64_t theta_params = 0;
  std::map<std::string, double> wall_ms;
  std::map<std::string, std::int64_t> passes;
};

struct Histogram {
  std::vector<double> edges;  // bins + 1 edges
  std::vector<std::int64_t> counts;
};

/// Equal-width histogram on [0, max]; the top edge is inclusive.
Histogram histogram(std::span<const double> values, std::size_t bins);

/// Fraction of total mass held by the largest ceil(fraction * n) values.
double top_mass(std::span<const double> values, double fraction);

/// Reads the pipeline artifacts in `dir` and writes report.json,
/// saliency.csv, dims.csv and timing.json there.
void write_report(const std::filesystem::path& dir, std::size_t histogram_bins = 20);

}  // namespace sseds

#include "sseds/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "sseds/detail/bytes.hpp"

namespace sseds {

double auc(std::span<const double> predictions, std::span<const std::uint8_t> labels) {
  if (predictions.size() != labels.size()) throw UsageError("prediction/label count mismatch");
  std::int64_t positives = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (std::isnan(predictions[r])) throw DataError("NaN prediction");
    positives += labels[r] ? 1 : 0;
  }
  const auto n = static_cast<std::int64_t>(labels.size());
  const std::int64_t negatives = n - positives;
  if (positives == 0 || negatives == 0) throw DataError("undefined AUC");

  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return predictions[a] < predictions[b]; });

  // Twice the midrank sum of the positives, kept integral.
  std::int64_t twice_rank_sum = 0;
  std::size_t begin = 0;
  while (begin < order.size()) {
    std::size_t end = begin + 1;
    while (end < order.size() && predictions[order[end]] == predictions[order[begin]]) ++end;
    const auto twice_midrank = static_cast<std::int64_t>(begin + 1 + end);
    for (std::size_t k = begin; k < end; ++k) {
      if (labels[order[k]]) twice_rank_sum += twice_midrank;
    }
    begin = end;
  }
  const std::int64_t twice_u = twice_rank_sum - positives * (positives + 1);
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(positives) * static_cast<double>(negatives));
}

std::int64_t count_params(std::span<const std::pair<std::int64_t, std::int64_t>> table_shapes) {
  std::int64_t n = 0;
  for (auto [rows, cols] : table_shapes) n += rows * cols;
  return n;
}

Histogram histogram(std::span<const double> values, std::size_t bins) {
  if (bins == 0) throw UsageError("histogram needs at least one bin");
  Histogram h;
  double top = 0.0;
  for (double v : values) top = std::max(top, v);
  if (top <= 0.0) top = 1.0;
  for (std::size_t b = 0; b <= bins; ++b) h.edges.push_back(top * static_cast<double>(b) / static_cast<double>(bins));
  h.counts.assign(bins, 0);
  for (double v : values) {
    auto b = static_cast<std::size_t>(std::floor(v / top * static_cast<double>(bins)));
    ++h.counts[std::min(b, bins - 1)];
  }
  return h;
}

double top_mass(std::span<const double> values, double fraction) {
  if (values.empty()) return 0.0;
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(sorted.size()) - 1e-12));
  k = std::clamp<std::size_t>(k, 1, sorted.size());
  double total = std::accumulate(sorted.begin(), sorted.end(), 0.0);
  double head = std::accumulate(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), 0.0);
  return total > 0.0 ? head / total : 0.0;
}

namespace {

nlohmann::json read_json(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("missing artifact: " + path.string());
  return nlohmann::json::parse(detail::read_file(path));
}

}  // namespace

void write_report(const std::filesystem::path& dir, std::size_t histogram_bins) {
  using nlohmann::json;
  const json pruning = read_json(dir / "pruning_report.json");

  struct Slot {
    std::uint32_t field_id;
    std::int64_t dim;
    double score;
    bool kept;
  };
  std::vector<Slot> slots;
  std::vector<double> scores;
  const auto& fields = pruning.at("fields");
  const auto& matrix = pruning.at("saliency");
  for (std::size_t i = 0; i < fields.size(); ++i) {
    const auto& kept = fields[i].at("kept_dims");
    for (std::size_t j = 0; j < matrix[i].size(); ++j) {
      bool is_kept = std::find(kept.begin(), kept.end(), json(j)) != kept.end();
      slots.push_back({fields[i].at("field_id").get<std::uint32_t>(), static_cast<std::int64_t>(j),
                       matrix[i][j].get<double>(), is_kept});
      scores.push_back(slots.back().score);
    }
  }

  std::ostringstream saliency_csv;
  saliency_csv.precision(17);
  saliency_csv << "field_id,dim,s,kept\n";
  for (const auto& s : slots) saliency_csv << s.field_id << ',' << s.dim << ',' << s.score << ',' << (s.kept ? 1 : 0) << '\n';

  std::ostringstream dims_csv;
  dims_csv << "field_id,n_i,d_i\n";
  json dims = json::array();
  for (const auto& f : fields) {
    dims_csv << f.at("field_id").get<std::uint32_t>() << ',' << f.at("n").get<std::int64_t>() << ','
             << f.at("d").get<std::int64_t>() << '\n';
    dims.push_back({{"field_id", f.at("field_id")}, {"n", f.at("n")}, {"d", f.at("d")}});
  }

  std::vector<std::size_t> order(slots.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return slots[a].score > slots[b].score; });
  json curve = json::array();
  double cumulative = 0.0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    const auto& s = slots[order[r]];
    cumulative += s.score;
    curve.push_back({{"rank", r + 1}, {"field_id", s.field_id}, {"dim", s.dim}, {"s", s.score},
                     {"cumulative", cumulative}, {"kept", s.kept}});
  }

  auto hist = histogram(scores, histogram_bins);

  json points = json::array();
  json timing = json::object();
  std::vector<std::filesystem::path> entries;
  for (const auto& e : std::filesystem::directory_iterator(dir)) entries.push_back(e.path());
  std::sort(entries.begin(), entries.end());
  for (const auto& path : entries) {
    auto name = path.filename().string();
    if (name.starts_with("eval_") && path.extension() == ".json") {
      auto metrics = read_json(path);
      points.push_back({{"model", metrics.at("model")},
                        {"split", metrics.at("split")},
                        {"param_count", metrics.at("param_count")},
                        {"embedding_params", metrics.at("embedding_params")},
                        {"auc", metrics.at("auc")}});
      timing[path.stem().string()] = metrics.at("wall_ms");
    } else if (name.ends_with("_timing.json")) {
      timing[path.stem().string()] = read_json(path);
    }
  }

  json report = {{"schema_version", 1},
                 {"kappa", pruning.at("kappa")},
                 {"mode", pruning.at("mode")},
                 {"total_params", pruning.at("total_params")},
                 {"kept_params", pruning.at("kept_params")},
                 {"threshold", pruning.at("threshold")},
                 {"forward_backward_passes", {{"prune", pruning.at("forward_backward_passes")}}},
                 {"removed_fields", pruning.at("removed_fields")},
                 {"top_decile_mass", top_mass(scores, 0.1)},
                 {"saliency_histogram", {{"edges", hist.edges}, {"counts", hist.counts}}},
                 {"sorted_saliency", std::move(curve)},
                 {"dims", std::move(dims)},
                 {"auc_vs_params", std::move(points)}};

  detail::write_file(dir / "report.json", report.dump(2) + "\n");
  detail::write_file(dir / "saliency.csv", saliency_csv.str());
  detail::write_file(dir / "dims.csv", dims_csv.str());
  detail::write_file(dir / "timing.json", timing.dump(2) + "\n");
}

}  // namespace sseds

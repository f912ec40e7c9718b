#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sseds/adam.hpp"
#include "sseds/dataio.hpp"
#include "sseds/eval.hpp"
#include "sseds/model.hpp"
#include "sseds/pruning.hpp"
#include "sseds/slim.hpp"

namespace sseds {

struct DatasetConfig {
  std::string format = "synthetic";  // criteo | avazu | synthetic
  std::vector<std::filesystem::path> paths;
  std::uint32_t min_freq = 10;
  bool strict = true;
  LogBase log_base = LogBase::natural;
  std::array<double, 3> split{8, 1, 1};
  SynthSpec synthetic;
};

struct PruningConfig {
  double kappa = 0.1;
  SelectionMode mode = SelectionMode::weighted_greedy;
  std::size_t saliency_batch_size = 2048;
  std::size_t saliency_batches = 1;
  std::vector<double> kappa_sweep;
};

struct RetrainConfig {
  InitMode init = InitMode::winning_ticket;
  TransformInit transform_init = TransformInit::random;
  bool restore_linear = true;
  bool restore_hidden = true;
  std::size_t epochs = 3;
};

/// One JSON document drives every stage. Defaults: d = 128, two 1024-unit
/// ReLU layers, Adam at 1e-3, batch 2048, 3 epochs, kappa = 0.1, min_freq = 10.
struct PipelineConfig {
  static constexpr int kVersion = 1;

  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "sseds_out";
  DatasetConfig dataset;
  ModelConfig model;
  AdamConfig adam;
  std::size_t batch_size = 2048;
  std::size_t epochs = 3;
  bool save_optimizer_state = false;
  PruningConfig pruning;
  RetrainConfig retrain;

  void validate() const;
  nlohmann::json to_json() const;
  static PipelineConfig from_json(const nlohmann::json& doc);
};

PipelineConfig load_config(const std::filesystem::path& path);

/// Artifact names inside the output directory.
namespace artifacts {
inline constexpr const char* kTrain = "train.ssds";
inline constexpr const char* kValid = "valid.ssds";
inline constexpr const char* kTest = "test.ssds";
inline constexpr const char* kVocab = "vocab.json";
inline constexpr const char* kIngestStamp = "ingest.stamp";
inline constexpr const char* kPretrained = "pretrained.ckpt";
inline constexpr const char* kPretrainMetrics = "pretrain_metrics.json";
inline constexpr const char* kPruned = "pruned.ckpt";
inline constexpr const char* kPruningReport = "pruning_report.json";
inline constexpr const char* kSlim = "slim.ckpt";
inline constexpr const char* kRetrainMetrics = "retrain_metrics.json";
}  // namespace artifacts

std::filesystem::path split_path(const PipelineConfig& config, Split split);

struct IngestResult {
  bool up_to_date = false;
  std::size_t skipped_rows = 0;
  std::array<std::size_t, 3> sizes{};
};

struct RetrainFlags {
  bool no_retrain = false;   // keep the initialization: zero epochs
  bool random_init = false;  // fresh random values instead of the pruned ones
};

IngestResult cmd_ingest(const PipelineConfig& config);
nlohmann::json cmd_pretrain(const PipelineConfig& config);
nlohmann::json cmd_prune(const PipelineConfig& config, const std::optional<std::filesystem::path>& checkpoint = {});
nlohmann::json cmd_retrain(const PipelineConfig& config, RetrainFlags flags,
                           const std::optional<std::filesystem::path>& checkpoint = {});
MetricsRecord cmd_eval(const PipelineConfig& config, const std::filesystem::path& checkpoint, Split split);
void cmd_report(const PipelineConfig& config);

nlohmann::json to_json(const MetricsRecord& m);

}  // namespace sseds

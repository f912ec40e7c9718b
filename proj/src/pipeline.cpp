#include "sseds/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "sseds/checkpoint.hpp"
#include "sseds/detail/bytes.hpp"
#include "sseds/train.hpp"

namespace sseds {

using nlohmann::json;

namespace {

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
  if (!obj.is_object() || !obj.contains(key) || obj.at(key).is_null()) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw UsageError(std::string("config key '") + key + "': " + e.what());
  }
}

std::string log_base_name(LogBase b) { return b == LogBase::binary ? "2" : "e"; }

LogBase parse_log_base(const std::string& s) {
  if (s == "e" || s == "natural") return LogBase::natural;
  if (s == "2" || s == "binary") return LogBase::binary;
  throw UsageError("log_base must be \"e\" or \"2\"");
}

json synth_to_json(const SynthSpec& s) {
  json profile = json::array();
  for (Index i = 0; i < s.profile.rows(); ++i) {
    json row = json::array();
    for (Index k = 0; k < s.profile.cols(); ++k) row.push_back(s.profile(i, k));
    profile.push_back(std::move(row));
  }
  return {{"cardinalities", s.cardinalities}, {"records", s.records},
          {"profile", std::move(profile)},     {"linear_scale", s.linear_scale},
          {"bias", s.bias},                    {"zipf_exponent", s.zipf_exponent},
          {"deterministic_labels", s.deterministic_labels}};
}

SynthSpec synth_from_json(const json& j) {
  SynthSpec s;
  s.cardinalities = get_or(j, "cardinalities", std::vector<std::uint32_t>{});
  s.records = get_or<std::size_t>(j, "records", 0);
  auto rows = get_or(j, "profile", std::vector<std::vector<double>>{});
  if (!rows.empty()) {
    s.profile.resize(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != rows.front().size()) throw UsageError("synthetic profile rows differ in length");
      for (std::size_t k = 0; k < rows[i].size(); ++k) s.profile(static_cast<Index>(i), static_cast<Index>(k)) = rows[i][k];
    }
  }
  s.linear_scale = get_or(j, "linear_scale", 0.0);
  s.bias = get_or(j, "bias", 0.0);
  s.zipf_exponent = get_or(j, "zipf_exponent", 0.0);
  s.deterministic_labels = get_or(j, "deterministic_labels", false);
  return s;
}

class StageTimer {
 public:
  StageTimer() : start_(std::chrono::steady_clock::now()) {}
  double elapsed_ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

void write_json(const std::filesystem::path& path, const json& doc) {
  detail::write_file(path, doc.dump(2) + "\n");
}

void write_timing(const PipelineConfig& config, const std::string& stage, double ms) {
  write_json(config.output_dir / (stage + "_timing.json"), {{"stage", stage}, {"wall_ms", ms}});
}

json double_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json epochs_to_json(const TrainLog& log) {
  json epochs = json::array();
  for (const auto& e : log.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", double_or_null(e.train_loss)},
                      {"valid_auc", double_or_null(e.valid_auc)},
                      {"valid_logloss", double_or_null(e.valid_logloss)}});
  }
  return epochs;
}

void require(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("missing artifact: " + path.string());
}

TrainConfig train_config(const PipelineConfig& config, std::size_t epochs, std::uint64_t stage) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = config.batch_size;
  t.adam = config.adam;
  t.seed = stage_seed(config.seed, stage);
  return t;
}

std::string hex(std::uint32_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(8) << std::setfill('0') << v;
  return s.str();
}

std::string kappa_tag(double kappa) {
  std::ostringstream s;
  s << kappa;
  return s.str();
}

}  // namespace

// ---------------------------------------------------------------------------

void PipelineConfig::validate() const {
  model.validate();
  if (!(pruning.kappa > 0.0 && pruning.kappa <= 1.0)) throw UsageError("kappa must lie in (0, 1]");
  for (double k : pruning.kappa_sweep)
    if (!(k > 0.0 && k <= 1.0)) throw UsageError("kappa sweep values must lie in (0, 1]");
  if (batch_size == 0 || pruning.saliency_batch_size == 0) throw UsageError("batch sizes must be >= 1");
  if (pruning.saliency_batches == 0) throw UsageError("saliency_batches must be >= 1");
  if (epochs == 0) throw UsageError("pretraining epochs must be >= 1");
  if (dataset.min_freq == 0) throw UsageError("min_freq must be >= 1");
  if (!(adam.lr > 0.0)) throw UsageError("learning rate must be positive");
  if (dataset.format != "criteo" && dataset.format != "avazu" && dataset.format != "synthetic")
    throw UsageError("dataset.format must be criteo, avazu or synthetic");
  if (dataset.format != "synthetic" && dataset.paths.empty()) throw UsageError("dataset.paths is empty");
}

json PipelineConfig::to_json() const {
  std::vector<std::string> paths;
  for (const auto& p : dataset.paths) paths.push_back(p.string());
  return {{"version", kVersion},
          {"seed", seed},
          {"output_dir", output_dir.string()},
          {"dataset",
           {{"format", dataset.format},
            {"paths", paths},
            {"min_freq", dataset.min_freq},
            {"strict", dataset.strict},
            {"log_base", log_base_name(dataset.log_base)},
            {"split", dataset.split},
            {"synthetic", synth_to_json(dataset.synthetic)}}},
          {"model",
           {{"architecture", to_string(model.architecture)},
            {"embedding_dim", model.embedding_dim},
            {"hidden", model.hidden}}},
          {"optimizer",
           {{"lr", adam.lr},
            {"beta1", adam.beta1},
            {"beta2", adam.beta2},
            {"epsilon", adam.epsilon},
            {"batch_size", batch_size},
            {"epochs", epochs},
            {"save_state", save_optimizer_state}}},
          {"pruning",
           {{"kappa", pruning.kappa},
            {"mode", to_string(pruning.mode)},
            {"saliency_batch_size", pruning.saliency_batch_size},
            {"saliency_batches", pruning.saliency_batches},
            {"kappa_sweep", pruning.kappa_sweep}}},
          {"retrain",
           {{"init_mode", to_string(retrain.init)},
            {"transform_init", retrain.transform_init == TransformInit::identity ? "identity" : "random"},
            {"restore_linear", retrain.restore_linear},
            {"restore_hidden", retrain.restore_hidden},
            {"epochs", retrain.epochs}}}};
}

PipelineConfig PipelineConfig::from_json(const json& doc) {
  if (!doc.is_object()) throw UsageError("config must be a JSON object");
  auto version = get_or(doc, "version", 0);
  if (version != kVersion) throw UsageError("unsupported config version " + std::to_string(version));
  PipelineConfig c;
  c.seed = get_or<std::uint64_t>(doc, "seed", c.seed);
  c.output_dir = get_or(doc, "output_dir", c.output_dir.string());

  const json empty = json::object();
  const json& ds = doc.contains("dataset") ? doc.at("dataset") : empty;
  c.dataset.format = get_or(ds, "format", c.dataset.format);
  for (const auto& p : get_or(ds, "paths", std::vector<std::string>{})) c.dataset.paths.emplace_back(p);
  c.dataset.min_freq = get_or(ds, "min_freq", c.dataset.min_freq);
  c.dataset.strict = get_or(ds, "strict", c.dataset.strict);
  c.dataset.log_base = parse_log_base(get_or(ds, "log_base", std::string("e")));
  c.dataset.split = get_or(ds, "split", c.dataset.split);
  if (ds.contains("synthetic")) c.dataset.synthetic = synth_from_json(ds.at("synthetic"));

  const json& md = doc.contains("model") ? doc.at("model") : empty;
  c.model.architecture = parse_architecture(get_or(md, "architecture", std::string(to_string(c.model.architecture))));
  c.model.embedding_dim = get_or(md, "embedding_dim", c.model.embedding_dim);
  c.model.hidden = get_or(md, "hidden", c.model.hidden);

  const json& op = doc.contains("optimizer") ? doc.at("optimizer") : empty;
  c.adam.lr = get_or(op, "lr", c.adam.lr);
  c.adam.beta1 = get_or(op, "beta1", c.adam.beta1);
  c.adam.beta2 = get_or(op, "beta2", c.adam.beta2);
  c.adam.epsilon = get_or(op, "epsilon", c.adam.epsilon);
  c.batch_size = get_or(op, "batch_size", c.batch_size);
  c.epochs = get_or(op, "epochs", c.epochs);
  c.save_optimizer_state = get_or(op, "save_state", c.save_optimizer_state);

  const json& pr = doc.contains("pruning") ? doc.at("pruning") : empty;
  c.pruning.kappa = get_or(pr, "kappa", c.pruning.kappa);
  c.pruning.mode = parse_selection_mode(get_or(pr, "mode", std::string(to_string(c.pruning.mode))));
  c.pruning.saliency_batch_size = get_or(pr, "saliency_batch_size", c.pruning.saliency_batch_size);
  c.pruning.saliency_batches = get_or(pr, "saliency_batches", c.pruning.saliency_batches);
  c.pruning.kappa_sweep = get_or(pr, "kappa_sweep", c.pruning.kappa_sweep);

  const json& rt = doc.contains("retrain") ? doc.at("retrain") : empty;
  c.retrain.init = parse_init_mode(get_or(rt, "init_mode", std::string(to_string(c.retrain.init))));
  c.retrain.transform_init = parse_transform_init(get_or(rt, "transform_init", std::string("random")));
  c.retrain.restore_linear = get_or(rt, "restore_linear", c.retrain.restore_linear);
  c.retrain.restore_hidden = get_or(rt, "restore_hidden", c.retrain.restore_hidden);
  c.retrain.epochs = get_or(rt, "epochs", c.retrain.epochs);
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw UsageError("config not found: " + path.string());
  json doc;
  try {
    doc = json::parse(detail::read_file(path));
  } catch (const json::parse_error& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
  return PipelineConfig::from_json(doc);
}

std::filesystem::path split_path(const PipelineConfig& config, Split split) {
  switch (split) {
    case Split::train: return config.output_dir / artifacts::kTrain;
    case Split::valid: return config.output_dir / artifacts::kValid;
    case Split::test: return config.output_dir / artifacts::kTest;
    case Split::none: break;
  }
  throw UsageError("no cache for split 'none'");
}

json to_json(const MetricsRecord& m) {
  return {{"auc", double_or_null(m.auc)},
          {"logloss", double_or_null(m.logloss)},
          {"param_count", m.param_count},
          {"embedding_params", m.embedding_params},
          {"transform_params", m.transform_params},
          {"theta_params", m.theta_params},
          {"wall_ms", m.wall_ms},
          {"passes", m.passes}};
}

// ---------------------------------------------------------------------------

IngestResult cmd_ingest(const PipelineConfig& config) {
  config.validate();
  StageTimer timer;
  const auto& ds = config.dataset;

  std::string fingerprint = json({{"dataset", config.to_json().at("dataset")},
                                  {"seed", config.seed},
                                  {"cache_version", kDatasetCacheVersion}})
                                .dump();
  for (const auto& p : ds.paths) fingerprint += ":" + hex(detail::crc32(detail::read_file(p)));
  const std::string stamp = hex(detail::crc32(fingerprint)) + "\n";

  const auto stamp_path = config.output_dir / artifacts::kIngestStamp;
  IngestResult result;
  bool outputs_exist = true;
  for (auto s : {Split::train, Split::valid, Split::test})
    outputs_exist = outputs_exist && std::filesystem::exists(split_path(config, s));
  outputs_exist = outputs_exist && std::filesystem::exists(config.output_dir / artifacts::kVocab);
  if (outputs_exist && std::filesystem::exists(stamp_path) && detail::read_file(stamp_path) == stamp) {
    result.up_to_date = true;
    return result;
  }

  const std::uint64_t split_seed = stage_seed(config.seed, stage::split);
  std::array<Dataset, 3> parts;
  json vocab = json::object();
  if (ds.format == "synthetic") {
    auto data = synth_generate(ds.synthetic, stage_seed(config.seed, stage::synth));
    parts = split(data, ds.split, split_seed);
    json fields = json::array();
    for (const auto& f : data.schema.fields)
      fields.push_back({{"name", f.name}, {"size", f.cardinality}, {"identity", true}});
    vocab = {{"format", "synthetic"}, {"fields", std::move(fields)}};
  } else {
    RawRows raw;
    for (const auto& p : ds.paths) {
      std::ifstream in(p);
      if (!in) throw DataError("cannot open " + p.string());
      RawRows chunk = ds.format == "criteo" ? read_criteo(in, ds.strict, ds.log_base) : read_avazu(in, ds.strict);
      if (raw.fields.empty()) raw.fields = chunk.fields;
      raw.skipped += chunk.skipped;
      std::move(chunk.rows.begin(), chunk.rows.end(), std::back_inserter(raw.rows));
      raw.labels.insert(raw.labels.end(), chunk.labels.begin(), chunk.labels.end());
    }
    result.skipped_rows = raw.skipped;
    auto encoded = encode(raw, ds.split, ds.min_freq, split_seed);
    parts = std::move(encoded.splits);
    json fields = json::array();
    for (std::size_t i = 0; i < encoded.vocabularies.size(); ++i) {
      const auto& f = raw.fields[i];
      fields.push_back({{"name", f.name},
                        {"kind", f.kind == FieldKind::numeric ? "numeric" : "categorical"},
                        {"size", encoded.vocabularies[i].size()},
                        {"tokens", encoded.vocabularies[i].tokens()}});
    }
    vocab = {{"format", ds.format}, {"min_freq", ds.min_freq}, {"fields", std::move(fields)}};
  }

  for (std::size_t k = 0; k < 3; ++k) {
    write_dataset(split_path(config, parts[k].split), parts[k]);
    result.sizes[k] = parts[k].size();
  }
  write_json(config.output_dir / artifacts::kVocab, vocab);
  detail::write_file(stamp_path, stamp);
  write_timing(config, "ingest", timer.elapsed_ms());
  return result;
}

json cmd_pretrain(const PipelineConfig& config) {
  config.validate();
  require(split_path(config, Split::train));
  require(split_path(config, Split::valid));
  StageTimer timer;
  auto train = read_dataset(split_path(config, Split::train));
  auto valid = read_dataset(split_path(config, Split::valid));

  Rng rng(stage_seed(config.seed, stage::init));
  auto model = make_model<float>(train.schema, config.model, rng);
  auto tc = train_config(config, config.epochs, stage::shuffle);
  auto state = make_adam_state(model, tc.adam);
  auto log = fit(model, train, &valid, tc, state);

  Checkpoint ckpt = dense_checkpoint(model);
  if (config.save_optimizer_state) ckpt.adam = state;
  save_checkpoint(config.output_dir / artifacts::kPretrained, ckpt);

  json metrics = {{"stage", "pretrain"},
                  {"architecture", to_string(model.architecture)},
                  {"epochs", epochs_to_json(log)},
                  {"forward_backward_passes", log.forward_backward_passes},
                  {"embedding_params", count_params(model)},
                  {"param_count", count_params(model, {true, true})}};
  write_json(config.output_dir / artifacts::kPretrainMetrics, metrics);
  write_timing(config, "pretrain", timer.elapsed_ms());
  return metrics;
}

json cmd_prune(const PipelineConfig& config, const std::optional<std::filesystem::path>& checkpoint) {
  config.validate();
  const auto ckpt_path = checkpoint.value_or(config.output_dir / artifacts::kPretrained);
  require(ckpt_path);
  require(split_path(config, Split::train));
  StageTimer timer;
  auto ckpt = load_checkpoint(ckpt_path);
  if (ckpt.kind != CheckpointKind::dense) throw DataError(ckpt_path.string() + ": expected a pretrained checkpoint");
  const auto& model = ckpt.model;
  auto train = read_dataset(split_path(config, Split::train));

  BatchPlan plan(train, config.pruning.saliency_batch_size, stage_seed(config.seed, stage::saliency), true);
  std::vector<Batch> batches;
  for (std::size_t k = 0; k < std::min(plan.size(), config.pruning.saliency_batches); ++k) batches.push_back(plan[k]);
  PassCounter counter;
  auto grads = compute_slot_gradients(model, std::span<const Batch>(batches), counter);
  auto scores = saliency(grads);

  std::vector<std::uint32_t> cardinalities;
  for (const auto& t : model.tables) cardinalities.push_back(static_cast<std::uint32_t>(t.rows()));

  auto report_for = [&](double kappa) {
    auto mask = select_mask(scores, cardinalities, kappa, config.pruning.mode);
    for (const auto& w : mask.warnings) std::cerr << "warning: " << w << "\n";
    auto report = pruning_report(scores, mask, model.field_ids, cardinalities, counter.forward_backward);
    // Alignment overhead ||M||_0 = d_max * sum d_i against the parameters pruned away.
    std::int64_t d_max = 0, dim_sum = 0;
    for (Index i = 0; i < mask.kept.rows(); ++i) {
      std::int64_t d_i = mask.kept.row(i).count();
      d_max = std::max(d_max, d_i);
      dim_sum += d_i;
    }
    report["transform_params"] = d_max * dim_sum;
    report["pruned_params"] = mask.total_params - mask.kept_params;
    return std::pair{mask, report};
  };

  auto [mask, report] = report_for(config.pruning.kappa);
  auto table = apply_mask(model, mask);
  if (table.params() != mask.kept_params) throw NumericalError("retained parameter count disagrees with the mask");
  save_checkpoint(config.output_dir / artifacts::kPruned, mixed_checkpoint(model, table));
  write_json(config.output_dir / artifacts::kPruningReport, report);

  for (double kappa : config.pruning.kappa_sweep) {
    auto swept = report_for(kappa).second;
    write_json(config.output_dir / ("pruning_report_kappa_" + kappa_tag(kappa) + ".json"), swept);
  }
  write_timing(config, "prune", timer.elapsed_ms());
  return report;
}

json cmd_retrain(const PipelineConfig& config, RetrainFlags flags, const std::optional<std::filesystem::path>& checkpoint) {
  config.validate();
  const auto ckpt_path = checkpoint.value_or(config.output_dir / artifacts::kPruned);
  require(ckpt_path);
  require(split_path(config, Split::train));
  require(split_path(config, Split::valid));
  StageTimer timer;
  auto ckpt = load_checkpoint(ckpt_path);
  auto table = mixed_table(ckpt);
  auto train = read_dataset(split_path(config, Split::train));
  auto valid = read_dataset(split_path(config, Split::valid));

  SlimOptions options;
  options.init = flags.random_init ? InitMode::random : config.retrain.init;
  options.transform_init = config.retrain.transform_init;
  options.restore_linear = config.retrain.restore_linear;
  options.restore_hidden = config.retrain.restore_hidden;
  Rng rng(stage_seed(config.seed, stage::slim_init));
  auto slim = build_slim(table, ckpt.model, options, rng);

  const std::size_t epochs = flags.no_retrain ? 0 : config.retrain.epochs;
  auto tc = train_config(config, epochs, stage::retrain_shuffle);
  auto state = make_adam_state(slim.net, tc.adam);
  auto log = fit(slim.net, train, &valid, tc, state);

  Checkpoint out = slim_checkpoint(slim);
  if (config.save_optimizer_state && epochs > 0) out.adam = state;
  save_checkpoint(config.output_dir / artifacts::kSlim, out);

  std::string variant = flags.no_retrain ? "sseds_without_retraining"
                        : options.init == InitMode::random ? "sseds_without_ticket"
                                                           : "sseds";
  json provenance = json::object();
  constexpr std::array<const char*, kParamGroups> names{"embeddings", "transforms", "linear", "mlp_input", "mlp_hidden"};
  for (std::size_t g = 0; g < kParamGroups; ++g) provenance[names[g]] = to_string(slim.layout.provenance[g]);

  std::int64_t full = 0;
  for (const auto& t : ckpt.model.tables) full += t.rows() * static_cast<std::int64_t>(table.original_dim);
  const std::int64_t pruned_away = full - table.params();
  json metrics = {{"stage", "retrain"},
                  {"variant", variant},
                  {"init_mode", to_string(options.init)},
                  {"provenance", provenance},
                  {"d_max", slim.d_max()},
                  {"retained_fields", slim.net.field_ids},
                  {"removed_fields", slim.layout.removed_fields},
                  {"epochs", epochs_to_json(log)},
                  {"forward_backward_passes", log.forward_backward_passes},
                  {"embedding_params", count_params(slim.net)},
                  {"transform_params", slim.net.transform_params()},
                  {"pruned_params", pruned_away},
                  {"param_count", count_params(slim.net, {true, true})}};
  write_json(config.output_dir / artifacts::kRetrainMetrics, metrics);
  write_timing(config, "retrain", timer.elapsed_ms());
  return metrics;
}

MetricsRecord cmd_eval(const PipelineConfig& config, const std::filesystem::path& checkpoint, Split split) {
  require(checkpoint);
  const auto data_path = split_path(config, split);
  require(data_path);
  auto ckpt = load_checkpoint(checkpoint);
  if (ckpt.kind == CheckpointKind::mixed)
    throw UsageError("mixed-dimension checkpoints are not runnable; retrain them first");
  auto data = read_dataset(data_path);

  StageTimer timer;
  auto p = predict(ckpt.model, data);
  MetricsRecord m;
  m.wall_ms["inference"] = timer.elapsed_ms();
  std::span<const std::uint8_t> labels(data.labels.data(), data.size());
  m.auc = auc(p, labels);
  double total = 0.0;
  for (std::size_t r = 0; r < p.size(); ++r) total -= labels[r] ? std::log(p[r]) : std::log1p(-p[r]);
  m.logloss = total / static_cast<double>(p.size());
  m.embedding_params = count_params(ckpt.model);
  m.transform_params = ckpt.model.transform_params();
  m.theta_params = ckpt.model.theta_params();
  m.param_count = m.embedding_params + m.transform_params + m.theta_params;
  m.passes["inference_forward"] = static_cast<std::int64_t>((data.size() + 4095) / 4096);

  json doc = to_json(m);
  doc["model"] = checkpoint.stem().string();
  doc["split"] = std::string(to_string(split));
  doc["records"] = data.size();
  doc["schema_version"] = 1;
  write_json(config.output_dir / ("eval_" + checkpoint.stem().string() + "_" + std::string(to_string(split)) + ".json"),
             doc);
  return m;
}

void cmd_report(const PipelineConfig& config) { write_report(config.output_dir); }

}  // namespace sseds

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "sseds/pipeline.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

sseds::PipelineConfig resolve(const Overrides& o) {
  auto config = o.config.empty() ? sseds::PipelineConfig{} : sseds::load_config(o.config);
  if (o.seed) config.seed = *o.seed;
  if (o.out) config.output_dir = *o.out;
  return config;
}

sseds::Split parse_split(const std::string& s) {
  if (s == "train") return sseds::Split::train;
  if (s == "valid") return sseds::Split::valid;
  if (s == "test") return sseds::Split::test;
  throw sseds::UsageError("unknown split '" + s + "'");
}

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "pipeline config (JSON)")->required();
  cmd->add_option("--seed", o.seed, "override the master seed");
  cmd->add_option("--out", o.out, "override the output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sseds: single-shot embedding dimension search for CTR models"};
  app.require_subcommand(1);

  Overrides o;
  bool lenient = false;
  std::optional<double> kappa;
  std::vector<double> sweep;
  bool no_retrain = false, random_init = false;
  std::optional<std::string> checkpoint;
  std::string split = "test";

  auto* ingest = app.add_subcommand("ingest", "parse raw logs, build vocabularies and split");
  add_common(ingest, o);
  ingest->add_flag("--lenient", lenient, "skip malformed lines instead of failing");

  auto* pretrain = app.add_subcommand("pretrain", "train the full-dimension model");
  add_common(pretrain, o);

  auto* prune = app.add_subcommand("prune", "score slots and apply the budget");
  add_common(prune, o);
  prune->add_option("--kappa", kappa, "keep ratio in (0, 1]");
  prune->add_option("--kappa-sweep", sweep, "additional keep ratios to report")->delimiter(',');
  prune->add_option("--checkpoint", checkpoint, "pretrained checkpoint");

  auto* retrain = app.add_subcommand("retrain", "align and retrain the slim model");
  add_common(retrain, o);
  retrain->add_flag("--no-retrain", no_retrain, "keep the initialization (zero epochs)");
  retrain->add_flag("--random-init", random_init, "start from fresh random values");
  retrain->add_option("--checkpoint", checkpoint, "pruned checkpoint");

  auto* eval = app.add_subcommand("eval", "AUC, log loss and parameter counts");
  add_common(eval, o);
  eval->add_option("--checkpoint", checkpoint, "dense or slim checkpoint")->required();
  eval->add_option("--split", split, "train, valid or test");

  auto* report = app.add_subcommand("report", "collect reports into report.json and CSVs");
  add_common(report, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    auto config = resolve(o);
    if (lenient) config.dataset.strict = false;
    if (kappa) config.pruning.kappa = *kappa;
    if (!sweep.empty()) config.pruning.kappa_sweep = sweep;

    if (*ingest) {
      auto r = sseds::cmd_ingest(config);
      if (r.up_to_date) {
        std::cout << "cache up to date\n";
      } else {
        std::cout << "train " << r.sizes[0] << ", valid " << r.sizes[1] << ", test " << r.sizes[2] << " records";
        if (r.skipped_rows) std::cout << " (" << r.skipped_rows << " malformed lines skipped)";
        std::cout << "\n";
      }
    } else if (*pretrain) {
      auto m = sseds::cmd_pretrain(config);
      for (const auto& e : m.at("epochs"))
        std::cout << "epoch " << e.at("epoch") << " loss " << e.at("train_loss") << " valid auc " << e.at("valid_auc")
                  << "\n";
    } else if (*prune) {
      std::optional<std::filesystem::path> path;
      if (checkpoint) path = *checkpoint;
      auto r = sseds::cmd_prune(config, path);
      std::cout << "kept " << r.at("kept_params") << " of " << r.at("total_params") << " embedding parameters ("
                << r.at("kept_slots") << " slots), " << r.at("removed_fields").size() << " fields removed\n";
    } else if (*retrain) {
      std::optional<std::filesystem::path> path;
      if (checkpoint) path = *checkpoint;
      auto m = sseds::cmd_retrain(config, {no_retrain, random_init}, path);
      std::cout << "variant " << m.at("variant").get<std::string>() << ", d_max " << m.at("d_max") << "\n";
    } else if (*eval) {
      auto m = sseds::cmd_eval(config, *checkpoint, parse_split(split));
      std::cout << "auc " << m.auc << " logloss " << m.logloss << " params " << m.param_count << "\n";
    } else if (*report) {
      sseds::cmd_report(config);
      std::cout << "wrote " << (config.output_dir / "report.json").string() << "\n";
    }
  } catch (const sseds::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const sseds::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const sseds::NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

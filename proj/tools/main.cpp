#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "mmstack/commands.hpp"
#include "mmstack/errors.hpp"

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitIo = 3;
constexpr int kExitDivergence = 4;

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> threads;
  std::string log_level;
};

std::string env_or_empty(const char* name) {
  const char* v = std::getenv(name);
  return v ? v : "";
}

void setup_logging(const std::string& flag) {
  // Logs go to stderr so stdout stays clean for piping.
  auto logger = spdlog::stderr_color_mt("mmstack");
  logger->set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
  spdlog::set_default_logger(logger);
  std::string level = flag.empty() ? env_or_empty("MMSTACK_LOG_LEVEL") : flag;
  if (level.empty()) level = "info";
  const auto parsed = spdlog::level::from_str(level);
  if (parsed == spdlog::level::off && level != "off") {
    throw mmstack::ValidationError("unknown log level '" + level + "'");
  }
  spdlog::set_level(parsed);
}

mmstack::RunConfig resolve_config(const GlobalOptions& g) {
  mmstack::RunConfig cfg = g.config.empty() ? mmstack::RunConfig::from_json(nlohmann::json::object())
                                            : mmstack::load_run_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  if (g.threads) cfg.threads = *g.threads;
  const std::string env_out = env_or_empty("MMSTACK_OUT_DIR");
  if (!g.out.empty()) cfg.output_dir = g.out;
  else if (!env_out.empty()) cfg.output_dir = env_out;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal stacking ensemble for multi-label video tagging"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config, "Run config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Global seed (overrides config)");
  app.add_option("--out", g.out, "Output directory (overrides config and MMSTACK_OUT_DIR)");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error or off");

  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset");
  auto* modalities = app.add_subcommand("compare-modalities", "Single-modality base learners on a holdout split");
  auto* combinations = app.add_subcommand("compare-combinations", "Stacked model over a ladder of modality subsets");
  auto* fusion = app.add_subcommand("compare-fusion", "Stacking against concat, sum, max and attention fusion");
  auto* train = app.add_subcommand("train", "Train the stacked model on all labeled samples");

  auto* predict = app.add_subcommand("predict", "Write JSON-lines predictions for a manifest");
  std::string model_dir, predict_manifest, predict_out;
  predict->add_option("--model", model_dir, "Model bundle directory")->required()->check(CLI::ExistingDirectory);
  predict->add_option("--manifest", predict_manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  predict->add_option("--predictions", predict_out, "Output file (default <out>/predictions.jsonl)");

  auto* score = app.add_subcommand("score", "Score a prediction file against manifest labels");
  std::string score_predictions, score_manifest;
  score->add_option("--predictions", score_predictions, "JSON-lines predictions")->required()->check(CLI::ExistingFile);
  score->add_option("--manifest", score_manifest, "Dataset manifest with labels")->required()->check(CLI::ExistingFile);

  for (CLI::App* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    setup_logging(g.log_level);
    const mmstack::RunConfig cfg = resolve_config(g);
    if (synth->parsed()) {
      std::cout << mmstack::cmd_synth(cfg).string() << "\n";
    } else if (modalities->parsed()) {
      mmstack::cmd_compare_modalities(cfg);
    } else if (combinations->parsed()) {
      mmstack::cmd_compare_combinations(cfg);
    } else if (fusion->parsed()) {
      mmstack::cmd_compare_fusion(cfg);
    } else if (train->parsed()) {
      std::cout << mmstack::cmd_train(cfg).string() << "\n";
    } else if (predict->parsed()) {
      std::optional<std::filesystem::path> out;
      if (!predict_out.empty()) out = predict_out;
      std::cout << mmstack::cmd_predict(cfg, model_dir, predict_manifest, out).string() << "\n";
    } else if (score->parsed()) {
      const auto report = mmstack::cmd_score(cfg, score_predictions, score_manifest);
      const auto& row = report.rows.front();
      std::cout << "accuracy " << row.accuracy << " gap " << row.gap << "\n";
    }
  } catch (const mmstack::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const mmstack::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const mmstack::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mmstack/config.hpp"
#include "mmstack/dataset.hpp"
#include "mmstack/report.hpp"

namespace mmstack {

// Manifest datasets are assembled from disk; synth datasets are generated in
// memory with derive_seed(cfg.seed, "synth").
Dataset load_run_dataset(const RunConfig& cfg);

// Modalities a run uses: cfg.modalities, or every dataset modality in order.
std::vector<std::string> run_modalities(const RunConfig& cfg, const Dataset& data);

HoldoutSplit run_holdout(const RunConfig& cfg, const Dataset& data);

// Ladder from the config, or prefixes of the run modalities followed by the
// full set plus extras when the dataset has any.
std::vector<std::vector<std::string>> run_ladder(const RunConfig& cfg, const Dataset& data);

std::string ladder_name(const std::vector<std::string>& rung);

// Writes the synthetic dataset under cfg.output_dir; returns the manifest path.
std::filesystem::path cmd_synth(const RunConfig& cfg);

// Each comparison writes <command>.json / .csv under cfg.output_dir and
// returns the report.
EvalReport cmd_compare_modalities(const RunConfig& cfg);
EvalReport cmd_compare_combinations(const RunConfig& cfg);
EvalReport cmd_compare_fusion(const RunConfig& cfg);

// Trains the stacked model on every labeled sample and saves the bundle to
// cfg.output_dir / "model"; returns the bundle directory.
std::filesystem::path cmd_train(const RunConfig& cfg);

// Writes top_k predictions for every manifest sample as JSON lines; returns
// the output path (default cfg.output_dir / "predictions.jsonl").
std::filesystem::path cmd_predict(const RunConfig& cfg, const std::filesystem::path& model_dir,
                                  const std::filesystem::path& manifest,
                                  const std::optional<std::filesystem::path>& out = std::nullopt);

// Scores a prediction file against the manifest's labels. Manifest samples
// missing from the file count as empty prediction lists.
EvalReport cmd_score(const RunConfig& cfg, const std::filesystem::path& predictions,
                     const std::filesystem::path& manifest);

}  // namespace mmstack

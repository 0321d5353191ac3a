#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmstack/metrics.hpp"

namespace mmstack {

std::string artifact_version();

struct ReportRow {
  std::string name;
  double accuracy = 0.0;
  double gap = 0.0;
};

struct EvalReport {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string version = artifact_version();
  nlohmann::ordered_json split;   // holdout description, null when unused
  std::vector<ReportRow> rows;
  nlohmann::ordered_json config;  // the full run config
  // Outside the numbers block; differs between reruns.
  std::string timestamp;
  double wall_clock_seconds = 0.0;

  void validate() const;
  const ReportRow& row(const std::string& name) const;

  // {"numbers": {...}, "config": {...}, "meta": {...}}
  nlohmann::ordered_json to_json() const;
  // Reproducible part only.
  nlohmann::ordered_json numbers_json() const;
  std::string to_csv() const;
  static EvalReport from_json(const nlohmann::ordered_json& j);
};

// Writes <stem>.json and <stem>.csv under `dir`, each through a temp file and
// rename. Validation runs first, so a bad report writes nothing.
void write_report(const EvalReport& report, const std::filesystem::path& dir, const std::string& stem);

std::string utc_timestamp();

// One JSON object per line: {"sample_id": ..., "predictions": [[tag, conf], ...]}.
std::string encode_prediction_lines(const std::vector<std::string>& sample_ids,
                                    const std::vector<RankedPrediction>& preds);

struct PredictionFile {
  std::vector<std::string> sample_ids;
  std::vector<RankedPrediction> predictions;
};

PredictionFile parse_prediction_lines(const std::string& text);

}  // namespace mmstack

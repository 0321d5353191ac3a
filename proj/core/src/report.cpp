#include "mmstack/report.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <set>
#include <sstream>

#include "mmstack/errors.hpp"
#include "mmstack/feature_io.hpp"

#ifndef MMSTACK_VERSION
#define MMSTACK_VERSION "0.0.0"
#endif

namespace mmstack {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string artifact_version() { return MMSTACK_VERSION; }

void EvalReport::validate() const {
  if (command.empty()) throw ValidationError("report: command name missing");
  if (rows.empty()) throw ValidationError("report: no rows");
  std::set<std::string> names;
  for (const ReportRow& r : rows) {
    if (!names.insert(r.name).second) throw ValidationError("report: duplicate row '" + r.name + "'");
    if (!std::isfinite(r.accuracy) || !std::isfinite(r.gap)) {
      throw ValidationError("report: row '" + r.name + "' has a non-finite number");
    }
  }
}

const ReportRow& EvalReport::row(const std::string& name) const {
  for (const ReportRow& r : rows) {
    if (r.name == name) return r;
  }
  throw ValidationError("report has no row '" + name + "'");
}

ordered_json EvalReport::numbers_json() const {
  ordered_json n;
  n["command"] = command;
  n["version"] = version;
  n["config_hash"] = config_hash;
  n["seed"] = seed;
  n["split"] = split;
  ordered_json r = ordered_json::array();
  for (const ReportRow& row : rows) {
    ordered_json e;
    e["name"] = row.name;
    e["accuracy"] = row.accuracy;
    e["gap"] = row.gap;
    r.push_back(std::move(e));
  }
  n["rows"] = std::move(r);
  return n;
}

ordered_json EvalReport::to_json() const {
  ordered_json j;
  j["numbers"] = numbers_json();
  j["config"] = config;
  ordered_json meta;
  meta["timestamp"] = timestamp;
  meta["wall_clock_seconds"] = wall_clock_seconds;
  j["meta"] = std::move(meta);
  return j;
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out << "command,version,config_hash,seed,name,accuracy,gap\n";
  for (const ReportRow& r : rows) {
    out << csv_field(command) << ',' << csv_field(version) << ',' << config_hash << ',' << seed << ','
        << csv_field(r.name) << ',' << format_number(r.accuracy) << ',' << format_number(r.gap) << '\n';
  }
  return out.str();
}

EvalReport EvalReport::from_json(const ordered_json& j) {
  EvalReport r;
  try {
    const ordered_json& n = j.at("numbers");
    r.command = n.at("command").get<std::string>();
    r.version = n.at("version").get<std::string>();
    r.config_hash = n.at("config_hash").get<std::string>();
    r.seed = n.at("seed").get<std::uint64_t>();
    r.split = n.at("split");
    for (const ordered_json& row : n.at("rows")) {
      r.rows.push_back({row.at("name").get<std::string>(), row.at("accuracy").get<double>(), row.at("gap").get<double>()});
    }
    if (j.contains("config")) r.config = j.at("config");
    if (j.contains("meta")) {
      r.timestamp = j.at("meta").value("timestamp", std::string());
      r.wall_clock_seconds = j.at("meta").value("wall_clock_seconds", 0.0);
    }
  } catch (const ordered_json::exception& e) {
    throw ValidationError(std::string("malformed report: ") + e.what());
  }
  return r;
}

void write_report(const EvalReport& report, const std::filesystem::path& dir, const std::string& stem) {
  report.validate();
  const std::string json_text = report.to_json().dump(2) + "\n";
  const std::string csv_text = report.to_csv();
  write_file_atomic(dir / (stem + ".json"), json_text);
  write_file_atomic(dir / (stem + ".csv"), csv_text);
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string encode_prediction_lines(const std::vector<std::string>& sample_ids,
                                    const std::vector<RankedPrediction>& preds) {
  if (sample_ids.size() != preds.size()) throw AlignmentError("prediction rows and sample ids differ in count");
  std::string out;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    ordered_json line;
    line["sample_id"] = sample_ids[i];
    ordered_json list = ordered_json::array();
    for (const TagScore& s : preds[i]) list.push_back(ordered_json::array({s.tag, s.confidence}));
    line["predictions"] = std::move(list);
    out += line.dump();
    out += '\n';
  }
  return out;
}

PredictionFile parse_prediction_lines(const std::string& text) {
  PredictionFile file;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "prediction line " + std::to_string(number);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError(where + ": " + e.what());
    }
    try {
      std::string id = j.at("sample_id").get<std::string>();
      if (!seen.insert(id).second) throw ValidationError(where + ": sample '" + id + "' appears twice");
      RankedPrediction pred;
      for (const json& pair : j.at("predictions")) {
        if (!pair.is_array() || pair.size() != 2 || !pair.at(0).is_number_integer() || !pair.at(1).is_number()) {
          throw FormatError(where + ": each prediction must be [tag_id, confidence]");
        }
        pred.push_back({pair.at(0).get<int>(), pair.at(1).get<double>()});
      }
      file.sample_ids.push_back(std::move(id));
      file.predictions.push_back(std::move(pred));
    } catch (const json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
  }
  return file;
}

}  // namespace mmstack

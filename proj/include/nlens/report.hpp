#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "nlens/attribution.hpp"
#include "nlens/editing.hpp"
#include "nlens/metrics.hpp"

namespace nlens {

using Json = nlohmann::ordered_json;

inline constexpr int kReportSchemaVersion = 1;

// Token text is included when a tokenizer is given.
Json to_json(const ProjectionReport& p, const Tokenizer* tokenizer);
Json to_json(const NeuronReport& r, const Tokenizer* tokenizer);
Json to_json(const CategoryMetrics& m);
Json to_json(const BiasMetrics& m);
Json to_json(const StereoMetrics& m);
Json to_json(const AccuracyResult& r);
Json to_json(const HeadGrid& g, size_t top_n);
Json to_json(const IneParams& p);
Json to_json(const EditPlan& plan);

EditPlan edit_plan_from_json(const Json& j);
EditPlan load_edit_plan(const std::filesystem::path& path);

// Fixed-precision number formatting shared by the CSV writers.
std::string format_number(double v);

std::string bias_csv(const BiasMetrics& m);
std::string pair_scores_csv(const std::vector<PairedCase>& pairs, const BiasMetrics& m);
std::string neurons_csv(const std::vector<NeuronReport>& rows, const Tokenizer* tokenizer);
std::string head_grid_csv(const HeadGrid& g);
std::string cna_csv(const std::vector<CnaRow>& rows, const Tokenizer* tokenizer);
std::string frequency_csv(const std::vector<std::pair<int, double>>& curve);

// Writes `text` to `path`, creating parent directories.
void write_text(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const Json& j);
Json read_json(const std::filesystem::path& path);

struct RunManifest {
  std::string command;
  std::string config_path;
  std::string model_hash;
  std::map<std::string, std::string> dataset_hashes;  // path -> hash
  uint64_t seed = 0;
  std::string timestamp;
  std::vector<std::string> outputs;
  Json extra = Json::object();
};

// UTC ISO-8601; honours SOURCE_DATE_EPOCH so reruns can be byte-identical.
std::string manifest_timestamp();
Json to_json(const RunManifest& m);

}  // namespace nlens

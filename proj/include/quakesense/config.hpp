#pragma once

// Run configuration: one JSON file drives every pipeline step. Relative
// paths resolve against the directory holding the config file.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "quakesense/analysis.hpp"
#include "quakesense/evaluation.hpp"
#include "quakesense/fusion.hpp"
#include "quakesense/geo.hpp"
#include "quakesense/llm_client.hpp"
#include "quakesense/prompt.hpp"

namespace quakesense {

struct ZonesConfig {
  std::filesystem::path path;
  ZoneKind kind = ZoneKind::Zip;
  std::string id_property;
  LocationFields fields;
};

struct ImageSourceConfig {
  std::optional<std::filesystem::path> directory;  // local provider
  std::string url_template;                       // live provider
  std::string api_key_env;
  std::filesystem::path store_dir;
};

struct DataSourcesConfig {
  std::filesystem::path vs30;
  std::filesystem::path buildings;
  double building_radius_m = 100.0;
  std::filesystem::path cbg;
  std::string cbg_id_property = "GEOID";
  std::filesystem::path acs;
  ImageSourceConfig images;
  std::filesystem::path dyfi;
  std::optional<std::filesystem::path> dyfi_county;
  std::optional<std::filesystem::path> zip_county;
};

struct AnalysisConfig {
  std::size_t top_k = 15;
  std::optional<std::filesystem::path> stopwords;
  std::vector<Perspective> perspectives = default_perspectives();
};

// Command-line adjustments applied on top of the file before validation.
struct ConfigOverrides {
  std::vector<std::string> ablate;
  bool redact_location = false;
  bool icl = false;
  std::optional<std::size_t> rag_k;
  std::optional<std::uint64_t> seed;
};

struct RunConfig {
  std::filesystem::path source;    // config file
  std::filesystem::path base_dir;  // its directory
  std::filesystem::path event;
  ZonesConfig zones;
  SamplePlan sample_plan;
  DataSourcesConfig data;
  PromptSpec prompt;
  ModelConfig model;
  RollupMode rollup = RollupMode::SampleWeighted;
  AnalysisConfig analysis;
  std::filesystem::path output_dir;
  std::filesystem::path cache_dir;
  std::optional<std::filesystem::path> demonstration_bank;
  nlohmann::json sweep = nlohmann::json::array();

  // The input document after overrides, with defaults filled in.
  nlohmann::json resolved;
};

// Every problem found is reported in one Error(Config).
RunConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir,
                       const std::string& source_name = "<memory>");
RunConfig load_config(const std::filesystem::path& path, const ConfigOverrides& overrides = {});

// Applies overrides to a raw config document.
void apply_overrides(nlohmann::json& doc, const ConfigOverrides& overrides);

// Hash of the resolved config, excluding output_dir and cache_dir.
std::string config_digest(const RunConfig& cfg);

}  // namespace quakesense

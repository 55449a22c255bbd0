#pragma once

// Synthetic radial scenario: square zip zones strung out south of a
// Ridgecrest-like epicenter at increasing distance, with every data source a
// run needs. Used by tests, the acceptance binary and tools/make_scenario.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace quakesense {

struct ScenarioOptions {
  std::size_t zones = 10;
  std::size_t points_per_zone = 50;
  std::uint64_t seed = 7;
  double missing_image_rate = 0.0;  // fraction of samples without an image
  bool vs30_nodata_patch = false;   // nodata cells over part of zone 1
  double garbage_rate = 0.0;        // mock responses forced unparseable
  bool demonstration_bank = false;  // bank.jsonl from a second event
  bool dyfi_gap = false;            // drop the last zone from DYFI
  std::string model_endpoint;       // empty: mock
  std::string model_id;
  std::string api_key_env;
};

struct ScenarioInfo {
  std::filesystem::path config;
  std::vector<std::string> zone_ids;           // in distance order
  std::vector<double> zone_distance_km;        // centre distance
  std::vector<std::string> missing_images;     // sample ids
  std::string redacted_city = "Ridgecrest";
  std::string redacted_state = "California";
};

inline constexpr double kScenarioEpicenterLat = 35.7695;
inline constexpr double kScenarioEpicenterLon = -117.5993;

// Writes the scenario under `dir` (created if needed) and returns where the
// config landed. Output of a run goes to dir/out.
ScenarioInfo write_scenario(const std::filesystem::path& dir, const ScenarioOptions& opts = {});

}  // namespace quakesense

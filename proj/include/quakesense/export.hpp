#pragma once

// Choropleth GeoJSON and the run manifest.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>

#include "json.hpp"
#include "quakesense/evaluation.hpp"
#include "quakesense/geo.hpp"

namespace quakesense {

std::string_view software_version();

// FeatureCollection with one feature per score, geometry copied from the
// matching zone (Polygon or MultiPolygon as loaded), and properties zone_id,
// mean_mmi_pred, n_effective and, only when known, mmi_truth. An epicenter
// Point feature with role "epicenter" is appended when given. Throws
// Error(Export) for a score with no geometry.
std::string export_choropleth(std::span<const ZoneScore> scores, std::span<const ZonePolygon> zones,
                              const std::optional<GeoPoint>& epicenter);

struct ZoneCounts {
  std::size_t requested = 0;
  std::size_t fused_ok = 0;
  std::size_t fused_rejected = 0;
  std::size_t predicted = 0;
  std::size_t failed = 0;
};

struct RunManifest {
  std::string config_digest;
  std::uint64_t seed = 0;
  std::string model_id;
  std::string prompt_mode;
  std::map<std::string, ZoneCounts> counts;  // by zone id
  std::string started;
  std::string finished;
  std::string software_version{quakesense::software_version()};
  nlohmann::json details = nlohmann::json::object();  // free-form run facts
};

// requested = fused_ok + fused_rejected and fused_ok = predicted + failed for
// every zone. Throws Error(Conservation) naming the first violating zone.
void check_conservation(const RunManifest& m);

nlohmann::json to_json(const RunManifest& m);

// Checks conservation, then writes atomically.
void write_manifest(const std::filesystem::path& path, const RunManifest& m);

// UTC time as 2026-01-31T12:00:00Z.
std::string utc_timestamp();

}  // namespace quakesense

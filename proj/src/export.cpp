#include "quakesense/export.hpp"

#include <chrono>
#include <ctime>

#include <fmt/format.h>

#include "quakesense/error.hpp"
#include "quakesense/io.hpp"

#ifndef QS_SOFTWARE_VERSION
#define QS_SOFTWARE_VERSION "0.0.0"
#endif

namespace quakesense {

using nlohmann::json;

std::string_view software_version() { return QS_SOFTWARE_VERSION; }

namespace {

json ring_json(const Ring& ring) {
  json arr = json::array();
  for (const auto& p : ring) arr.push_back(json::array({p.lon, p.lat}));
  return arr;
}

json part_json(const PolygonPart& part) {
  json rings = json::array({ring_json(part.outer)});
  for (const auto& h : part.holes) rings.push_back(ring_json(h));
  return rings;
}

json geometry_json(const ZonePolygon& z) {
  if (z.multi) {
    json parts = json::array();
    for (const auto& p : z.parts) parts.push_back(part_json(p));
    return {{"type", "MultiPolygon"}, {"coordinates", parts}};
  }
  return {{"type", "Polygon"}, {"coordinates", part_json(z.parts.front())}};
}

}  // namespace

std::string export_choropleth(std::span<const ZoneScore> scores, std::span<const ZonePolygon> zones,
                              const std::optional<GeoPoint>& epicenter) {
  std::map<std::string, const ZonePolygon*> by_id;
  for (const auto& z : zones) by_id.emplace(z.zone_id, &z);

  json features = json::array();
  for (const auto& s : scores) {
    const auto it = by_id.find(s.zone_id);
    if (it == by_id.end()) {
      throw Error(ErrorKind::Export, fmt::format("zone {} has a score but no geometry", s.zone_id));
    }
    json props = {{"zone_id", s.zone_id}, {"mean_mmi_pred", s.mean_pred}, {"n_effective", s.n_effective}};
    if (s.truth) props["mmi_truth"] = *s.truth;
    features.push_back({{"type", "Feature"}, {"properties", props}, {"geometry", geometry_json(*it->second)}});
  }
  if (epicenter) {
    features.push_back({{"type", "Feature"},
                        {"properties", {{"role", "epicenter"}}},
                        {"geometry", {{"type", "Point"}, {"coordinates", {epicenter->lon, epicenter->lat}}}}});
  }
  const json fc = {{"type", "FeatureCollection"}, {"features", features}};
  return fc.dump() + "\n";
}

void check_conservation(const RunManifest& m) {
  for (const auto& [zone, c] : m.counts) {
    if (c.requested != c.fused_ok + c.fused_rejected) {
      throw Error(ErrorKind::Conservation,
                  fmt::format("zone {}: requested {} != fused_ok {} + fused_rejected {}", zone, c.requested,
                              c.fused_ok, c.fused_rejected));
    }
    if (c.fused_ok != c.predicted + c.failed) {
      throw Error(ErrorKind::Conservation, fmt::format("zone {}: fused_ok {} != predicted {} + failed {}", zone,
                                                       c.fused_ok, c.predicted, c.failed));
    }
  }
}

json to_json(const RunManifest& m) {
  json counts = json::object();
  ZoneCounts total;
  for (const auto& [zone, c] : m.counts) {
    counts[zone] = {{"requested", c.requested},
                    {"fused_ok", c.fused_ok},
                    {"fused_rejected", c.fused_rejected},
                    {"predicted", c.predicted},
                    {"failed", c.failed}};
    total.requested += c.requested;
    total.fused_ok += c.fused_ok;
    total.fused_rejected += c.fused_rejected;
    total.predicted += c.predicted;
    total.failed += c.failed;
  }
  return {{"config_digest", m.config_digest},
          {"seed", m.seed},
          {"model_id", m.model_id},
          {"prompt_mode", m.prompt_mode},
          {"counts", counts},
          {"totals",
           {{"requested", total.requested},
            {"fused_ok", total.fused_ok},
            {"fused_rejected", total.fused_rejected},
            {"predicted", total.predicted},
            {"failed", total.failed}}},
          {"started", m.started},
          {"finished", m.finished},
          {"software_version", m.software_version},
          {"details", m.details}};
}

void write_manifest(const std::filesystem::path& path, const RunManifest& m) {
  check_conservation(m);
  atomic_write(path, to_json(m).dump(2) + "\n");
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  return fmt::format("{:04}-{:02}-{:02}T{:02}:{:02}:{:02}Z", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                     tm.tm_hour, tm.tm_min, tm.tm_sec);
}

}  // namespace quakesense

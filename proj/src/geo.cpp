#include "quakesense/geo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include <fmt/format.h>

#include "json.hpp"
#include "quakesense/error.hpp"
#include "quakesense/io.hpp"

namespace quakesense {

using nlohmann::json;

bool is_valid(const GeoPoint& p) {
  return std::isfinite(p.lat) && std::isfinite(p.lon) && p.lat >= -90.0 && p.lat <= 90.0 &&
         p.lon >= -180.0 && p.lon <= 180.0;
}

GeoPoint make_point(double lat, double lon) {
  GeoPoint p{lat, lon};
  if (!is_valid(p)) {
    throw Error(ErrorKind::Value, fmt::format("invalid coordinate ({}, {})", lat, lon));
  }
  return p;
}

std::string_view to_string(ZoneKind kind) { return kind == ZoneKind::Zip ? "zip" : "county"; }

ZoneKind parse_zone_kind(std::string_view text) {
  if (text == "zip") return ZoneKind::Zip;
  if (text == "county") return ZoneKind::County;
  throw Error(ErrorKind::Config, fmt::format("unknown zone kind '{}' (expected zip or county)", text));
}

std::string_view default_id_property(ZoneKind kind) {
  return kind == ZoneKind::Zip ? "ZCTA5CE10" : "GEOID";
}

BBox compute_bbox(const std::vector<PolygonPart>& parts) {
  BBox b{90.0, 180.0, -90.0, -180.0};
  for (const auto& part : parts) {
    for (const auto& v : part.outer) {
      b.min_lat = std::min(b.min_lat, v.lat);
      b.max_lat = std::max(b.max_lat, v.lat);
      b.min_lon = std::min(b.min_lon, v.lon);
      b.max_lon = std::max(b.max_lon, v.lon);
    }
    for (const auto& hole : part.holes) {
      for (const auto& v : hole) {
        b.min_lat = std::min(b.min_lat, v.lat);
        b.max_lat = std::max(b.max_lat, v.lat);
        b.min_lon = std::min(b.min_lon, v.lon);
        b.max_lon = std::max(b.max_lon, v.lon);
      }
    }
  }
  return b;
}

double signed_ring_area(const Ring& ring) {
  double twice = 0.0;
  for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
    twice += ring[i].lon * ring[i + 1].lat - ring[i + 1].lon * ring[i].lat;
  }
  return 0.5 * twice;
}

double part_area(const PolygonPart& part) {
  double a = std::abs(signed_ring_area(part.outer));
  for (const auto& h : part.holes) a -= std::abs(signed_ring_area(h));
  return std::max(0.0, a);
}

double zone_area(const ZonePolygon& zone) {
  double a = 0.0;
  for (const auto& p : zone.parts) a += part_area(p);
  return a;
}

namespace {

std::size_t line_of_offset(std::string_view text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + offset, '\n'));
}

Ring parse_ring(const json& coords, std::size_t feature_index, const std::string& source) {
  if (!coords.is_array()) {
    throw Error(ErrorKind::Schema,
                fmt::format("{}: feature {}: ring is not an array", source, feature_index));
  }
  Ring ring;
  ring.reserve(coords.size());
  for (const auto& c : coords) {
    if (!c.is_array() || c.size() < 2 || !c[0].is_number() || !c[1].is_number()) {
      throw Error(ErrorKind::Schema,
                  fmt::format("{}: feature {}: bad coordinate {}", source, feature_index, c.dump()));
    }
    GeoPoint p{c[1].get<double>(), c[0].get<double>()};
    if (!is_valid(p)) {
      throw Error(ErrorKind::Schema, fmt::format("{}: feature {}: coordinate out of range {}",
                                                 source, feature_index, c.dump()));
    }
    ring.push_back(p);
  }
  if (ring.size() < 4 || !(ring.front() == ring.back())) {
    throw Error(ErrorKind::Schema,
                fmt::format("{}: feature {}: ring must be closed with at least 4 vertices",
                            source, feature_index));
  }
  return ring;
}

PolygonPart parse_polygon(const json& rings, std::size_t feature_index, const std::string& source) {
  if (!rings.is_array() || rings.empty()) {
    throw Error(ErrorKind::Schema,
                fmt::format("{}: feature {}: polygon has no rings", source, feature_index));
  }
  PolygonPart part;
  part.outer = parse_ring(rings[0], feature_index, source);
  for (std::size_t i = 1; i < rings.size(); ++i) {
    part.holes.push_back(parse_ring(rings[i], feature_index, source));
  }
  return part;
}

}  // namespace

std::vector<ZonePolygon> parse_zones(std::string_view geojson, ZoneKind kind,
                                     std::string_view id_property, const std::string& source_name) {
  json doc;
  try {
    doc = json::parse(geojson);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::Parse, fmt::format("{}: malformed GeoJSON at line {}: {}", source_name,
                                              line_of_offset(geojson, e.byte), e.what()));
  }
  if (!doc.is_object() || doc.value("type", "") != "FeatureCollection" ||
      !doc.contains("features") || !doc["features"].is_array()) {
    throw Error(ErrorKind::Schema, fmt::format("{}: not a GeoJSON FeatureCollection", source_name));
  }

  std::vector<ZonePolygon> zones;
  std::set<std::string> seen;
  const auto& features = doc["features"];
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& f = features[i];
    const json props = f.contains("properties") && f["properties"].is_object() ? f["properties"]
                                                                                 : json::object();
    if (!props.contains(id_property) || props[id_property].is_null()) {
      throw Error(ErrorKind::Schema, fmt::format("{}: feature {} is missing id property '{}'",
                                                 source_name, i, id_property));
    }
    ZonePolygon z;
    z.kind = kind;
    const auto& idv = props[std::string(id_property)];
    if (idv.is_string()) {
      z.zone_id = idv.get<std::string>();
    } else if (idv.is_number_integer()) {
      z.zone_id = std::to_string(idv.get<long long>());
    } else {
      throw Error(ErrorKind::Schema, fmt::format("{}: feature {}: id property '{}' is not a string",
                                                 source_name, i, id_property));
    }
    if (z.zone_id.empty()) {
      throw Error(ErrorKind::Schema, fmt::format("{}: feature {} has an empty id", source_name, i));
    }
    if (!seen.insert(z.zone_id).second) {
      throw Error(ErrorKind::Conflict,
                  fmt::format("{}: duplicate zone id '{}' (feature {})", source_name, z.zone_id, i));
    }
    for (const auto& [k, v] : props.items()) {
      if (k != id_property && v.is_string()) z.attributes[k] = v.get<std::string>();
    }

    if (!f.contains("geometry") || !f["geometry"].is_object()) {
      throw Error(ErrorKind::Schema, fmt::format("{}: feature {} has no geometry", source_name, i));
    }
    const auto& g = f["geometry"];
    const std::string type = g.value("type", "");
    if (!g.contains("coordinates")) {
      throw Error(ErrorKind::Schema,
                  fmt::format("{}: feature {} geometry has no coordinates", source_name, i));
    }
    if (type == "Polygon") {
      z.parts.push_back(parse_polygon(g["coordinates"], i, source_name));
    } else if (type == "MultiPolygon") {
      z.multi = true;
      if (!g["coordinates"].is_array() || g["coordinates"].empty()) {
        throw Error(ErrorKind::Schema,
                    fmt::format("{}: feature {}: empty MultiPolygon", source_name, i));
      }
      for (const auto& poly : g["coordinates"]) z.parts.push_back(parse_polygon(poly, i, source_name));
    } else {
      throw Error(ErrorKind::Schema, fmt::format("{}: feature {}: unsupported geometry type '{}'",
                                                 source_name, i, type));
    }
    z.bbox = compute_bbox(z.parts);
    zones.push_back(std::move(z));
  }
  return zones;
}

std::vector<ZonePolygon> load_zones(const std::filesystem::path& path, ZoneKind kind,
                                    std::optional<std::string> id_property) {
  const std::string prop = id_property ? *id_property : std::string(default_id_property(kind));
  return parse_zones(read_text_file(path), kind, prop, path.string());
}

namespace {

bool on_segment(const GeoPoint& p, const GeoPoint& a, const GeoPoint& b) {
  const double cross = (b.lon - a.lon) * (p.lat - a.lat) - (b.lat - a.lat) * (p.lon - a.lon);
  if (cross != 0.0) return false;
  return p.lon >= std::min(a.lon, b.lon) && p.lon <= std::max(a.lon, b.lon) &&
         p.lat >= std::min(a.lat, b.lat) && p.lat <= std::max(a.lat, b.lat);
}

bool ring_on_boundary(const GeoPoint& p, const Ring& ring) {
  for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
    if (on_segment(p, ring[i], ring[i + 1])) return true;
  }
  return false;
}

// Ray cast towards +lon; returns the crossing parity of one ring.
bool ring_crossings_odd(const GeoPoint& p, const Ring& ring) {
  bool odd = false;
  for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
    const GeoPoint& a = ring[i];
    const GeoPoint& b = ring[i + 1];
    if ((a.lat > p.lat) != (b.lat > p.lat)) {
      const double x = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
      if (p.lon < x) odd = !odd;
    }
  }
  return odd;
}

bool part_on_boundary(const GeoPoint& p, const PolygonPart& part) {
  if (ring_on_boundary(p, part.outer)) return true;
  for (const auto& h : part.holes) {
    if (ring_on_boundary(p, h)) return true;
  }
  return false;
}

bool point_in_part(const GeoPoint& p, const PolygonPart& part) {
  if (part_on_boundary(p, part)) return true;
  bool odd = ring_crossings_odd(p, part.outer);
  for (const auto& h : part.holes) odd ^= ring_crossings_odd(p, h);
  return odd;
}

}  // namespace

bool point_on_boundary(const GeoPoint& p, const ZonePolygon& zone) {
  for (const auto& part : zone.parts) {
    if (part_on_boundary(p, part)) return true;
  }
  return false;
}

bool point_in_polygon(const GeoPoint& p, const ZonePolygon& zone) {
  if (!zone.bbox.contains(p)) return false;
  if (point_on_boundary(p, zone)) return true;
  bool odd = false;
  for (const auto& part : zone.parts) {
    odd ^= ring_crossings_odd(p, part.outer);
    for (const auto& h : part.holes) odd ^= ring_crossings_odd(p, h);
  }
  return odd;
}

namespace {

constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

CounterRng::CounterRng(std::uint64_t seed, std::uint64_t stream)
    : key_(mix64(seed ^ mix64(stream + 0x9e3779b97f4a7c15ULL))) {}

std::uint64_t CounterRng::next_u64() {
  const std::uint64_t out = mix64(key_ ^ mix64(counter_ * 0x9e3779b97f4a7c15ULL + 1));
  ++counter_;
  return out;
}

double CounterRng::next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::vector<GeoPoint> sample_uniform(const ZonePolygon& zone, const SamplePlan& plan,
                                     std::uint64_t zone_index) {
  if (plan.points_per_zone < 1) {
    throw Error(ErrorKind::Config, "points_per_zone must be >= 1");
  }
  std::vector<double> areas;
  std::vector<BBox> boxes;
  double total = 0.0;
  for (const auto& part : zone.parts) {
    areas.push_back(part_area(part));
    boxes.push_back(compute_bbox({part}));
    total += areas.back();
  }
  if (!(total > 0.0)) {
    throw Error(ErrorKind::Sampling,
                fmt::format("zone {}: polygon has zero planar area", zone.zone_id));
  }

  CounterRng rng(plan.seed, zone_index);
  std::vector<GeoPoint> out;
  out.reserve(plan.points_per_zone);
  std::size_t attempts = 0;
  while (out.size() < plan.points_per_zone) {
    std::size_t rejections = 0;
    for (;;) {
      ++attempts;
      const double pick = rng.next_unit() * total;
      std::size_t k = 0;
      double acc = areas[0];
      while (k + 1 < areas.size() && pick >= acc) acc += areas[++k];
      const BBox& b = boxes[k];
      const double lon = b.min_lon + rng.next_unit() * (b.max_lon - b.min_lon);
      const double lat = b.min_lat + rng.next_unit() * (b.max_lat - b.min_lat);
      const GeoPoint p{lat, lon};
      if (point_in_part(p, zone.parts[k])) {
        out.push_back(p);
        break;
      }
      if (++rejections > plan.max_rejections_per_point) {
        const double rate = static_cast<double>(out.size()) / static_cast<double>(attempts);
        throw Error(ErrorKind::Sampling,
                    fmt::format("zone {}: rejection budget exhausted after {} attempts "
                                "(acceptance rate {:.6f})",
                                zone.zone_id, attempts, rate));
      }
    }
  }
  return out;
}

std::string make_sample_id(std::string_view zone_id, std::size_t index, std::size_t count) {
  std::size_t width = 3;
  for (std::size_t c = count; c >= 1000; c /= 10) ++width;
  return fmt::format("{}-{:0{}}", zone_id, index, width);
}

std::vector<SampledPoint> sample_zones(std::span<const ZonePolygon> zones, const SamplePlan& plan) {
  std::vector<SampledPoint> out;
  out.reserve(zones.size() * plan.points_per_zone);
  for (std::size_t z = 0; z < zones.size(); ++z) {
    const auto pts = sample_uniform(zones[z], plan, z);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      out.push_back({zones[z].zone_id, make_sample_id(zones[z].zone_id, i + 1, pts.size()), pts[i]});
    }
  }
  return out;
}

std::string points_to_csv(std::span<const SampledPoint> points) {
  std::string out = "zone_id,sample_id,lat,lon\n";
  for (const auto& p : points) {
    out += fmt::format("{},{},{},{}\n", csv_escape(p.zone_id), csv_escape(p.sample_id),
                       p.point.lat, p.point.lon);
  }
  return out;
}

std::string points_to_jsonl(std::span<const SampledPoint> points) {
  std::string out;
  for (const auto& p : points) {
    json j = {{"zone_id", p.zone_id}, {"sample_id", p.sample_id}, {"lat", p.point.lat},
              {"lon", p.point.lon}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<SampledPoint> load_points_jsonl(const std::filesystem::path& path) {
  std::vector<SampledPoint> out;
  std::size_t n = 0;
  for (const auto& line : read_lines(path)) {
    ++n;
    try {
      const json j = json::parse(line);
      out.push_back({j.at("zone_id").get<std::string>(), j.at("sample_id").get<std::string>(),
                     make_point(j.at("lat").get<double>(), j.at("lon").get<double>())});
    } catch (const json::exception& e) {
      throw Error(ErrorKind::Parse, fmt::format("{}: record {}: {}", path.string(), n, e.what()));
    }
  }
  return out;
}

double haversine_km(const GeoPoint& a, const GeoPoint& b) {
  constexpr double rad = std::numbers::pi / 180.0;
  const double dlat = (b.lat - a.lat) * rad;
  const double dlon = (b.lon - a.lon) * rad;
  const double s1 = std::sin(dlat / 2.0);
  const double s2 = std::sin(dlon / 2.0);
  double h = s1 * s1 + std::cos(a.lat * rad) * std::cos(b.lat * rad) * s2 * s2;
  h = std::clamp(h, 0.0, 1.0);
  return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(h));
}

ZipCountyMap load_zip_county(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  const auto zip = t.column("zip");
  const auto county = t.column("county");
  const auto name = t.column("county_name");
  if (!zip || !county) {
    throw Error(ErrorKind::Schema,
                fmt::format("{}: zip->county mapping needs columns zip,county", path.string()));
  }
  ZipCountyMap m;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    if (row.size() < t.header.size()) {
      throw Error(ErrorKind::Parse,
                  fmt::format("{}: line {}: too few fields", path.string(), t.line_numbers[r]));
    }
    CountyRef ref{trim(row[*county]), name ? trim(row[*name]) : trim(row[*county])};
    if (!m.emplace(trim(row[*zip]), ref).second) {
      throw Error(ErrorKind::Conflict, fmt::format("{}: line {}: duplicate zip '{}'", path.string(),
                                                   t.line_numbers[r], row[*zip]));
    }
  }
  return m;
}

}  // namespace quakesense

#include "quakesense/fusion.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "httplib.h"
#include "quakesense/error.hpp"
#include "quakesense/io.hpp"

namespace quakesense {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Earthquake event

EarthquakeParams parse_event(const json& j, const std::string& source_name) {
  EarthquakeParams e;
  try {
    if (j.value("type", "") == "Feature") {
      const auto& props = j.at("properties");
      const auto& coords = j.at("geometry").at("coordinates");
      e.event_id = j.value("id", "");
      e.place = props.value("place", "");
      e.magnitude = props.at("mag").get<double>();
      e.epicenter = make_point(coords.at(1).get<double>(), coords.at(0).get<double>());
      e.depth_km = coords.size() > 2 ? coords.at(2).get<double>() : 0.0;
      const auto ms = props.at("time").get<long long>();
      const std::time_t secs = static_cast<std::time_t>(ms / 1000);
      std::tm tm{};
      gmtime_r(&secs, &tm);
      e.event_date = fmt::format("{:04}-{:02}-{:02}", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday);
    } else {
      e.event_id = j.at("id").get<std::string>();
      e.place = j.at("place").get<std::string>();
      e.epicenter = make_point(j.at("lat").get<double>(), j.at("lon").get<double>());
      e.magnitude = j.at("mag").get<double>();
      e.depth_km = j.at("depth").get<double>();
      e.event_date = j.at("date").get<std::string>();
    }
  } catch (const json::exception& ex) {
    throw Error(ErrorKind::Schema, fmt::format("{}: bad earthquake event: {}", source_name, ex.what()));
  } catch (const Error& ex) {
    throw Error(ErrorKind::Schema, fmt::format("{}: bad earthquake event: {}", source_name, ex.what()));
  }
  if (!std::isfinite(e.magnitude) || e.magnitude < 0.0 || e.magnitude > 10.0) {
    throw Error(ErrorKind::Value, fmt::format("{}: magnitude {} outside [0, 10]", source_name, e.magnitude));
  }
  if (!std::isfinite(e.depth_km) || e.depth_km < 0.0) {
    throw Error(ErrorKind::Value, fmt::format("{}: depth {} km is negative", source_name, e.depth_km));
  }
  return e;
}

EarthquakeParams load_event(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::parse_error& ex) {
    throw Error(ErrorKind::Parse, fmt::format("{}: {}", path.string(), ex.what()));
  }
  return parse_event(j, path.string());
}

// ---------------------------------------------------------------------------
// VS30 raster

Vs30Grid::Vs30Grid(std::size_t ncols, std::size_t nrows, double xll_corner, double yll_corner,
                   double cell_size, double nodata, std::vector<double> values)
    : ncols_(ncols), nrows_(nrows), xll_(xll_corner), yll_(yll_corner), cell_(cell_size),
      nodata_(nodata), values_(std::move(values)) {
  if (ncols_ == 0 || nrows_ == 0 || !(cell_ > 0.0)) {
    throw Error(ErrorKind::Schema, "VS30 grid must have positive dimensions and cell size");
  }
  if (values_.size() != ncols_ * nrows_) {
    throw Error(ErrorKind::Schema, fmt::format("VS30 grid has {} values, expected {}x{}",
                                               values_.size(), nrows_, ncols_));
  }
}

namespace {

struct GridHeader {
  std::optional<double> ncols, nrows, xll, yll, cell;
  bool x_center = false, y_center = false;
  double nodata = -9999.0;
};

void apply_header_key(GridHeader& h, const std::string& key, double v) {
  const std::string k = to_lower(key);
  if (k == "ncols") h.ncols = v;
  else if (k == "nrows") h.nrows = v;
  else if (k == "xllcorner") h.xll = v;
  else if (k == "xllcenter") { h.xll = v; h.x_center = true; }
  else if (k == "yllcorner") h.yll = v;
  else if (k == "yllcenter") { h.yll = v; h.y_center = true; }
  else if (k == "cellsize") h.cell = v;
  else if (k == "nodata_value") h.nodata = v;
  else throw Error(ErrorKind::Schema, fmt::format("unknown grid header key '{}'", key));
}

Vs30Grid finish_grid(const GridHeader& h, std::vector<double> values, const std::string& source) {
  if (!h.ncols || !h.nrows || !h.xll || !h.yll || !h.cell) {
    throw Error(ErrorKind::Schema,
                fmt::format("{}: grid header needs ncols, nrows, xll, yll and cellsize", source));
  }
  double xll = *h.xll, yll = *h.yll;
  if (h.x_center) xll -= *h.cell / 2.0;
  if (h.y_center) yll -= *h.cell / 2.0;
  return Vs30Grid(static_cast<std::size_t>(*h.ncols), static_cast<std::size_t>(*h.nrows), xll, yll,
                  *h.cell, h.nodata, std::move(values));
}

}  // namespace

Vs30Grid Vs30Grid::parse_esri_ascii(std::string_view text, const std::string& source_name) {
  std::istringstream in{std::string(text)};
  GridHeader h;
  std::string token;
  std::vector<double> values;
  while (in >> token) {
    if (std::isalpha(static_cast<unsigned char>(token[0]))) {
      std::string val;
      if (!(in >> val)) {
        throw Error(ErrorKind::Parse, fmt::format("{}: header '{}' has no value", source_name, token));
      }
      const auto v = parse_double(val);
      if (!v) throw Error(ErrorKind::Parse, fmt::format("{}: bad header value '{}'", source_name, val));
      apply_header_key(h, token, *v);
    } else {
      const auto v = parse_double(token);
      if (!v) {
        throw Error(ErrorKind::Parse, fmt::format("{}: bad cell value '{}' at index {}", source_name,
                                                  token, values.size()));
      }
      values.push_back(*v);
    }
  }
  return finish_grid(h, std::move(values), source_name);
}

Vs30Grid Vs30Grid::parse_csv_grid(std::string_view text, const std::string& source_name) {
  const CsvTable t = parse_csv(text, source_name);
  if (t.rows.empty()) throw Error(ErrorKind::Schema, fmt::format("{}: CSV grid has no header values", source_name));
  GridHeader h;
  const auto& hv = t.rows[0];
  if (hv.size() != t.header.size()) {
    throw Error(ErrorKind::Parse, fmt::format("{}: line {}: header value count mismatch", source_name,
                                              t.line_numbers[0]));
  }
  for (std::size_t i = 0; i < t.header.size(); ++i) {
    const auto v = parse_double(hv[i]);
    if (!v) throw Error(ErrorKind::Parse, fmt::format("{}: bad header value '{}'", source_name, hv[i]));
    apply_header_key(h, t.header[i], *v);
  }
  std::vector<double> values;
  for (std::size_t r = 1; r < t.rows.size(); ++r) {
    for (const auto& cell : t.rows[r]) {
      const auto v = parse_double(cell);
      if (!v) {
        throw Error(ErrorKind::Parse, fmt::format("{}: line {}: bad cell value '{}'", source_name,
                                                  t.line_numbers[r], cell));
      }
      values.push_back(*v);
    }
  }
  return finish_grid(h, std::move(values), source_name);
}

Vs30Grid Vs30Grid::load(const fs::path& path) {
  const std::string text = read_text_file(path);
  if (to_lower(path.extension().string()) == ".csv") return parse_csv_grid(text, path.string());
  return parse_esri_ascii(text, path.string());
}

GeoPoint Vs30Grid::cell_center(std::size_t row, std::size_t col) const {
  const double lon = xll_ + (static_cast<double>(col) + 0.5) * cell_;
  const double lat = yll_ + (static_cast<double>(nrows_ - 1 - row) + 0.5) * cell_;
  return {lat, lon};
}

bool Vs30Grid::covers(const GeoPoint& p) const {
  return p.lon >= xll_ && p.lon <= xll_ + static_cast<double>(ncols_) * cell_ && p.lat >= yll_ &&
         p.lat <= yll_ + static_cast<double>(nrows_) * cell_;
}

SiteConditions Vs30Grid::lookup(const GeoPoint& p) const {
  if (!covers(p)) {
    throw Error(ErrorKind::Coverage,
                fmt::format("point ({}, {}) is outside the VS30 grid extent", p.lat, p.lon));
  }
  auto col = static_cast<std::size_t>(std::floor((p.lon - xll_) / cell_));
  auto south_row = static_cast<std::size_t>(std::floor((p.lat - yll_) / cell_));
  col = std::min(col, ncols_ - 1);
  south_row = std::min(south_row, nrows_ - 1);
  const std::size_t row = nrows_ - 1 - south_row;
  const double v = value(row, col);
  if (std::isnan(v) || v == nodata_) {
    throw Error(ErrorKind::MissingData,
                fmt::format("VS30 nodata at point ({}, {})", p.lat, p.lon));
  }
  if (v < kMinVs30 || v > kMaxVs30) {
    throw Error(ErrorKind::Value,
                fmt::format("VS30 value {} at ({}, {}) outside [{}, {}] m/s", v, p.lat, p.lon,
                            kMinVs30, kMaxVs30));
  }
  return {v};
}

SiteConditions sample_vs30(const Vs30Grid& grid, const GeoPoint& p) { return grid.lookup(p); }

// ---------------------------------------------------------------------------
// Buildings

namespace {

std::optional<std::string> nonempty(std::string_view s) {
  std::string t = trim(s);
  if (t.empty()) return std::nullopt;
  return t;
}

std::optional<double> parse_height(std::string_view s) {
  std::string t = trim(s);
  if (t.size() > 1 && t.back() == 'm') t = trim(t.substr(0, t.size() - 1));
  return parse_double(t);
}

GeoPoint ring_centroid(const Ring& ring, double& area_out) {
  double a2 = 0.0, cx = 0.0, cy = 0.0;
  for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
    const double cross = ring[i].lon * ring[i + 1].lat - ring[i + 1].lon * ring[i].lat;
    a2 += cross;
    cx += (ring[i].lon + ring[i + 1].lon) * cross;
    cy += (ring[i].lat + ring[i + 1].lat) * cross;
  }
  area_out = std::abs(a2 / 2.0);
  if (a2 == 0.0) {
    double sl = 0, sa = 0;
    for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
      sl += ring[i].lon;
      sa += ring[i].lat;
    }
    const double n = static_cast<double>(ring.size() - 1);
    return {sa / n, sl / n};
  }
  return {cy / (3.0 * a2), cx / (3.0 * a2)};
}

std::vector<BuildingRecord> parse_buildings_geojson(const std::string& text, const std::string& source) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::Parse, fmt::format("{}: {}", source, e.what()));
  }
  std::vector<BuildingRecord> out;
  const auto& features = doc.at("features");
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& f = features[i];
    const json props = f.contains("properties") && f["properties"].is_object() ? f["properties"] : json::object();
    const auto& g = f.at("geometry");
    const std::string type = g.value("type", "");
    BuildingRecord b;
    if (type == "Point") {
      const auto& c = g.at("coordinates");
      b.centroid = make_point(c.at(1).get<double>(), c.at(0).get<double>());
    } else if (type == "Polygon" || type == "MultiPolygon") {
      json wrapped = {{"type", "FeatureCollection"},
                      {"features", json::array({{{"type", "Feature"},
                                                 {"properties", {{"id", "b"}}},
                                                 {"geometry", g}}})}};
      const auto zones = parse_zones(wrapped.dump(), ZoneKind::Zip, "id", source);
      double wsum = 0, lat = 0, lon = 0;
      for (const auto& part : zones[0].parts) {
        double a = 0;
        const GeoPoint c = ring_centroid(part.outer, a);
        wsum += a;
        lat += c.lat * a;
        lon += c.lon * a;
      }
      if (wsum > 0) {
        b.centroid = {lat / wsum, lon / wsum};
      } else {
        double a = 0;
        b.centroid = ring_centroid(zones[0].parts[0].outer, a);
      }
    } else {
      throw Error(ErrorKind::Schema, fmt::format("{}: building feature {} has unsupported geometry '{}'",
                                                 source, i, type));
    }
    auto str_prop = [&](std::initializer_list<const char*> keys) -> std::optional<std::string> {
      for (const char* k : keys) {
        if (props.contains(k) && props[k].is_string()) return nonempty(props[k].get<std::string>());
      }
      return std::nullopt;
    };
    b.type = str_prop({"type", "building"});
    b.material = str_prop({"material", "building:material"});
    for (const char* k : {"height_m", "height"}) {
      if (!props.contains(k)) continue;
      if (props[k].is_number()) b.height_m = props[k].get<double>();
      else if (props[k].is_string()) b.height_m = parse_height(props[k].get<std::string>());
      if (b.height_m) break;
    }
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace

std::vector<BuildingRecord> load_buildings(const fs::path& path) {
  const std::string ext = to_lower(path.extension().string());
  const std::string text = read_text_file(path);
  if (ext == ".geojson" || ext == ".json") return parse_buildings_geojson(text, path.string());

  const CsvTable t = parse_csv(text, path.string());
  const auto lat = t.column("lat");
  const auto lon = t.column("lon");
  if (!lat || !lon) {
    throw Error(ErrorKind::Schema, fmt::format("{}: buildings CSV needs lat and lon columns", path.string()));
  }
  const auto type = t.column("type");
  const auto height = t.column("height_m");
  const auto material = t.column("material");
  std::vector<BuildingRecord> out;
  out.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    auto field = [&](std::optional<std::size_t> c) -> std::string_view {
      return c && *c < row.size() ? std::string_view(row[*c]) : std::string_view{};
    };
    const auto la = parse_double(field(lat));
    const auto lo = parse_double(field(lon));
    if (!la || !lo) {
      throw Error(ErrorKind::Parse, fmt::format("{}: line {}: bad building coordinates", path.string(),
                                                t.line_numbers[r]));
    }
    BuildingRecord b;
    b.centroid = make_point(*la, *lo);
    b.type = nonempty(field(type));
    b.material = nonempty(field(material));
    if (const auto h = nonempty(field(height))) {
      b.height_m = parse_height(*h);
      if (!b.height_m) {
        throw Error(ErrorKind::Parse, fmt::format("{}: line {}: bad height '{}'", path.string(),
                                                  t.line_numbers[r], *h));
      }
    }
    out.push_back(std::move(b));
  }
  return out;
}

namespace {

BuildingSummary aggregate_buildings(const std::vector<const BuildingRecord*>& members, double radius_m) {
  BuildingSummary s;
  s.radius_m = radius_m;
  s.count = members.size();
  std::vector<double> heights;
  std::map<std::string, std::size_t> materials;
  std::size_t material_tagged = 0;
  for (const auto* b : members) {
    ++s.type_distribution[b->type ? *b->type : std::string(kUnspecifiedType)];
    if (b->height_m) heights.push_back(*b->height_m);
    if (b->material) {
      ++materials[*b->material];
      ++material_tagged;
    }
  }
  if (!heights.empty()) {
    // Sorted before summing so the average does not depend on input order.
    std::sort(heights.begin(), heights.end());
    double sum = 0.0;
    for (double h : heights) sum += h;
    s.height_min = heights.front();
    s.height_max = heights.back();
    s.height_avg = sum / static_cast<double>(heights.size());
  }
  for (const auto& [m, n] : materials) {
    s.material_prevalence[m] = static_cast<double>(n) / static_cast<double>(material_tagged);
  }
  return s;
}

}  // namespace

BuildingSummary summarize_buildings(std::span<const BuildingRecord> buildings, const GeoPoint& p,
                                    double radius_m) {
  std::vector<const BuildingRecord*> members;
  for (const auto& b : buildings) {
    if (haversine_km(b.centroid, p) * 1000.0 <= radius_m) members.push_back(&b);
  }
  return aggregate_buildings(members, radius_m);
}

BuildingIndex::BuildingIndex(std::vector<BuildingRecord> buildings, double bucket_deg)
    : buildings_(std::move(buildings)), bucket_(bucket_deg) {
  for (std::size_t i = 0; i < buildings_.size(); ++i) {
    const auto& c = buildings_[i].centroid;
    buckets_[{static_cast<long>(std::floor(c.lat / bucket_)), static_cast<long>(std::floor(c.lon / bucket_))}]
        .push_back(i);
  }
}

BuildingSummary BuildingIndex::summarize(const GeoPoint& p, double radius_m) const {
  constexpr double rad = std::numbers::pi / 180.0;
  const double dlat = radius_m / 1000.0 / (kEarthRadiusKm * rad) * 1.01 + 1e-9;
  const double lat_extent = std::abs(p.lat) + dlat;
  const double coslat = lat_extent < 89.0 ? std::cos(lat_extent * rad) : 0.0;
  if (coslat < 0.01 || std::abs(p.lon) + dlat / std::max(coslat, 0.01) >= 180.0) {
    return summarize_buildings(buildings_, p, radius_m);
  }
  const double dlon = dlat / coslat;
  const long r0 = static_cast<long>(std::floor((p.lat - dlat) / bucket_));
  const long r1 = static_cast<long>(std::floor((p.lat + dlat) / bucket_));
  const long c0 = static_cast<long>(std::floor((p.lon - dlon) / bucket_));
  const long c1 = static_cast<long>(std::floor((p.lon + dlon) / bucket_));
  std::vector<const BuildingRecord*> members;
  for (long r = r0; r <= r1; ++r) {
    for (long c = c0; c <= c1; ++c) {
      const auto it = buckets_.find({r, c});
      if (it == buckets_.end()) continue;
      for (std::size_t i : it->second) {
        if (haversine_km(buildings_[i].centroid, p) * 1000.0 <= radius_m) members.push_back(&buildings_[i]);
      }
    }
  }
  return aggregate_buildings(members, radius_m);
}

// ---------------------------------------------------------------------------
// ACS / block groups

namespace {

constexpr std::array<const char*, 6> kAcsColumns = {"population",    "population_density",
                                                    "urban_pct",     "over65_pct",
                                                    "median_income", "bachelor_pct"};

std::optional<double>& acs_field(AcsRow& row, std::size_t i) {
  switch (i) {
    case 0: return row.population;
    case 1: return row.population_density;
    case 2: return row.urban_pct;
    case 3: return row.over65_pct;
    case 4: return row.median_income;
    default: return row.bachelor_pct;
  }
}

bool is_percentage_column(std::size_t i) { return i == 2 || i == 3 || i == 5; }

struct JoinResult {
  std::optional<Socioeconomics> value;
  std::string reason;
  std::string detail;
};

JoinResult join_detail(const GeoPoint& p, const std::optional<std::string>& geoid, const AcsTable& acs) {
  if (!geoid) {
    return {std::nullopt, "cbg_no_match",
            fmt::format("no block group contains ({}, {})", p.lat, p.lon)};
  }
  const auto it = acs.find(*geoid);
  if (it == acs.end()) {
    return {std::nullopt, "acs_missing_row", fmt::format("GEOID {} has no ACS row", *geoid)};
  }
  AcsRow row = it->second;
  for (std::size_t i = 0; i < kAcsColumns.size(); ++i) {
    if (!acs_field(row, i)) {
      return {std::nullopt, "acs_missing_value",
              fmt::format("GEOID {} has no value for {}", *geoid, kAcsColumns[i])};
    }
  }
  return {Socioeconomics{*row.population, *row.population_density, *row.urban_pct, *row.over65_pct,
                         *row.median_income, *row.bachelor_pct},
          {}, {}};
}

Socioeconomics unwrap_join(JoinResult r) {
  if (r.value) return *r.value;
  throw Error(r.reason == "cbg_no_match" ? ErrorKind::Join : ErrorKind::MissingData, r.detail);
}

}  // namespace

AcsTable load_acs(const fs::path& path) {
  const CsvTable t = read_csv(path);
  const auto id = t.column("GEOID");
  if (!id) throw Error(ErrorKind::Schema, fmt::format("{}: ACS table needs a GEOID column", path.string()));
  std::array<std::size_t, 6> cols{};
  for (std::size_t i = 0; i < kAcsColumns.size(); ++i) {
    const auto c = t.column(kAcsColumns[i]);
    if (!c) {
      throw Error(ErrorKind::Schema,
                  fmt::format("{}: ACS table is missing column '{}'", path.string(), kAcsColumns[i]));
    }
    cols[i] = *c;
  }
  AcsTable table;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& fields = t.rows[r];
    const std::size_t line = t.line_numbers[r];
    if (fields.size() < t.header.size()) {
      throw Error(ErrorKind::Parse, fmt::format("{}: line {}: too few fields", path.string(), line));
    }
    AcsRow row;
    for (std::size_t i = 0; i < cols.size(); ++i) {
      const std::string cell = trim(fields[cols[i]]);
      if (cell.empty()) continue;
      const auto v = parse_double(cell);
      if (!v || !std::isfinite(*v)) {
        throw Error(ErrorKind::Parse, fmt::format("{}: line {}: bad {} value '{}'", path.string(), line,
                                                  kAcsColumns[i], cell));
      }
      if (*v < 0.0 || (is_percentage_column(i) && *v > 100.0)) {
        throw Error(ErrorKind::Value, fmt::format("{}: line {}: {} value {} out of range", path.string(),
                                                  line, kAcsColumns[i], *v));
      }
      acs_field(row, i) = *v;
    }
    const std::string geoid = trim(fields[*id]);
    if (!table.emplace(geoid, row).second) {
      throw Error(ErrorKind::Conflict,
                  fmt::format("{}: line {}: duplicate GEOID '{}'", path.string(), line, geoid));
    }
  }
  return table;
}

CbgIndex::CbgIndex(std::vector<ZonePolygon> zones) : zones_(std::move(zones)) {
  std::sort(zones_.begin(), zones_.end(),
            [](const ZonePolygon& a, const ZonePolygon& b) { return a.zone_id < b.zone_id; });
}

std::optional<std::string> CbgIndex::locate(const GeoPoint& p) const {
  for (const auto& z : zones_) {
    if (point_in_polygon(p, z)) return z.zone_id;
  }
  return std::nullopt;
}

Socioeconomics join_cbg(const GeoPoint& p, std::span<const ZonePolygon> cbg_zones, const AcsTable& acs) {
  std::optional<std::string> best;
  for (const auto& z : cbg_zones) {
    if (point_in_polygon(p, z) && (!best || z.zone_id < *best)) best = z.zone_id;
  }
  return unwrap_join(join_detail(p, best, acs));
}

Socioeconomics join_cbg(const GeoPoint& p, const CbgIndex& index, const AcsTable& acs) {
  return unwrap_join(join_detail(p, index.locate(p), acs));
}

// ---------------------------------------------------------------------------
// Street images

bool looks_like_image(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) return true;
  static constexpr std::uint8_t png[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  return bytes.size() >= 8 && std::equal(png, png + 8, bytes.begin());
}

namespace {

bool file_looks_like_image(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  std::uint8_t head[8] = {};
  in.read(reinterpret_cast<char*>(head), sizeof head);
  return looks_like_image(std::span<const std::uint8_t>(head, static_cast<std::size_t>(in.gcount())));
}

}  // namespace

LocalImageProvider::LocalImageProvider(fs::path dir) : dir_(std::move(dir)) {}

StreetImage LocalImageProvider::fetch(const std::string& sample_id, const GeoPoint&) {
  const fs::path path = dir_ / (sample_id + ".jpg");
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) return {ImageStatus::Missing, {}, std::nullopt};
  if (!file_looks_like_image(path)) return {ImageStatus::Missing, {}, std::nullopt};
  return {ImageStatus::Available, path.string(), std::nullopt};
}

HttpImageProvider::HttpImageProvider(std::string url_template, std::string api_key_env,
                                     fs::path store_dir, int max_attempts, int base_backoff_ms)
    : url_template_(std::move(url_template)), api_key_env_(std::move(api_key_env)),
      store_dir_(std::move(store_dir)), max_attempts_(std::max(1, max_attempts)),
      base_backoff_ms_(base_backoff_ms) {}

StreetImage HttpImageProvider::fetch(const std::string& sample_id, const GeoPoint& p) {
  const fs::path stored = store_dir_ / (sample_id + ".jpg");
  if (fs::is_regular_file(stored) && file_looks_like_image(stored)) {
    return {ImageStatus::Available, stored.string(), std::nullopt};
  }
  std::string key;
  if (!api_key_env_.empty()) {
    const char* k = std::getenv(api_key_env_.c_str());
    if (!k) throw Error(ErrorKind::Config, fmt::format("environment variable {} is not set", api_key_env_));
    key = k;
  }
  std::string url = url_template_;
  auto replace = [&url](std::string_view ph, const std::string& v) {
    for (auto pos = url.find(ph); pos != std::string::npos; pos = url.find(ph, pos + v.size())) {
      url.replace(pos, ph.size(), v);
    }
  };
  replace("{lat}", fmt::format("{}", p.lat));
  replace("{lon}", fmt::format("{}", p.lon));
  replace("{key}", key);
  const UrlParts parts = split_url(url);

  std::string last_error;
  for (int attempt = 1; attempt <= max_attempts_; ++attempt) {
    httplib::Client cli(parts.origin);
    cli.set_connection_timeout(10);
    cli.set_read_timeout(30);
    const auto res = cli.Get(parts.target);
    if (res) {
      if (res->status == 404) return {ImageStatus::Missing, {}, std::nullopt};
      if (res->status == 200) {
        const std::span<const std::uint8_t> bytes(reinterpret_cast<const std::uint8_t*>(res->body.data()),
                                                  res->body.size());
        if (!looks_like_image(bytes)) return {ImageStatus::Missing, {}, std::nullopt};
        atomic_write(stored, res->body);
        return {ImageStatus::Available, stored.string(), std::nullopt};
      }
      last_error = fmt::format("HTTP {}", res->status);
      if (res->status != 429 && res->status < 500) break;
    } else {
      last_error = httplib::to_string(res.error());
    }
    if (attempt < max_attempts_) {
      std::this_thread::sleep_for(std::chrono::milliseconds(base_backoff_ms_ << (attempt - 1)));
    }
  }
  throw Error(ErrorKind::Transport, fmt::format("image fetch for {} failed: {}", sample_id, last_error));
}

StreetImage fetch_street_image(const std::string& sample_id, const GeoPoint& p, ImageProvider& provider) {
  return provider.fetch(sample_id, p);
}

// ---------------------------------------------------------------------------
// Assembly

void validate(const SampleFeatures& x) {
  auto fail = [&](const std::string& what) {
    throw Error(ErrorKind::Value, fmt::format("sample {}: {}", x.sample_id, what));
  };
  if (x.sample_id.empty() || x.zone_id.empty()) fail("empty sample or zone id");
  const auto& e = x.earthquake;
  if (!is_valid(e.epicenter)) fail("invalid epicenter");
  if (!std::isfinite(e.magnitude) || e.magnitude < 0.0 || e.magnitude > 10.0) fail("magnitude out of range");
  if (!std::isfinite(e.depth_km) || e.depth_km < 0.0) fail("negative depth");
  if (!(x.site.vs30 >= kMinVs30 && x.site.vs30 <= kMaxVs30)) fail("vs30 out of range");
  const auto& l = x.location;
  if (!is_valid(l.coords)) fail("invalid coordinates");
  if (std::abs(l.epicentral_distance_km - haversine_km(l.coords, e.epicenter)) > 1e-6) {
    fail("epicentral distance does not match coordinates");
  }
  const auto& b = x.buildings;
  std::size_t total = 0;
  for (const auto& [t, n] : b.type_distribution) total += n;
  if (total != b.count) fail("building type histogram does not sum to count");
  for (const auto& [m, f] : b.material_prevalence) {
    if (!(f >= 0.0 && f <= 1.0)) fail(fmt::format("material fraction for {} outside [0,1]", m));
  }
  if (b.height_min && b.height_max && *b.height_min > *b.height_max) fail("height range inverted");
  const auto& s = x.socioeconomics;
  for (double pct : {s.urban_pct, s.over65_pct, s.bachelor_pct}) {
    if (!(pct >= 0.0 && pct <= 100.0)) fail("percentage outside [0,100]");
  }
  if (!(s.population_density >= 0.0)) fail("negative population density");
  if (x.image.status == ImageStatus::Available && !file_looks_like_image(x.image.image_ref)) {
    fail(fmt::format("image {} is not decodable", x.image.image_ref));
  }
}

FusionOutcome assemble_features(const SampledPoint& point, const ZonePolygon& zone,
                                const FusionSources& src) {
  auto reject = [&](std::string reason, std::string detail) -> FusionOutcome {
    return Rejection{point.sample_id, point.zone_id, std::move(reason), std::move(detail)};
  };

  SampleFeatures x;
  x.sample_id = point.sample_id;
  x.zone_id = point.zone_id;
  x.earthquake = src.earthquake;

  try {
    x.site = src.vs30->lookup(point.point);
  } catch (const Error& e) {
    switch (e.kind()) {
      case ErrorKind::Coverage: return reject("vs30_coverage", e.what());
      case ErrorKind::MissingData: return reject("vs30_nodata", e.what());
      default: return reject("vs30_out_of_range", e.what());
    }
  }

  auto attr = [&](const std::string& key) {
    const auto it = zone.attributes.find(key);
    return it == zone.attributes.end() ? std::string{} : it->second;
  };
  x.location.state = attr(src.fields.state_property);
  x.location.city = attr(src.fields.city_property);
  x.location.zipcode = zone.zone_id;
  x.location.county = attr(src.fields.county_property);
  if (src.zip_county) {
    const auto it = src.zip_county->find(zone.zone_id);
    if (it != src.zip_county->end()) x.location.county = it->second.county_name;
  }
  x.location.coords = point.point;
  x.location.epicentral_distance_km = haversine_km(point.point, src.earthquake.epicenter);

  x.buildings = src.buildings->summarize(point.point, src.building_radius_m);

  const JoinResult joined = join_detail(point.point, src.cbg->locate(point.point), *src.acs);
  if (!joined.value) return reject(joined.reason, joined.detail);
  x.socioeconomics = *joined.value;

  try {
    x.image = src.images->fetch(point.sample_id, point.point);
  } catch (const Error& e) {
    return reject("image_transport_error", e.what());
  }

  try {
    validate(x);
  } catch (const Error& e) {
    return reject("invariant_violation", e.what());
  }
  return x;
}

// ---------------------------------------------------------------------------
// JSON

void to_json(json& j, const EarthquakeParams& e) {
  j = {{"event_id", e.event_id},   {"place", e.place},       {"lat", e.epicenter.lat},
       {"lon", e.epicenter.lon},   {"magnitude", e.magnitude}, {"depth_km", e.depth_km},
       {"event_date", e.event_date}};
}

void from_json(const json& j, EarthquakeParams& e) {
  e.event_id = j.at("event_id").get<std::string>();
  e.place = j.at("place").get<std::string>();
  e.epicenter = make_point(j.at("lat").get<double>(), j.at("lon").get<double>());
  e.magnitude = j.at("magnitude").get<double>();
  e.depth_km = j.at("depth_km").get<double>();
  e.event_date = j.at("event_date").get<std::string>();
}

void to_json(json& j, const SampleFeatures& x) {
  json b = {{"radius_m", x.buildings.radius_m},
            {"count", x.buildings.count},
            {"type_distribution", x.buildings.type_distribution},
            {"material_prevalence", x.buildings.material_prevalence}};
  if (x.buildings.height_min) b["height_min"] = *x.buildings.height_min;
  if (x.buildings.height_max) b["height_max"] = *x.buildings.height_max;
  if (x.buildings.height_avg) b["height_avg"] = *x.buildings.height_avg;
  json img = {{"status", x.image.status == ImageStatus::Available ? "available" : "missing"},
              {"image_ref", x.image.image_ref}};
  if (x.image.heading) img["heading"] = *x.image.heading;
  const auto& s = x.socioeconomics;
  j = {{"sample_id", x.sample_id},
       {"zone_id", x.zone_id},
       {"earthquake", x.earthquake},
       {"site", {{"vs30", x.site.vs30}}},
       {"location",
        {{"state", x.location.state},
         {"city", x.location.city},
         {"zipcode", x.location.zipcode},
         {"county", x.location.county},
         {"lat", x.location.coords.lat},
         {"lon", x.location.coords.lon},
         {"epicentral_distance_km", x.location.epicentral_distance_km}}},
       {"buildings", b},
       {"socioeconomics",
        {{"population", s.population},
         {"population_density", s.population_density},
         {"urban_pct", s.urban_pct},
         {"over65_pct", s.over65_pct},
         {"median_income", s.median_income},
         {"bachelor_pct", s.bachelor_pct}}},
       {"image", img}};
}

void from_json(const json& j, SampleFeatures& x) {
  x.sample_id = j.at("sample_id").get<std::string>();
  x.zone_id = j.at("zone_id").get<std::string>();
  x.earthquake = j.at("earthquake").get<EarthquakeParams>();
  x.site.vs30 = j.at("site").at("vs30").get<double>();
  const auto& l = j.at("location");
  x.location.state = l.at("state").get<std::string>();
  x.location.city = l.at("city").get<std::string>();
  x.location.zipcode = l.at("zipcode").get<std::string>();
  x.location.county = l.at("county").get<std::string>();
  x.location.coords = make_point(l.at("lat").get<double>(), l.at("lon").get<double>());
  x.location.epicentral_distance_km = l.at("epicentral_distance_km").get<double>();
  const auto& b = j.at("buildings");
  x.buildings.radius_m = b.value("radius_m", 100.0);
  x.buildings.count = b.at("count").get<std::size_t>();
  x.buildings.type_distribution = b.at("type_distribution").get<std::map<std::string, std::size_t>>();
  x.buildings.material_prevalence = b.at("material_prevalence").get<std::map<std::string, double>>();
  x.buildings.height_min.reset();
  x.buildings.height_max.reset();
  x.buildings.height_avg.reset();
  if (b.contains("height_min")) x.buildings.height_min = b["height_min"].get<double>();
  if (b.contains("height_max")) x.buildings.height_max = b["height_max"].get<double>();
  if (b.contains("height_avg")) x.buildings.height_avg = b["height_avg"].get<double>();
  const auto& s = j.at("socioeconomics");
  x.socioeconomics = {s.at("population").get<double>(),    s.at("population_density").get<double>(),
                      s.at("urban_pct").get<double>(),     s.at("over65_pct").get<double>(),
                      s.at("median_income").get<double>(), s.at("bachelor_pct").get<double>()};
  const auto& img = j.at("image");
  x.image.status = img.at("status").get<std::string>() == "available" ? ImageStatus::Available
                                                                     : ImageStatus::Missing;
  x.image.image_ref = img.value("image_ref", "");
  x.image.heading.reset();
  if (img.contains("heading")) x.image.heading = img["heading"].get<double>();
}

void to_json(json& j, const Rejection& r) {
  j = {{"sample_id", r.sample_id}, {"zone_id", r.zone_id}, {"reason", r.reason}, {"detail", r.detail}};
}

void from_json(const json& j, Rejection& r) {
  r.sample_id = j.at("sample_id").get<std::string>();
  r.zone_id = j.at("zone_id").get<std::string>();
  r.reason = j.at("reason").get<std::string>();
  r.detail = j.value("detail", "");
}

namespace {

template <typename T>
std::vector<T> load_jsonl(const fs::path& path) {
  std::vector<T> out;
  std::size_t n = 0;
  for (const auto& line : read_lines(path)) {
    ++n;
    try {
      out.push_back(json::parse(line).get<T>());
    } catch (const json::exception& e) {
      throw Error(ErrorKind::Parse, fmt::format("{}: record {}: {}", path.string(), n, e.what()));
    }
  }
  return out;
}

}  // namespace

std::vector<SampleFeatures> load_features_jsonl(const fs::path& path) {
  return load_jsonl<SampleFeatures>(path);
}

std::vector<Rejection> load_rejections_jsonl(const fs::path& path) { return load_jsonl<Rejection>(path); }

}  // namespace quakesense

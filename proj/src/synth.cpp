#include "quakesense/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>

#include <fmt/format.h>

#include "quakesense/error.hpp"
#include "quakesense/fusion.hpp"
#include "quakesense/geo.hpp"
#include "quakesense/io.hpp"
#include "quakesense/llm_client.hpp"
#include "quakesense/mmi.hpp"

namespace quakesense {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::uint8_t kJpeg[] = {
#include "placeholder_jpeg.inc"
};

constexpr double kKmPerDegLat = 111.195;
constexpr double kHalfSideDeg = 0.01;
constexpr double kMaxDistanceKm = 340.0;
constexpr double kMagnitude = 7.1;

// Streams of the scenario generator; distinct from the sampler's zone streams
// only by convention, the seeds differ anyway.
enum Stream : std::uint64_t { kVs30 = 1, kBuildings, kAcs, kImages, kDyfi, kBank };

constexpr std::array<const char*, 10> kTowns = {"Inyokern", "Johannesburg", "Randsburg", "California City",
                                                "Mojave",   "Lancaster",    "Palmdale",  "San Bernardino",
                                                "Temecula", "Escondido"};

struct Zone {
  std::string id;
  std::string city;
  std::string county;
  std::string county_name;
  double distance_km;
  double lat, lon;  // centre
  bool multi;
};

json ring(double s, double w, double n, double e) {
  return json::array({json::array({w, s}), json::array({e, s}), json::array({e, n}), json::array({w, n}),
                      json::array({w, s})});
}

double normal(CounterRng& rng) {
  const double u1 = std::max(rng.next_unit(), 1e-300);
  const double u2 = rng.next_unit();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

double round_to(double v, double step) { return std::round(v / step) * step; }

std::vector<Zone> layout(std::size_t n) {
  std::vector<Zone> zones;
  for (std::size_t i = 0; i < n; ++i) {
    Zone z;
    z.distance_km = n == 1 ? 5.0 : 5.0 + static_cast<double>(i) * (kMaxDistanceKm - 5.0) / static_cast<double>(n - 1);
    z.lat = kScenarioEpicenterLat - z.distance_km / kKmPerDegLat;
    z.lon = kScenarioEpicenterLon;
    z.multi = n > 2 && i == 2;
    if (i == 0) {
      z.id = "93555";
      z.city = "Ridgecrest";
    } else if (i + 1 == n) {
      z.id = "92104";
      z.city = "San Diego";
    } else {
      z.id = fmt::format("93{:03}", i * 10);
      z.city = i - 1 < kTowns.size() ? kTowns[i - 1] : fmt::format("Town {}", i);
    }
    const std::size_t third = i * 3 / n;
    static constexpr std::array<std::pair<const char*, const char*>, 3> kCounties = {
        {{"06029", "Kern"}, {"06071", "San Bernardino"}, {"06073", "San Diego"}}};
    z.county = kCounties[third].first;
    z.county_name = kCounties[third].second;
    zones.push_back(std::move(z));
  }
  return zones;
}

json zone_geometry(const Zone& z) {
  const double s = z.lat - kHalfSideDeg, n = z.lat + kHalfSideDeg;
  const double w = z.lon - kHalfSideDeg, e = z.lon + kHalfSideDeg;
  if (!z.multi) return {{"type", "Polygon"}, {"coordinates", json::array({ring(s, w, n, e)})}};
  // Two strips with a gap between them.
  const double gap = kHalfSideDeg / 5.0;
  return {{"type", "MultiPolygon"},
          {"coordinates", json::array({json::array({ring(s, w, z.lat - gap, e)}),
                                       json::array({ring(z.lat + gap, w, n, e)})})}};
}

std::string cbg_id(const Zone& z, std::size_t zone_index, int half) {
  return fmt::format("{}{:06}{}", z.county, zone_index + 1, half);
}

std::string write_esri_grid(const std::vector<Zone>& zones, const ScenarioOptions& o) {
  const double cell = 0.005;
  const double south = std::floor((zones.back().lat - 0.05) / cell) * cell;
  const double north = zones.front().lat + 0.05;
  const double west = kScenarioEpicenterLon - 0.1;
  const auto nrows = static_cast<std::size_t>(std::ceil((north - south) / cell));
  const std::size_t ncols = static_cast<std::size_t>(std::round(0.2 / cell));
  std::string out = fmt::format("ncols {}\nnrows {}\nxllcorner {}\nyllcorner {}\ncellsize {}\nNODATA_value -9999\n",
                                ncols, nrows, west, south, cell);
  CounterRng rng(o.seed, kVs30);
  const Zone* patch = zones.size() > 1 && o.vs30_nodata_patch ? &zones[1] : nullptr;
  for (std::size_t r = 0; r < nrows; ++r) {
    const double lat = south + (static_cast<double>(nrows - r) - 0.5) * cell;
    for (std::size_t c = 0; c < ncols; ++c) {
      const double lon = west + (static_cast<double>(c) + 0.5) * cell;
      double v = std::round(200.0 + 500.0 * rng.next_unit());
      if (patch && lat > patch->lat && lat < patch->lat + kHalfSideDeg + cell && lon > patch->lon - 2 * cell &&
          lon < patch->lon + kHalfSideDeg + cell) {
        v = -9999;
      }
      if (c > 0) out += ' ';
      out += fmt::format("{}", v);
    }
    out += '\n';
  }
  return out;
}

std::string buildings_csv(const std::vector<Zone>& zones, std::uint64_t seed) {
  static constexpr std::array<const char*, 5> kTypes = {"residential", "commercial", "school", "general", ""};
  static constexpr std::array<const char*, 5> kMaterials = {"wood", "concrete", "brick", "steel", ""};
  CounterRng rng(seed, kBuildings);
  std::string out = "lat,lon,type,height_m,material\n";
  for (const auto& z : zones) {
    for (int b = 0; b < 300; ++b) {
      const double lat = z.lat - kHalfSideDeg + 2 * kHalfSideDeg * rng.next_unit();
      const double lon = z.lon - kHalfSideDeg + 2 * kHalfSideDeg * rng.next_unit();
      const char* type = kTypes[static_cast<std::size_t>(rng.next_unit() * kTypes.size())];
      const char* material = kMaterials[static_cast<std::size_t>(rng.next_unit() * kMaterials.size())];
      const double h = rng.next_unit();
      const std::string height = h < 0.2 ? "" : fmt::format("{:.1f}", 3.0 + 30.0 * h);
      out += fmt::format("{:.6f},{:.6f},{},{},{}\n", lat, lon, type, height, material);
    }
  }
  return out;
}

SampleFeatures bank_sample(std::size_t i, CounterRng& rng) {
  SampleFeatures x;
  x.sample_id = fmt::format("napa-{:03}", i + 1);
  x.zone_id = fmt::format("945{:02}", i % 60);
  x.earthquake = {"nc72282711", "6km NW of American Canyon, CA", make_point(38.2151, -122.3123), 6.0, 11.1,
                  "2014-08-24"};
  const double d = 3.0 + 120.0 * rng.next_unit();
  const double bearing = 2.0 * M_PI * rng.next_unit();
  const double lat = 38.2151 + d / kKmPerDegLat * std::cos(bearing);
  const double lon = -122.3123 + d / (kKmPerDegLat * std::cos(38.2151 * M_PI / 180.0)) * std::sin(bearing);
  x.site.vs30 = std::round(200.0 + 500.0 * rng.next_unit());
  x.location = {"California", i % 3 == 0 ? "Napa" : (i % 3 == 1 ? "Vallejo" : "Sonoma"), x.zone_id,
                "Napa", make_point(lat, lon), 0.0};
  x.location.epicentral_distance_km = haversine_km(x.location.coords, x.earthquake.epicenter);
  x.buildings.radius_m = 100.0;
  x.buildings.count = static_cast<std::size_t>(rng.next_unit() * 6);
  if (x.buildings.count > 0) {
    x.buildings.type_distribution["residential"] = x.buildings.count;
    x.buildings.height_min = 4.0;
    x.buildings.height_max = 9.0;
    x.buildings.height_avg = 6.5;
    x.buildings.material_prevalence["wood"] = 1.0;
  }
  x.socioeconomics = {2000.0, round_to(100.0 + 3000.0 * rng.next_unit(), 0.01), 80.0, 15.0, 90000.0, 35.0};
  x.image.status = ImageStatus::Missing;
  return x;
}

}  // namespace

ScenarioInfo write_scenario(const fs::path& dir, const ScenarioOptions& o) {
  if (o.zones == 0 || o.zones > 50) throw Error(ErrorKind::Value, "scenario: zones must be in [1, 50]");
  if (o.points_per_zone == 0) throw Error(ErrorKind::Value, "scenario: points_per_zone must be positive");
  fs::create_directories(dir / "images");
  const auto zones = layout(o.zones);
  ScenarioInfo info;

  const json event = {{"id", "ci38457511"},
                      {"place", "Ridgecrest, California"},
                      {"lat", kScenarioEpicenterLat},
                      {"lon", kScenarioEpicenterLon},
                      {"mag", kMagnitude},
                      {"depth", 8.0},
                      {"date", "2019-07-06"}};
  atomic_write(dir / "event.json", event.dump(2) + "\n");

  json zfc = {{"type", "FeatureCollection"}, {"features", json::array()}};
  json cbg = {{"type", "FeatureCollection"}, {"features", json::array()}};
  std::string acs = "GEOID,population,population_density,urban_pct,over65_pct,median_income,bachelor_pct\n";
  std::string zip_county = "zip,county,county_name\n";
  CounterRng acs_rng(o.seed, kAcs);
  for (std::size_t i = 0; i < zones.size(); ++i) {
    const Zone& z = zones[i];
    info.zone_ids.push_back(z.id);
    info.zone_distance_km.push_back(z.distance_km);
    zfc["features"].push_back({{"type", "Feature"},
                               {"properties",
                                {{"ZCTA5CE10", z.id},
                                 {"city", z.city},
                                 {"state", "California"},
                                 {"county", z.county_name}}},
                               {"geometry", zone_geometry(z)}});
    for (int half = 1; half <= 2; ++half) {
      const double w = half == 1 ? z.lon - kHalfSideDeg : z.lon;
      const double e = half == 1 ? z.lon : z.lon + kHalfSideDeg;
      const std::string id = cbg_id(z, i, half);
      cbg["features"].push_back(
          {{"type", "Feature"},
           {"properties", {{"GEOID", id}}},
           {"geometry",
            {{"type", "Polygon"},
             {"coordinates", json::array({ring(z.lat - kHalfSideDeg, w, z.lat + kHalfSideDeg, e)})}}}});
      const double pop = std::round(500.0 + 2500.0 * acs_rng.next_unit());
      acs += fmt::format("{},{},{:.2f},{:.2f},{:.2f},{},{:.2f}\n", id, pop, 20.0 + 5000.0 * acs_rng.next_unit(),
                         100.0 * acs_rng.next_unit(), 5.0 + 25.0 * acs_rng.next_unit(),
                         std::round(30000.0 + 120000.0 * acs_rng.next_unit()), 10.0 + 50.0 * acs_rng.next_unit());
    }
    zip_county += fmt::format("{},{},{}\n", z.id, z.county, z.county_name);
  }
  zip_county += "93999,06029,Kern\n";
  atomic_write(dir / "zones.geojson", zfc.dump() + "\n");
  atomic_write(dir / "cbg.geojson", cbg.dump() + "\n");
  atomic_write(dir / "acs.csv", acs);
  atomic_write(dir / "zip_county.csv", zip_county);
  atomic_write(dir / "vs30.asc", write_esri_grid(zones, o));
  atomic_write(dir / "buildings.csv", buildings_csv(zones, o.seed));

  // Images for exactly the points the sampler will draw.
  SamplePlan plan;
  plan.points_per_zone = o.points_per_zone;
  plan.seed = o.seed;
  const auto parsed = parse_zones(zfc.dump(), ZoneKind::Zip, "ZCTA5CE10", "zones.geojson");
  CounterRng img_rng(o.seed, kImages);
  for (const auto& e : fs::directory_iterator(dir / "images")) fs::remove(e.path());
  const std::string jpeg(reinterpret_cast<const char*>(kJpeg), sizeof kJpeg);
  for (const auto& p : sample_zones(parsed, plan)) {
    if (img_rng.next_unit() < o.missing_image_rate) {
      info.missing_images.push_back(p.sample_id);
      continue;
    }
    atomic_write(dir / "images" / (p.sample_id + ".jpg"), jpeg);
  }

  // Ground truth follows the same attenuation shape as the mock, plus noise.
  CounterRng dyfi_rng(o.seed, kDyfi);
  std::string dyfi = "zone_id,cdi,nresp\n";
  for (std::size_t i = 0; i < zones.size(); ++i) {
    const double noise = 0.4 * normal(dyfi_rng);
    const auto nresp = 5 + static_cast<int>(195 * dyfi_rng.next_unit());
    if (o.dyfi_gap && i + 1 == zones.size()) continue;
    const double raw = 1.5 * kMagnitude - 3.0 * std::log10(zones[i].distance_km + 10.0) + 3.0 + noise;
    dyfi += fmt::format("{},{:.1f},{}\n", zones[i].id, std::clamp(raw, 1.0, 12.0), nresp);
  }
  dyfi += "93999,3.1,4\n";
  atomic_write(dir / "dyfi_zip.csv", dyfi);

  if (o.demonstration_bank) {
    CounterRng bank_rng(o.seed, kBank);
    std::string bank;
    for (std::size_t i = 0; i < 40; ++i) {
      SampleFeatures x = bank_sample(i, bank_rng);
      const int level = std::clamp(
          mock_attenuation_level(x.earthquake.magnitude, x.location.epicentral_distance_km) +
              static_cast<int>(std::lround(0.6 * normal(bank_rng))),
          1, 12);
      bank += json({{"features", x}, {"mmi", MmiLevel::from_value(level).roman()}}).dump() + "\n";
    }
    atomic_write(dir / "bank.jsonl", bank);
  }

  json model = json::object();
  if (!o.model_endpoint.empty()) {
    model["endpoint"] = o.model_endpoint;
    model["model_id"] = o.model_id.empty() ? "live" : o.model_id;
    model["api_key_env"] = o.api_key_env;
  } else if (o.garbage_rate > 0.0) {
    model["endpoint"] = fmt::format("mock://attenuation?garbage={}", o.garbage_rate);
  }
  json cfg = {{"event", "event.json"},
              {"zones", {{"path", "zones.geojson"}, {"kind", "zip"}}},
              {"sample_plan", {{"points_per_zone", o.points_per_zone}, {"seed", o.seed}}},
              {"data_sources",
               {{"vs30", "vs30.asc"},
                {"buildings", "buildings.csv"},
                {"cbg", "cbg.geojson"},
                {"acs", "acs.csv"},
                {"images", "images"},
                {"dyfi", "dyfi_zip.csv"},
                {"zip_county", "zip_county.csv"}}},
              {"model", model},
              {"output_dir", "out"}};
  if (o.demonstration_bank) cfg["demonstration_bank"] = "bank.jsonl";
  info.config = dir / "config.json";
  atomic_write(info.config, cfg.dump(2) + "\n");
  return info;
}

}  // namespace quakesense

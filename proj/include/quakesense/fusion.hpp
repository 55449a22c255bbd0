#pragma once

// Assembly of the per-sample feature bundle: earthquake parameters, site
// conditions, location metadata, nearby buildings, block-group
// socioeconomics and an optional street-level image.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "quakesense/geo.hpp"

namespace quakesense {

struct EarthquakeParams {
  std::string event_id;
  std::string place;
  GeoPoint epicenter;
  double magnitude = 0.0;
  double depth_km = 0.0;
  std::string event_date;  // ISO-8601 date
};

// Accepts either a flat object {id, place, lat, lon, mag, depth, date} or a
// USGS GeoJSON Feature.
EarthquakeParams parse_event(const nlohmann::json& j, const std::string& source_name = "<memory>");
EarthquakeParams load_event(const std::filesystem::path& path);

struct SiteConditions {
  double vs30 = 0.0;  // m/s
};

inline constexpr double kMinVs30 = 50.0;
inline constexpr double kMaxVs30 = 3000.0;

// Regular lat/lon raster read from an ESRI ASCII grid (.asc) or from the CSV
// grid layout described in the README. Rows are stored north to south.
class Vs30Grid {
 public:
  Vs30Grid(std::size_t ncols, std::size_t nrows, double xll_corner, double yll_corner,
           double cell_size, double nodata, std::vector<double> values);

  static Vs30Grid load(const std::filesystem::path& path);
  static Vs30Grid parse_esri_ascii(std::string_view text, const std::string& source_name);
  static Vs30Grid parse_csv_grid(std::string_view text, const std::string& source_name);

  std::size_t ncols() const { return ncols_; }
  std::size_t nrows() const { return nrows_; }
  double cell_size() const { return cell_; }
  double nodata() const { return nodata_; }
  // row 0 is the northernmost row.
  double value(std::size_t row, std::size_t col) const { return values_[row * ncols_ + col]; }
  GeoPoint cell_center(std::size_t row, std::size_t col) const;
  bool covers(const GeoPoint& p) const;

  // Nearest cell; throws Coverage outside the extent and MissingData on a
  // nodata cell.
  SiteConditions lookup(const GeoPoint& p) const;

 private:
  std::size_t ncols_, nrows_;
  double xll_, yll_, cell_, nodata_;
  std::vector<double> values_;
};

SiteConditions sample_vs30(const Vs30Grid& grid, const GeoPoint& p);

struct LocationMeta {
  std::string state;
  std::string city;
  std::string zipcode;
  std::string county;
  GeoPoint coords;
  double epicentral_distance_km = 0.0;
};

struct BuildingRecord {
  GeoPoint centroid;
  std::optional<std::string> type;
  std::optional<double> height_m;
  std::optional<std::string> material;
};

// Buildings CSV (lat, lon, type, height_m, material) or GeoJSON with Point
// or Polygon features; polygon footprints are reduced to their centroid.
std::vector<BuildingRecord> load_buildings(const std::filesystem::path& path);

// Buildings with no type tag are counted under this key so the histogram
// always sums to the building count.
inline constexpr std::string_view kUnspecifiedType = "unspecified";

struct BuildingSummary {
  double radius_m = 100.0;
  std::size_t count = 0;
  std::map<std::string, std::size_t> type_distribution;
  std::optional<double> height_min;
  std::optional<double> height_max;
  std::optional<double> height_avg;
  // Fraction of material-tagged buildings carrying each material.
  std::map<std::string, double> material_prevalence;
};

// Includes exactly the buildings whose centroid lies within `radius_m`
// (haversine, inclusive) of `p`.
BuildingSummary summarize_buildings(std::span<const BuildingRecord> buildings, const GeoPoint& p,
                                    double radius_m = 100.0);

// Bucketed index over building centroids; summaries are identical to
// summarize_buildings over the full list.
class BuildingIndex {
 public:
  explicit BuildingIndex(std::vector<BuildingRecord> buildings, double bucket_deg = 0.01);

  BuildingSummary summarize(const GeoPoint& p, double radius_m = 100.0) const;
  std::size_t size() const { return buildings_.size(); }

 private:
  std::vector<BuildingRecord> buildings_;
  double bucket_;
  std::map<std::pair<long, long>, std::vector<std::size_t>> buckets_;
};

struct Socioeconomics {
  double population = 0.0;
  double population_density = 0.0;  // persons / km^2
  double urban_pct = 0.0;
  double over65_pct = 0.0;
  double median_income = 0.0;  // USD / year
  double bachelor_pct = 0.0;
};

// One ACS row; a column left empty in the source is absent here.
struct AcsRow {
  std::optional<double> population;
  std::optional<double> population_density;
  std::optional<double> urban_pct;
  std::optional<double> over65_pct;
  std::optional<double> median_income;
  std::optional<double> bachelor_pct;
};

using AcsTable = std::map<std::string, AcsRow>;

// CSV keyed by GEOID with columns population, population_density, urban_pct,
// over65_pct, median_income, bachelor_pct. Out-of-range values are rejected
// with their line number.
AcsTable load_acs(const std::filesystem::path& path);

// Point-in-polygon join against block-group polygons. When several polygons
// contain the point (shared boundary) the lowest GEOID wins.
Socioeconomics join_cbg(const GeoPoint& p, std::span<const ZonePolygon> cbg_zones,
                        const AcsTable& acs);

class CbgIndex {
 public:
  explicit CbgIndex(std::vector<ZonePolygon> zones);
  // GEOID of the containing block group (lowest on ties), if any.
  std::optional<std::string> locate(const GeoPoint& p) const;
  const std::vector<ZonePolygon>& zones() const { return zones_; }

 private:
  std::vector<ZonePolygon> zones_;  // sorted by GEOID
};

Socioeconomics join_cbg(const GeoPoint& p, const CbgIndex& index, const AcsTable& acs);

enum class ImageStatus { Available, Missing };

struct StreetImage {
  ImageStatus status = ImageStatus::Missing;
  std::string image_ref;  // file path when available
  std::optional<double> heading;
};

// True when the bytes start like a JPEG or PNG stream.
bool looks_like_image(std::span<const std::uint8_t> bytes);

class ImageProvider {
 public:
  virtual ~ImageProvider() = default;
  // Missing imagery is a normal outcome; only I/O failures throw (Transport).
  virtual StreetImage fetch(const std::string& sample_id, const GeoPoint& p) = 0;
};

// Looks up `<dir>/<sample_id>.jpg`.
class LocalImageProvider : public ImageProvider {
 public:
  explicit LocalImageProvider(std::filesystem::path dir);
  StreetImage fetch(const std::string& sample_id, const GeoPoint& p) override;

 private:
  std::filesystem::path dir_;
};

// Fetches imagery over HTTP(S) from a URL template with {lat}, {lon} and
// {key} placeholders and stores it under `store_dir/<sample_id>.jpg`.
// 404 and non-image bodies count as missing; other failures are retried.
class HttpImageProvider : public ImageProvider {
 public:
  HttpImageProvider(std::string url_template, std::string api_key_env,
                    std::filesystem::path store_dir, int max_attempts = 3,
                    int base_backoff_ms = 200);
  StreetImage fetch(const std::string& sample_id, const GeoPoint& p) override;

 private:
  std::string url_template_;
  std::string api_key_env_;
  std::filesystem::path store_dir_;
  int max_attempts_;
  int base_backoff_ms_;
};

StreetImage fetch_street_image(const std::string& sample_id, const GeoPoint& p,
                               ImageProvider& provider);

struct SampleFeatures {
  std::string sample_id;
  std::string zone_id;
  EarthquakeParams earthquake;
  SiteConditions site;
  LocationMeta location;
  BuildingSummary buildings;
  Socioeconomics socioeconomics;
  StreetImage image;
};

// Checks every sub-type invariant; throws Error(Value) naming the first
// violation.
void validate(const SampleFeatures& x);

struct Rejection {
  std::string sample_id;
  std::string zone_id;
  std::string reason;  // vs30_nodata, vs30_coverage, cbg_no_match, acs_missing_row, ...
  std::string detail;
};

using FusionOutcome = std::variant<SampleFeatures, Rejection>;

// Attribute names used to read location metadata from a zip polygon.
struct LocationFields {
  std::string city_property = "city";
  std::string state_property = "state";
  std::string county_property = "county";
};

struct FusionSources {
  EarthquakeParams earthquake;
  const Vs30Grid* vs30 = nullptr;
  const BuildingIndex* buildings = nullptr;
  const CbgIndex* cbg = nullptr;
  const AcsTable* acs = nullptr;
  ImageProvider* images = nullptr;
  const ZipCountyMap* zip_county = nullptr;  // optional
  LocationFields fields;
  double building_radius_m = 100.0;
};

// Per-sample failures, including image transport errors, become a Rejection
// with a reason code rather than an exception.
FusionOutcome assemble_features(const SampledPoint& point, const ZonePolygon& zone,
                                const FusionSources& sources);

void to_json(nlohmann::json& j, const EarthquakeParams& e);
void from_json(const nlohmann::json& j, EarthquakeParams& e);
void to_json(nlohmann::json& j, const SampleFeatures& x);
void from_json(const nlohmann::json& j, SampleFeatures& x);
void to_json(nlohmann::json& j, const Rejection& r);
void from_json(const nlohmann::json& j, Rejection& r);

std::vector<SampleFeatures> load_features_jsonl(const std::filesystem::path& path);
std::vector<Rejection> load_rejections_jsonl(const std::filesystem::path& path);

}  // namespace quakesense

#pragma once

// Zone geometry, point-in-polygon, seeded uniform sampling and great-circle
// distance. All coordinates are WGS84 degrees; polygon operations work in
// planar lat/lon space.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace quakesense {

inline constexpr double kEarthRadiusKm = 6371.0088;

struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;

  friend bool operator==(const GeoPoint&, const GeoPoint&) = default;
};

bool is_valid(const GeoPoint& p);
// Throws Error(Value) when a coordinate is non-finite or out of range.
GeoPoint make_point(double lat, double lon);

enum class ZoneKind { Zip, County };

std::string_view to_string(ZoneKind kind);
ZoneKind parse_zone_kind(std::string_view text);
std::string_view default_id_property(ZoneKind kind);

// A closed ring: first vertex equals last, at least four vertices.
using Ring = std::vector<GeoPoint>;

struct PolygonPart {
  Ring outer;
  std::vector<Ring> holes;
};

struct BBox {
  double min_lat = 0, min_lon = 0, max_lat = 0, max_lon = 0;

  bool contains(const GeoPoint& p) const {
    return p.lat >= min_lat && p.lat <= max_lat && p.lon >= min_lon && p.lon <= max_lon;
  }
};

struct ZonePolygon {
  std::string zone_id;
  ZoneKind kind = ZoneKind::Zip;
  std::vector<PolygonPart> parts;
  // Source geometry was a MultiPolygon (kept so export can round-trip it).
  bool multi = false;
  BBox bbox;
  // String-valued feature properties other than the id (city, state, ...).
  std::map<std::string, std::string> attributes;
};

BBox compute_bbox(const std::vector<PolygonPart>& parts);

// Signed shoelace area in squared degrees (counter-clockwise positive).
double signed_ring_area(const Ring& ring);
// Outer area minus hole areas, always >= 0.
double part_area(const PolygonPart& part);
double zone_area(const ZonePolygon& zone);

// Parses a GeoJSON FeatureCollection of Polygon / MultiPolygon features.
// `source_name` is used in error messages.
std::vector<ZonePolygon> parse_zones(std::string_view geojson, ZoneKind kind,
                                     std::string_view id_property,
                                     const std::string& source_name = "<memory>");
std::vector<ZonePolygon> load_zones(const std::filesystem::path& path, ZoneKind kind,
                                    std::optional<std::string> id_property = std::nullopt);

// Even-odd containment over every ring of every part, so holes are
// excluded. A point lying exactly on any edge counts as inside.
bool point_in_polygon(const GeoPoint& p, const ZonePolygon& zone);
bool point_on_boundary(const GeoPoint& p, const ZonePolygon& zone);

struct SamplePlan {
  std::size_t points_per_zone = 50;
  std::uint64_t seed = 0;
  std::size_t max_rejections_per_point = 10000;
};

// Counter-based generator: the value at position `counter` of the stream
// keyed by (seed, stream) is a pure function of those three integers.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 bits of resolution.
  double next_unit();
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// Draws plan.points_per_zone points uniformly from the zone by rejection
// sampling over the bbox of a part chosen with probability proportional to
// its planar area. The stream is keyed by (plan.seed, zone_index).
std::vector<GeoPoint> sample_uniform(const ZonePolygon& zone, const SamplePlan& plan,
                                     std::uint64_t zone_index);

struct SampledPoint {
  std::string zone_id;
  std::string sample_id;
  GeoPoint point;
};

std::string make_sample_id(std::string_view zone_id, std::size_t index, std::size_t count);

// Samples every zone; zone_index is the zone's position in `zones`.
std::vector<SampledPoint> sample_zones(std::span<const ZonePolygon> zones, const SamplePlan& plan);

std::string points_to_csv(std::span<const SampledPoint> points);
std::string points_to_jsonl(std::span<const SampledPoint> points);
std::vector<SampledPoint> load_points_jsonl(const std::filesystem::path& path);

double haversine_km(const GeoPoint& a, const GeoPoint& b);

// zip -> county lookup read from a CSV with columns zip, county and an
// optional county_name.
struct CountyRef {
  std::string county_id;
  std::string county_name;
};
using ZipCountyMap = std::map<std::string, CountyRef>;

ZipCountyMap load_zip_county(const std::filesystem::path& path);

}  // namespace quakesense

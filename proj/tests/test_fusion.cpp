#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "quakesense/error.hpp"
#include "quakesense/fusion.hpp"
#include "support.hpp"

using namespace quakesense;
using nlohmann::json;

namespace {

Vs30Grid small_grid(std::vector<double> values, std::size_t ncols, std::size_t nrows) {
  return Vs30Grid(ncols, nrows, -118.0, 34.0, 0.01, -9999.0, std::move(values));
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error thrown");
  return ErrorKind::Config;
}

}  // namespace

TEST_CASE("vs30 lookup matches a brute-force nearest-cell oracle") {
  const std::size_t nc = 37, nr = 23;
  std::vector<double> values(nc * nr);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> v(150, 900);
  for (auto& x : values) x = std::round(v(rng));
  const auto grid = small_grid(values, nc, nr);

  std::uniform_real_distribution<double> lon(-118.0, -118.0 + 0.37), lat(34.0, 34.23);
  for (int i = 0; i < 5000; ++i) {
    const GeoPoint p{lat(rng), lon(rng)};
    double best = std::numeric_limits<double>::infinity();
    double expect = 0;
    for (std::size_t r = 0; r < nr; ++r) {
      for (std::size_t c = 0; c < nc; ++c) {
        // Row 0 is the northern row.
        const double clat = 34.0 + (static_cast<double>(nr - 1 - r) + 0.5) * 0.01;
        const double clon = -118.0 + (static_cast<double>(c) + 0.5) * 0.01;
        const double d = std::max(std::abs(clat - p.lat), std::abs(clon - p.lon));
        if (d < best) {
          best = d;
          expect = values[r * nc + c];
        }
      }
    }
    REQUIRE(grid.lookup(p).vs30 == expect);
  }
}

TEST_CASE("vs30 cell centre, nodata and coverage") {
  std::vector<double> values = {417, 300, -9999, 500};
  const auto grid = small_grid(values, 2, 2);
  CHECK(grid.lookup(grid.cell_center(0, 0)).vs30 == 417.0);
  CHECK(kind_of([&] { grid.lookup(grid.cell_center(1, 0)); }) == ErrorKind::MissingData);
  CHECK(kind_of([&] { grid.lookup({33.5, -118.0}); }) == ErrorKind::Coverage);
  CHECK(kind_of([&] { grid.lookup({34.005, -118.5}); }) == ErrorKind::Coverage);

  const auto asc = Vs30Grid::parse_esri_ascii(
      "ncols 2\nnrows 2\nxllcenter -117.995\nyllcenter 34.005\ncellsize 0.01\nNODATA_value -1\n417 300\n-1 500\n",
      "t.asc");
  CHECK(asc.lookup({34.015, -117.995}).vs30 == 417.0);
  CHECK(asc.lookup({34.005, -117.985}).vs30 == 500.0);
  CHECK(kind_of([&] { asc.lookup({34.005, -117.995}); }) == ErrorKind::MissingData);
  CHECK_THROWS_AS(Vs30Grid::parse_esri_ascii("ncols 2\nnrows 2\ncellsize 0.01\n1 2\n3 4\n", "bad"), Error);
}

TEST_CASE("building summary matches a brute-force radius filter") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> dlat(34.0, 34.02), dlon(-118.0, -117.98), u(0, 1);
  std::vector<BuildingRecord> bs;
  const char* types[] = {"residential", "school", "commercial"};
  for (int i = 0; i < 3000; ++i) {
    BuildingRecord b;
    b.centroid = {dlat(rng), dlon(rng)};
    if (u(rng) < 0.8) b.type = types[i % 3];
    if (u(rng) < 0.7) b.height_m = 3 + 20 * u(rng);
    if (u(rng) < 0.5) b.material = i % 2 ? "wood" : "concrete";
    bs.push_back(b);
  }
  const BuildingIndex index(bs);
  for (int q = 0; q < 200; ++q) {
    const GeoPoint p{dlat(rng), dlon(rng)};
    std::size_t count = 0, tagged = 0, wood = 0, untyped = 0;
    double hmin = 1e9, hmax = -1e9;
    for (const auto& b : bs) {
      if (haversine_km(p, b.centroid) * 1000.0 > 100.0) continue;
      ++count;
      if (!b.type) ++untyped;
      if (b.height_m) {
        hmin = std::min(hmin, *b.height_m);
        hmax = std::max(hmax, *b.height_m);
      }
      if (b.material) {
        ++tagged;
        if (*b.material == "wood") ++wood;
      }
    }
    const auto s = index.summarize(p, 100.0);
    const auto brute = summarize_buildings(bs, p, 100.0);
    REQUIRE(s.count == count);
    REQUIRE(brute.count == count);
    std::size_t hist = 0;
    for (const auto& [t, n] : s.type_distribution) hist += n;
    REQUIRE(hist == count);
    if (untyped > 0) REQUIRE(s.type_distribution.at(std::string(kUnspecifiedType)) == untyped);
    if (hmax >= hmin) {
      REQUIRE(*s.height_min == hmin);
      REQUIRE(*s.height_max == hmax);
    }
    if (wood > 0) REQUIRE(s.material_prevalence.at("wood") == doctest::Approx(double(wood) / double(tagged)));
    REQUIRE(s.height_avg == brute.height_avg);
  }
}

TEST_CASE("buildings load from CSV and GeoJSON footprints") {
  qs_test::TempDir dir("bld");
  atomic_write(dir / "b.csv", "lat,lon,type,height_m,material\n34,-118,school,12m,concrete\n34.001,-118,,,\n");
  const auto csv = load_buildings(dir / "b.csv");
  REQUIRE(csv.size() == 2);
  CHECK(*csv[0].height_m == 12.0);
  CHECK_FALSE(csv[1].type.has_value());

  const json gj = {{"type", "FeatureCollection"},
                   {"features",
                    {{{"type", "Feature"},
                      {"properties", {{"building", "house"}, {"height", "7.5"}}},
                      {"geometry",
                       {{"type", "Polygon"},
                        {"coordinates", {{{-118.0, 34.0}, {-117.9998, 34.0}, {-117.9998, 34.0002},
                                          {-118.0, 34.0002}, {-118.0, 34.0}}}}}}}}}};
  atomic_write(dir / "b.geojson", gj.dump());
  const auto poly = load_buildings(dir / "b.geojson");
  REQUIRE(poly.size() == 1);
  CHECK(poly[0].centroid.lat == doctest::Approx(34.0001));
  CHECK(poly[0].centroid.lon == doctest::Approx(-117.9999));
  CHECK(*poly[0].type == "house");
}

TEST_CASE("ACS loading and block-group join") {
  qs_test::TempDir dir("acs");
  const std::string header = "GEOID,population,population_density,urban_pct,over65_pct,median_income,bachelor_pct\n";
  atomic_write(dir / "acs.csv", header + "A,100,2000,90,10,50000,30\nB,50,,50,20,40000,20\n");
  const auto acs = load_acs(dir / "acs.csv");
  CHECK(acs.at("A").median_income == 50000.0);
  CHECK_FALSE(acs.at("B").population_density.has_value());

  atomic_write(dir / "bad.csv", header + "A,100,2000,190,10,50000,30\n");
  CHECK(kind_of([&] { load_acs(dir / "bad.csv"); }) == ErrorKind::Value);
  atomic_write(dir / "dup.csv", header + "A,1,1,1,1,1,1\nA,1,1,1,1,1,1\n");
  CHECK(kind_of([&] { load_acs(dir / "dup.csv"); }) == ErrorKind::Conflict);

  const json cbg = {{"type", "FeatureCollection"},
                    {"features",
                     {{{"type", "Feature"},
                       {"properties", {{"GEOID", "A"}}},
                       {"geometry", {{"type", "Polygon"}, {"coordinates", {{{0, 0}, {1, 0}, {1, 1}, {0, 1}, {0, 0}}}}}}},
                      {{"type", "Feature"},
                       {"properties", {{"GEOID", "B"}}},
                       {"geometry", {{"type", "Polygon"}, {"coordinates", {{{1, 0}, {2, 0}, {2, 1}, {1, 1}, {1, 0}}}}}}},
                      {{"type", "Feature"},
                       {"properties", {{"GEOID", "C"}}},
                       {"geometry",
                        {{"type", "Polygon"}, {"coordinates", {{{2, 0}, {3, 0}, {3, 1}, {2, 1}, {2, 0}}}}}}}}}};
  const CbgIndex index(parse_zones(cbg.dump(), ZoneKind::County, "GEOID", "cbg"));
  CHECK(join_cbg({0.5, 0.5}, index, acs).population_density == 2000.0);
  CHECK(*index.locate({0.5, 1.0}) == "A");  // shared edge: lowest id
  CHECK(kind_of([&] { join_cbg({0.5, 1.5}, index, acs); }) == ErrorKind::MissingData);  // B lacks density
  CHECK(kind_of([&] { join_cbg({0.5, 2.5}, index, acs); }) == ErrorKind::MissingData);  // C has no ACS row
  CHECK(kind_of([&] { join_cbg({0.5, 3.5}, index, acs); }) == ErrorKind::Join);         // outside every group
}

TEST_CASE("event parsing") {
  const auto flat = parse_event(json::parse(read_text_file(qs_test::fixture("event_ridgecrest.json"))));
  CHECK(flat.magnitude == 7.1);
  CHECK(flat.place == "Ridgecrest, California");
  const json usgs = {{"type", "Feature"},
                     {"id", "ci38457511"},
                     {"properties", {{"mag", 7.1}, {"place", "Ridgecrest"}, {"time", 1562383193040LL}}},
                     {"geometry", {{"type", "Point"}, {"coordinates", {-117.5993, 35.7695, 8.0}}}}};
  const auto e = parse_event(usgs);
  CHECK(e.event_date == "2019-07-06");
  CHECK(e.depth_km == 8.0);
  CHECK(kind_of([] { parse_event(json{{"id", "x"}, {"place", "p"}, {"lat", 0}, {"lon", 0}, {"mag", 11},
                                      {"depth", 1}, {"date", "d"}}); }) == ErrorKind::Value);
  CHECK(kind_of([] { parse_event(json{{"id", "x"}}); }) == ErrorKind::Schema);
}

TEST_CASE("fixture bundle validates and round-trips through JSON") {
  const auto x = qs_test::fixture_sample();
  CHECK_NOTHROW(validate(x));
  const json j = x;
  const auto back = j.get<SampleFeatures>();
  CHECK(json(back) == j);

  auto bad = x;
  bad.location.epicentral_distance_km += 1.0;
  CHECK(kind_of([&] { validate(bad); }) == ErrorKind::Value);
  bad = x;
  bad.site.vs30 = 20;
  CHECK(kind_of([&] { validate(bad); }) == ErrorKind::Value);
  bad = x;
  bad.buildings.count = 3;
  CHECK(kind_of([&] { validate(bad); }) == ErrorKind::Value);
  bad = x;
  bad.socioeconomics.urban_pct = 101;
  CHECK(kind_of([&] { validate(bad); }) == ErrorKind::Value);
}

TEST_CASE("local image provider") {
  qs_test::TempDir dir("img");
  std::filesystem::copy_file(qs_test::fixture("street.jpg"), dir / "s1.jpg");
  atomic_write(dir / "s2.jpg", "not an image");
  LocalImageProvider p(dir.path());
  CHECK(p.fetch("s1", {0, 0}).status == ImageStatus::Available);
  CHECK(p.fetch("s2", {0, 0}).status == ImageStatus::Missing);
  CHECK(p.fetch("s3", {0, 0}).status == ImageStatus::Missing);
}

TEST_CASE("assemble_features turns per-sample problems into rejections") {
  qs_test::TempDir dir("asm");
  // One zone [0,2]x[0,1]; block group covers only its west half.
  const json zones = {{"type", "FeatureCollection"},
                      {"features",
                       {{{"type", "Feature"},
                         {"properties", {{"ZCTA5CE10", "z"}, {"city", "Town"}, {"state", "State"}, {"county", "C"}}},
                         {"geometry", {{"type", "Polygon"}, {"coordinates", {{{0, 0}, {2, 0}, {2, 1}, {0, 1}, {0, 0}}}}}}}}}};
  const json cbg = {{"type", "FeatureCollection"},
                    {"features",
                     {{{"type", "Feature"},
                       {"properties", {{"GEOID", "A"}}},
                       {"geometry", {{"type", "Polygon"}, {"coordinates", {{{0, 0}, {1, 0}, {1, 1}, {0, 1}, {0, 0}}}}}}}}}};
  const auto zone = parse_zones(zones.dump(), ZoneKind::Zip, "ZCTA5CE10", "z").at(0);
  const CbgIndex cbg_index(parse_zones(cbg.dump(), ZoneKind::County, "GEOID", "c"));
  atomic_write(dir / "acs.csv",
               "GEOID,population,population_density,urban_pct,over65_pct,median_income,bachelor_pct\nA,1,1,1,1,1,1\n");
  const auto acs = load_acs(dir / "acs.csv");
  // 4x2 grid of 0.5 deg cells over the zone; one nodata cell.
  const Vs30Grid grid(4, 2, 0.0, 0.0, 0.5, -9999.0, {300, 300, 300, 300, -9999, 300, 300, 300});
  const BuildingIndex buildings({});
  LocalImageProvider images(dir.path());

  FusionSources src;
  src.earthquake = parse_event(json::parse(read_text_file(qs_test::fixture("event_ridgecrest.json"))));
  src.vs30 = &grid;
  src.buildings = &buildings;
  src.cbg = &cbg_index;
  src.acs = &acs;
  src.images = &images;

  auto reason = [&](double lat, double lon) -> std::string {
    const auto out = assemble_features({"z", "s", {lat, lon}}, zone, src);
    if (const auto* r = std::get_if<Rejection>(&out)) return r->reason;
    return "ok";
  };
  CHECK(reason(0.75, 0.75) == "ok");
  CHECK(reason(0.25, 0.25) == "vs30_nodata");
  CHECK(reason(0.75, 1.75) == "cbg_no_match");

  const auto ok = std::get<SampleFeatures>(assemble_features({"z", "s", {0.75, 0.75}}, zone, src));
  CHECK(ok.location.city == "Town");
  CHECK(ok.location.zipcode == "z");
  CHECK(ok.image.status == ImageStatus::Missing);
  CHECK(ok.buildings.count == 0);
}

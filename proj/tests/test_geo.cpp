#include <array>
#include <chrono>
#include <cmath>
#include <random>

#include <boost/math/distributions/chi_squared.hpp>

#include "doctest.h"
#include "quakesense/error.hpp"
#include "quakesense/geo.hpp"
#include "support.hpp"

using namespace quakesense;
using nlohmann::json;

namespace {

json polygon_feature(const std::string& id, const std::vector<std::vector<std::array<double, 2>>>& rings) {
  json coords = json::array();
  for (const auto& r : rings) {
    json ring = json::array();
    for (const auto& v : r) ring.push_back({v[0], v[1]});  // lon, lat
    coords.push_back(ring);
  }
  return {{"type", "Feature"},
          {"properties", {{"ZCTA5CE10", id}}},
          {"geometry", {{"type", "Polygon"}, {"coordinates", coords}}}};
}

ZonePolygon single_zone(const json& feature) {
  const json fc = {{"type", "FeatureCollection"}, {"features", json::array({feature})}};
  return parse_zones(fc.dump(), ZoneKind::Zip, "ZCTA5CE10", "test").at(0);
}

// L = [0,2]x[0,1] plus [0,1]x[1,2] in (lon, lat).
ZonePolygon l_shape() {
  return single_zone(polygon_feature("L", {{{0, 0}, {2, 0}, {2, 1}, {1, 1}, {1, 2}, {0, 2}, {0, 0}}}));
}

}  // namespace

TEST_CASE("point in convex polygon agrees with the half-plane oracle") {
  // Counter-clockwise hexagon; a point is inside iff it is left of (or on)
  // every directed edge.
  const std::vector<std::array<double, 2>> v = {{0, 0}, {3, -1}, {5, 1}, {4, 4}, {1, 5}, {-1, 2}, {0, 0}};
  const auto zone = single_zone(polygon_feature("hex", {v}));
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> lon(-2, 6), lat(-2, 6);
  for (int i = 0; i < 20000; ++i) {
    const GeoPoint p{lat(rng), lon(rng)};
    bool inside = true;
    for (std::size_t e = 0; e + 1 < v.size(); ++e) {
      const double cross =
          (v[e + 1][0] - v[e][0]) * (p.lat - v[e][1]) - (v[e + 1][1] - v[e][1]) * (p.lon - v[e][0]);
      if (cross < 0) inside = false;
    }
    REQUIRE(point_in_polygon(p, zone) == inside);
  }
  // Vertices and edge points count as inside.
  CHECK(point_in_polygon({0, 0}, zone));
  CHECK(point_in_polygon({-0.5, 1.5}, zone));
}

TEST_CASE("holes and multipolygons") {
  const auto donut = single_zone(polygon_feature(
      "d", {{{0, 0}, {4, 0}, {4, 4}, {0, 4}, {0, 0}}, {{1, 1}, {3, 1}, {3, 3}, {1, 3}, {1, 1}}}));
  CHECK(point_in_polygon({0.5, 0.5}, donut));
  CHECK_FALSE(point_in_polygon({2, 2}, donut));
  CHECK(zone_area(donut) == doctest::Approx(12.0));

  const json mp = {{"type", "FeatureCollection"},
                   {"features",
                    {{{"type", "Feature"},
                      {"properties", {{"ZCTA5CE10", "m"}}},
                      {"geometry",
                       {{"type", "MultiPolygon"},
                        {"coordinates",
                         {{{{0, 0}, {1, 0}, {1, 1}, {0, 1}, {0, 0}}}, {{{5, 5}, {6, 5}, {6, 6}, {5, 6}, {5, 5}}}}}}}}}}};
  const auto z = parse_zones(mp.dump(), ZoneKind::Zip, "ZCTA5CE10", "mp").at(0);
  CHECK(z.multi);
  CHECK(z.parts.size() == 2);
  CHECK(point_in_polygon({5.5, 5.5}, z));
  CHECK_FALSE(point_in_polygon({3, 3}, z));
}

TEST_CASE("zone parsing errors") {
  const json point = {{"type", "FeatureCollection"},
                      {"features",
                       {{{"type", "Feature"},
                         {"properties", {{"ZCTA5CE10", "p"}}},
                         {"geometry", {{"type", "Point"}, {"coordinates", {1, 2}}}}}}}};
  CHECK_THROWS_AS(parse_zones(point.dump(), ZoneKind::Zip, "ZCTA5CE10", "x"), Error);
  CHECK_THROWS_AS(parse_zones("{not json", ZoneKind::Zip, "ZCTA5CE10", "x"), Error);
  const json dup = {{"type", "FeatureCollection"},
                    {"features", {polygon_feature("a", {{{0, 0}, {1, 0}, {1, 1}, {0, 0}}}),
                                  polygon_feature("a", {{{0, 0}, {1, 0}, {1, 1}, {0, 0}}})}}};
  CHECK_THROWS_AS(parse_zones(dup.dump(), ZoneKind::Zip, "ZCTA5CE10", "x"), Error);
}

TEST_CASE("L-shaped polygon sampling passes a 16-cell chi-square test") {
  const auto zone = l_shape();
  SamplePlan plan;
  plan.points_per_zone = 20000;
  plan.seed = 2024;
  const auto t0 = std::chrono::steady_clock::now();
  const auto pts = sample_uniform(zone, plan, 0);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(secs < 5.0);
  REQUIRE(pts.size() == 20000);

  // Cells: the bottom arm as 4x2 cells of 0.5 x 0.5, the upper arm as 2x4
  // cells of 0.5 x 0.25. Expected counts are area / 3 of the total.
  struct Cell {
    double w, s, e, n;
  };
  std::vector<Cell> cells;
  for (int c = 0; c < 4; ++c)
    for (int r = 0; r < 2; ++r) cells.push_back({c * 0.5, r * 0.5, c * 0.5 + 0.5, r * 0.5 + 0.5});
  for (int c = 0; c < 2; ++c)
    for (int r = 0; r < 4; ++r) cells.push_back({c * 0.5, 1.0 + r * 0.25, c * 0.5 + 0.5, 1.0 + r * 0.25 + 0.25});
  REQUIRE(cells.size() == 16);

  std::vector<double> observed(cells.size(), 0.0);
  for (const auto& p : pts) {
    REQUIRE(point_in_polygon(p, zone));
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const auto& c = cells[i];
      if (p.lon >= c.w && p.lon < c.e && p.lat >= c.s && p.lat < c.n) {
        observed[i] += 1;
        break;
      }
    }
  }
  double chi2 = 0.0, total = 0.0;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& c = cells[i];
    const double expected = 20000.0 * (c.e - c.w) * (c.n - c.s) / 3.0;
    chi2 += (observed[i] - expected) * (observed[i] - expected) / expected;
    total += observed[i];
  }
  CHECK(total == 20000.0);
  const double critical = boost::math::quantile(boost::math::chi_squared(15.0), 0.999);
  INFO("chi2 = " << chi2 << ", critical = " << critical);
  CHECK(chi2 < critical);
}

TEST_CASE("sampling is deterministic per (seed, zone index)") {
  const auto zone = l_shape();
  SamplePlan plan;
  plan.points_per_zone = 50;
  plan.seed = 9;
  CHECK(sample_uniform(zone, plan, 3) == sample_uniform(zone, plan, 3));
  CHECK(sample_uniform(zone, plan, 3) != sample_uniform(zone, plan, 4));
  plan.seed = 10;
  const auto other = sample_uniform(zone, plan, 3);
  plan.seed = 9;
  CHECK(other != sample_uniform(zone, plan, 3));
}

TEST_CASE("degenerate zones and exhausted rejection budgets fail") {
  const auto line = single_zone(polygon_feature("z", {{{0, 0}, {1, 1}, {2, 2}, {0, 0}}}));
  SamplePlan plan;
  CHECK_THROWS_AS(sample_uniform(line, plan, 0), Error);

  // A thin diagonal sliver accepts very few bounding-box draws.
  const auto sliver = single_zone(polygon_feature("s", {{{0, 0}, {1, 1}, {1, 1.000001}, {0, 0}}}));
  plan.max_rejections_per_point = 3;
  try {
    sample_uniform(sliver, plan, 0);
    FAIL("expected a sampling error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Sampling);
    CHECK(std::string(e.what()).find("acceptance rate") != std::string::npos);
  }
}

TEST_CASE("sample ids and serialisation") {
  CHECK(make_sample_id("92104", 7, 50) == "92104-007");
  CHECK(make_sample_id("92104", 7, 5000) == "92104-0007");
  const auto zone = l_shape();
  SamplePlan plan;
  plan.points_per_zone = 5;
  const std::vector<ZonePolygon> zones = {zone};
  const auto pts = sample_zones(zones, plan);
  REQUIRE(pts.size() == 5);
  CHECK(pts[0].sample_id == "L-001");
  qs_test::TempDir dir("geo");
  atomic_write(dir / "p.jsonl", points_to_jsonl(pts));
  const auto back = load_points_jsonl(dir / "p.jsonl");
  REQUIRE(back.size() == pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    CHECK(back[i].sample_id == pts[i].sample_id);
    CHECK(back[i].point == pts[i].point);
  }
  CHECK(points_to_csv(pts).rfind("zone_id,sample_id,lat,lon\n", 0) == 0);
}

TEST_CASE("haversine") {
  CHECK(haversine_km({0, 0}, {0, 0}) == 0.0);
  CHECK(haversine_km({0, 0}, {0, 1}) == doctest::Approx(kEarthRadiusKm * M_PI / 180.0).epsilon(1e-12));
  const double d = haversine_km({35.7695, -117.5993}, {32.7480, -117.1460});
  CHECK(d == doctest::Approx(338.5475).epsilon(1e-6));
  CHECK(haversine_km({35.7695, -117.5993}, {32.7480, -117.1460}) ==
        haversine_km({32.7480, -117.1460}, {35.7695, -117.5993}));
  CHECK_THROWS_AS(make_point(91, 0), Error);
  CHECK_THROWS_AS(make_point(0, 181), Error);
}

TEST_CASE("counter rng") {
  CounterRng a(1, 2), b(1, 2), c(1, 3);
  const auto x = a.next_u64();
  CHECK(x == b.next_u64());
  CHECK(x != c.next_u64());
  for (int i = 0; i < 1000; ++i) {
    const double u = a.next_unit();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
  }
}

#include "doctest.h"
#include "quakesense/error.hpp"
#include "quakesense/export.hpp"
#include "support.hpp"

using namespace quakesense;

namespace {

Ring square(double lat, double lon, double s) {
  return {{lat, lon}, {lat, lon + s}, {lat + s, lon + s}, {lat + s, lon}, {lat, lon}};
}

std::vector<ZonePolygon> two_zones() {
  ZonePolygon a;
  a.zone_id = "10001";
  a.parts = {{square(34.0, -118.0, 0.1), {square(34.02, -117.98, 0.02)}}};
  a.bbox = compute_bbox(a.parts);
  ZonePolygon b;
  b.zone_id = "10002";
  b.multi = true;
  b.parts = {{square(33.0, -117.0, 0.1), {}}, {square(33.2, -117.0, 0.05), {}}};
  b.bbox = compute_bbox(b.parts);
  return {a, b};
}

}  // namespace

TEST_CASE("choropleth geometry round-trips through the zone loader") {
  const auto zones = two_zones();
  const std::vector<ZoneScore> scores = {{"10001", ZoneKind::Zip, 5.25, 8, 4.9},
                                         {"10002", ZoneKind::Zip, 3.0, 4, std::nullopt}};
  const auto text = export_choropleth(scores, zones, GeoPoint{35.7695, -117.5993});
  auto doc = nlohmann::json::parse(text);
  REQUIRE(doc["features"].size() == 3);

  const auto& epi = doc["features"][2];
  CHECK(epi["properties"]["role"] == "epicenter");
  CHECK(epi["geometry"]["type"] == "Point");
  CHECK(epi["geometry"]["coordinates"][0] == -117.5993);

  const auto& f0 = doc["features"][0]["properties"];
  CHECK(f0["zone_id"] == "10001");
  CHECK(f0["mean_mmi_pred"] == 5.25);
  CHECK(f0["n_effective"] == 8);
  CHECK(f0["mmi_truth"] == 4.9);
  CHECK_FALSE(doc["features"][1]["properties"].contains("mmi_truth"));
  CHECK(doc["features"][0]["geometry"]["type"] == "Polygon");
  CHECK(doc["features"][1]["geometry"]["type"] == "MultiPolygon");

  doc["features"].erase(2);
  const auto back = parse_zones(doc.dump(), ZoneKind::Zip, "zone_id");
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].zone_id == zones[i].zone_id);
    CHECK(back[i].multi == zones[i].multi);
    REQUIRE(back[i].parts.size() == zones[i].parts.size());
    for (std::size_t p = 0; p < zones[i].parts.size(); ++p) {
      const auto& got = back[i].parts[p];
      const auto& want = zones[i].parts[p];
      REQUIRE(got.outer.size() == want.outer.size());
      for (std::size_t v = 0; v < want.outer.size(); ++v) {
        CHECK(got.outer[v].lat == want.outer[v].lat);
        CHECK(got.outer[v].lon == want.outer[v].lon);
      }
      CHECK(got.holes.size() == want.holes.size());
    }
  }

  const auto no_epi = nlohmann::json::parse(export_choropleth(scores, zones, std::nullopt));
  CHECK(no_epi["features"].size() == 2);
}

TEST_CASE("a score with no geometry is an export error") {
  const auto zones = two_zones();
  const std::vector<ZoneScore> scores = {{"99999", ZoneKind::Zip, 5.0, 1, std::nullopt}};
  try {
    export_choropleth(scores, zones, std::nullopt);
    FAIL("expected an export error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Export);
    CHECK(std::string(e.what()).find("99999") != std::string::npos);
  }
}

TEST_CASE("manifest conservation") {
  RunManifest m;
  m.config_digest = "abc";
  m.seed = 7;
  m.model_id = "mock";
  m.prompt_mode = "base";
  m.counts["a"] = {10, 8, 2, 7, 1};
  m.counts["b"] = {5, 5, 0, 5, 0};
  m.started = utc_timestamp();
  m.finished = utc_timestamp();
  CHECK_NOTHROW(check_conservation(m));

  qs_test::TempDir dir("manifest");
  write_manifest(dir / "manifest.json", m);
  const auto j = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
  CHECK(j["counts"]["a"]["fused_rejected"] == 2);
  CHECK(j["seed"] == 7);
  CHECK(j["software_version"] == std::string(software_version()));

  auto bad = m;
  bad.counts["b"].failed = 1;
  try {
    write_manifest(dir / "bad.json", bad);
    FAIL("expected a conservation error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Conservation);
    CHECK(std::string(e.what()).find("b") != std::string::npos);
  }
  CHECK_FALSE(std::filesystem::exists(dir / "bad.json"));

  bad = m;
  bad.counts["a"].requested = 11;
  CHECK_THROWS_AS(check_conservation(bad), Error);
}

TEST_CASE("timestamps are UTC with a Z suffix") {
  const auto t = utc_timestamp();
  CHECK(t.size() == 20);
  CHECK(t.back() == 'Z');
  CHECK(t[10] == 'T');
}

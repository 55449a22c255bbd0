#include <cmath>
#include <random>

#include "doctest.h"
#include "quakesense/error.hpp"
#include "quakesense/evaluation.hpp"
#include "support.hpp"

using namespace quakesense;

namespace {

// Two-pass oracles, written independently of the library code.
double oracle_rmse(const std::vector<ScorePair>& v) {
  long double s = 0;
  for (const auto& [p, t] : v) s += (static_cast<long double>(p) - t) * (static_cast<long double>(p) - t);
  return static_cast<double>(std::sqrt(s / v.size()));
}

double oracle_pearson(const std::vector<ScorePair>& v) {
  long double mx = 0, my = 0;
  for (const auto& [x, y] : v) {
    mx += x;
    my += y;
  }
  mx /= v.size();
  my /= v.size();
  long double sxy = 0, sxx = 0, syy = 0;
  for (const auto& [x, y] : v) {
    sxy += (x - mx) * (y - my);
    sxx += (x - mx) * (x - mx);
    syy += (y - my) * (y - my);
  }
  return static_cast<double>(sxy / std::sqrt(sxx * syy));
}

Prediction pred(const std::string& zone, const std::string& id, int mmi) {
  Prediction p;
  p.zone_id = zone;
  p.sample_id = id;
  p.mmi = MmiLevel::from_value(mmi);
  return p;
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

TEST_CASE("rmse and pearson match two-pass oracles on random vectors") {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(1.0, 12.0);
  std::uniform_int_distribution<int> len(2, 200);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<ScorePair> v(static_cast<std::size_t>(len(rng)));
    for (auto& [p, t] : v) {
      p = u(rng);
      t = u(rng);
    }
    REQUIRE(std::abs(rmse(v) - oracle_rmse(v)) <= 1e-12);
    REQUIRE(std::abs(pearson(v) - oracle_pearson(v)) <= 1e-12);
  }
}

TEST_CASE("metric anchors") {
  const std::vector<ScorePair> a = {{4, 5}, {6, 5}};
  CHECK(rmse(a) == 1.0);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(1.0, 12.0);
  std::vector<double> y(50);
  for (auto& v : y) v = u(rng);
  for (double slope : {0.1, 1.0, 3.7}) {
    std::vector<ScorePair> pairs;
    for (double v : y) pairs.push_back({v, slope * v + 2.5});
    CHECK(std::abs(pearson(pairs) - 1.0) <= 1e-12);
  }
  CHECK(kind_of([] { rmse(std::vector<ScorePair>{}); }) == ErrorKind::Metric);
  CHECK(kind_of([] { pearson(std::vector<ScorePair>{{1, 2}}); }) == ErrorKind::Metric);
  CHECK(kind_of([] { pearson(std::vector<ScorePair>{{1, 2}, {1, 3}}); }) == ErrorKind::UndefinedCorrelation);
  CHECK(kind_of([] { pearson(std::vector<ScorePair>{{1, 2}, {3, 2}}); }) == ErrorKind::UndefinedCorrelation);
}

TEST_CASE("zone aggregation") {
  const std::vector<Prediction> p = {pred("z", "a", 3), pred("z", "b", 4), pred("z", "c", 5), pred("z", "d", 6)};
  const auto s = aggregate_zone(p, "z", ZoneKind::Zip);
  CHECK(s.mean_pred == 4.5);
  CHECK(s.n_effective == 4);
  CHECK(kind_of([] { aggregate_zone(std::vector<Prediction>{}, "z", ZoneKind::Zip); }) == ErrorKind::Aggregation);
  const std::vector<Prediction> mixed = {pred("z", "a", 3), pred("y", "b", 4)};
  CHECK(kind_of([&] { aggregate_zone(mixed, "z", ZoneKind::Zip); }) == ErrorKind::Aggregation);
  const auto all = aggregate_zones(mixed, ZoneKind::Zip);
  REQUIRE(all.size() == 2);
  CHECK(all[0].zone_id == "y");
}

TEST_CASE("county rollup") {
  std::vector<ZoneScore> zips = {{"z1", ZoneKind::Zip, 4.0, 10, std::nullopt},
                                 {"z2", ZoneKind::Zip, 6.0, 30, std::nullopt}};
  const ZipCountyMap map = {{"z1", {"c", "County"}}, {"z2", {"c", "County"}}};
  const auto weighted = county_rollup(zips, map, RollupMode::SampleWeighted);
  REQUIRE(weighted.size() == 1);
  CHECK(weighted[0].mean_pred == 5.5);
  CHECK(weighted[0].n_effective == 40);
  CHECK(county_rollup(zips, map, RollupMode::Unweighted)[0].mean_pred == 5.0);

  const TruthTable truth = {{"z1", {"z1", 3.0, 10}}, {"z2", {"z2", 7.0, 30}}};
  CHECK(*county_rollup(zips, map, RollupMode::SampleWeighted, &truth)[0].truth == 6.0);

  zips.push_back({"z3", ZoneKind::Zip, 2.0, 5, std::nullopt});
  CHECK(kind_of([&] { county_rollup(zips, map); }) == ErrorKind::Mapping);
}

TEST_CASE("evaluate joins truth and lists exclusions") {
  std::vector<Prediction> preds;
  for (int i = 0; i < 4; ++i) {
    preds.push_back(pred("a", "a" + std::to_string(i), 6));
    preds.push_back(pred("b", "b" + std::to_string(i), 4));
    preds.push_back(pred("c", "c" + std::to_string(i), 5));
  }
  preds.push_back(pred("x", "x0", 3));
  const TruthTable truth = {{"a", {"a", 6.5, 10}}, {"b", {"b", 3.5, 20}}, {"c", {"c", 5.0, 5}}, {"t", {"t", 2.0, 1}}};
  const ZipCountyMap map = {{"a", {"c1", "One"}}, {"b", {"c1", "One"}}, {"c", {"c2", "Two"}}, {"x", {"c2", "Two"}}};
  EvalInputs in;
  in.predictions = preds;
  in.zip_truth = &truth;
  in.zip_county = &map;
  in.model_id = "m";
  const auto r = evaluate(in);
  CHECK(r.zip.n_zones == 3);
  CHECK(*r.zip.rmse == doctest::Approx(std::sqrt((0.25 + 0.25 + 0.0) / 3.0)));
  REQUIRE(r.county.has_value());
  CHECK(r.county->n_zones == 2);
  bool x_excluded = false, t_excluded = false;
  for (const auto& e : r.excluded) {
    if (e.zone_id == "x") x_excluded = e.reason == "no_ground_truth";
    if (e.zone_id == "t") t_excluded = e.reason == "no_predictions";
  }
  CHECK(x_excluded);
  CHECK(t_excluded);
  const auto table = format_report_table(r);
  CHECK(table.find("RMSE_Z") != std::string::npos);
  const auto j = to_json(r);
  CHECK(scores_from_json(j["zip_scores"]).size() == r.zip_scores.size());
}

TEST_CASE("DYFI loading") {
  qs_test::TempDir dir("dyfi");
  atomic_write(dir / "ok.csv", "zone_id,cdi,nresp\n92104,3.4,120\n93555,8.1,40\n");
  const auto rows = load_dyfi(dir / "ok.csv", ZoneKind::Zip);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].mean_mmi == 3.4);
  atomic_write(dir / "range.csv", "zone_id,cdi,nresp\n92104,13.4,120\n");
  CHECK(kind_of([&] { load_dyfi(dir / "range.csv", ZoneKind::Zip); }) == ErrorKind::Value);
  atomic_write(dir / "cols.csv", "zip,cdi\n92104,3\n");
  CHECK(kind_of([&] { load_dyfi(dir / "cols.csv", ZoneKind::Zip); }) == ErrorKind::Schema);
  atomic_write(dir / "dup.csv", "zone_id,cdi,nresp\n1,3,1\n1,4,1\n");
  CHECK(kind_of([&] { load_dyfi(dir / "dup.csv", ZoneKind::Zip); }) == ErrorKind::Conflict);
  atomic_write(dir / "bad.csv", "zone_id,cdi,nresp\n1,three,1\n");
  try {
    load_dyfi(dir / "bad.csv", ZoneKind::Zip);
    FAIL("expected a parse error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Parse);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

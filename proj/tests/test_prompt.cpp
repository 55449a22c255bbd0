#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "quakesense/error.hpp"
#include "quakesense/mmi.hpp"
#include "quakesense/prompt.hpp"
#include "support.hpp"

using namespace quakesense;

namespace {

std::size_t count_of(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) ++n;
  return n;
}

std::size_t header_count(const std::string& text) {
  std::size_t n = text.rfind("## ", 0) == 0 ? 1 : 0;
  return n + count_of(text, "\n## ");
}

}  // namespace

TEST_CASE("full render of the fixture is byte-equal to the golden files") {
  const auto x = qs_test::fixture_sample();
  const auto p = render_prompt(x, PromptSpec{}, "m");
  CHECK(p.system_text == read_text_file(qs_test::fixture("golden_system.txt")));
  CHECK(p.user_text == read_text_file(qs_test::fixture("golden_user_base.txt")));
  REQUIRE(p.image.has_value());
  CHECK(p.image_bytes.size() == read_binary_file(qs_test::fixture("street.jpg")).size());

  PromptSpec icl;
  icl.icl_mmi_guide = true;
  const auto q = render_prompt(x, icl, "m");
  CHECK(q.user_text == read_text_file(qs_test::fixture("golden_user_icl.txt")));
}

TEST_CASE("ICL guide carries all twelve descriptors") {
  const auto x = qs_test::fixture_sample();
  PromptSpec spec;
  spec.icl_mmi_guide = true;
  const auto p = render_prompt(x, spec, "m");
  for (int v = 1; v <= 12; ++v) {
    const auto level = MmiLevel::from_value(v);
    CHECK(p.user_text.find(std::string(mmi_description(level))) != std::string::npos);
  }
  CHECK(p.user_text.find("Not felt except by a very few") != std::string::npos);
  CHECK(p.user_text.find("Damage total") != std::string::npos);
  const auto base = render_prompt(x, PromptSpec{}, "m");
  CHECK(base.user_text.find("Damage total") == std::string::npos);
  CHECK(base.user_text.find(std::string(kMmiRangeInstruction)) != std::string::npos);
}

TEST_CASE("ablating a section removes its header and every field") {
  const auto x = qs_test::fixture_sample();
  struct Probe {
    Section section;
    std::vector<std::string> strings;
  };
  const std::vector<Probe> probes = {
      {Section::Geospatial, {"## Geospatial", "VS30 at your location", "417 m/s", "shear-wave"}},
      {Section::Building, {"## Building", "Building description", "general (5)", "school (4)"}},
      {Section::Socioeconomic,
       {"## Community", "- Population density:", "4521.37", "12.45", "78500", "52.30", "Urban population"}},
      {Section::Visual, {"## Visual", "The image provided"}},
  };
  const auto full = render_prompt(x, PromptSpec{}, "m");
  CHECK(header_count(full.user_text) == 4);
  for (const auto& probe : probes) {
    for (const auto& s : probe.strings) REQUIRE(full.user_text.find(s) != std::string::npos);
    PromptSpec spec;
    spec.sections.erase(probe.section);
    const auto p = render_prompt(x, spec, "m");
    for (const auto& s : probe.strings) {
      INFO(to_string(probe.section) << ": " << s);
      CHECK(p.user_text.find(s) == std::string::npos);
    }
    CHECK(header_count(p.user_text) == 3);
    // Earthquake and location stay.
    CHECK(p.user_text.find("- Magnitude: 7.1 mw") != std::string::npos);
    CHECK(p.user_text.find("- Zipcode: 92104") != std::string::npos);
    if (probe.section == Section::Visual) CHECK_FALSE(p.image.has_value());
  }
  // Every subset: header count equals the sections present (image available).
  for (unsigned mask = 0; mask < 16; ++mask) {
    PromptSpec spec;
    spec.sections.clear();
    for (unsigned b = 0; b < 4; ++b)
      if (mask & (1u << b)) spec.sections.insert(kAllSections[b]);
    CHECK(header_count(render_prompt(x, spec, "m").user_text) == spec.sections.size());
  }
}

TEST_CASE("visual section needs an available image") {
  auto x = qs_test::fixture_sample();
  x.image = {ImageStatus::Missing, "", std::nullopt};
  const auto p = render_prompt(x, PromptSpec{}, "m");
  CHECK(p.user_text.find("## Visual") == std::string::npos);
  CHECK_FALSE(p.image.has_value());
  CHECK(p.image_bytes.empty());
}

TEST_CASE("redaction removes city and state everywhere") {
  const auto x = qs_test::fixture_sample();
  PromptSpec spec;
  spec.redact_location = true;
  const auto p = render_prompt(x, spec, "m");
  for (const std::string s : {"San Diego", "California"}) {
    CHECK(p.system_text.find(s) == std::string::npos);
    CHECK(p.user_text.find(s) == std::string::npos);
  }
  CHECK(p.user_text.find("- City: [REDACTED]") != std::string::npos);
  CHECK(p.user_text.find("- Epicenter: [REDACTED]") != std::string::npos);
  CHECK(p.user_text.find("Ridgecrest") == std::string::npos);
  auto lower = x;
  lower.earthquake.place = "near SAN DIEGO, california";
  const auto q = render_prompt(lower, spec, "m");
  CHECK(to_lower(q.user_text).find("san diego") == std::string::npos);
}

TEST_CASE("prompt hash covers text, image and model") {
  const auto x = qs_test::fixture_sample();
  const auto a = render_prompt(x, PromptSpec{}, "m1");
  CHECK(a.prompt_hash == render_prompt(x, PromptSpec{}, "m1").prompt_hash);
  CHECK(a.prompt_hash != render_prompt(x, PromptSpec{}, "m2").prompt_hash);
  PromptSpec noimg;
  noimg.sections.erase(Section::Visual);
  CHECK(a.prompt_hash != render_prompt(x, noimg, "m1").prompt_hash);
}

TEST_CASE("placeholder substitution") {
  CHECK(substitute_placeholders("a {x} {{b}}", {{"x", "1"}}) == "a 1 {b}");
  CHECK_THROWS_AS(substitute_placeholders("{y}", {{"x", "1"}}), Error);
  CHECK_THROWS_AS(substitute_placeholders("{x", {{"x", "1"}}), Error);
}

TEST_CASE("building narrative") {
  BuildingSummary none;
  CHECK(building_narrative(none) == "No buildings recorded within 100 m.");
  const auto x = qs_test::fixture_sample();
  CHECK(building_narrative(x.buildings) ==
        "9 buildings within 100 m. Types: general (5), school (4). Height: 6.00 to 12.50 m, average 8.72 m. "
        "Materials: concrete (60.00%), wood (40.00%).");
}

namespace {

std::vector<BankEntry> random_bank(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  const auto base = qs_test::fixture_sample();
  std::vector<BankEntry> bank;
  for (std::size_t i = 0; i < n; ++i) {
    auto f = base;
    f.sample_id = "bank-" + std::to_string(1000 + i);
    f.location.coords = {32.0 + 3.0 * u(rng), -117.5 + u(rng)};
    f.location.epicentral_distance_km = haversine_km(f.location.coords, f.earthquake.epicenter);
    f.site.vs30 = std::round(150 + 700 * u(rng));
    f.socioeconomics.population_density = 10000 * u(rng);
    f.buildings = {};
    f.buildings.count = 0;
    f.image = {};
    bank.push_back({f, MmiLevel::from_value(1 + static_cast<int>(i % 12))});
  }
  return bank;
}

}  // namespace

TEST_CASE("demonstration retrieval matches a brute-force z-scored kNN") {
  const auto bank = random_bank(60, 3);
  const auto x = qs_test::fixture_sample();
  const std::size_t k = 5;

  // Oracle: features (distance, vs30, log1p density, building count),
  // z-scored with the population sd over the bank.
  std::vector<std::array<double, 4>> v;
  for (const auto& e : bank) {
    const auto& f = e.features;
    v.push_back({f.location.epicentral_distance_km, f.site.vs30, std::log1p(f.socioeconomics.population_density),
                 static_cast<double>(f.buildings.count)});
  }
  std::array<double, 4> mean{}, sd{};
  for (int j = 0; j < 4; ++j) {
    for (const auto& r : v) mean[j] += r[j];
    mean[j] /= v.size();
    for (const auto& r : v) sd[j] += (r[j] - mean[j]) * (r[j] - mean[j]);
    sd[j] = std::sqrt(sd[j] / v.size());
    if (sd[j] == 0) sd[j] = 1;
  }
  const std::array<double, 4> q = {x.location.epicentral_distance_km, x.site.vs30,
                                   std::log1p(x.socioeconomics.population_density),
                                   static_cast<double>(x.buildings.count)};
  std::vector<std::pair<double, std::string>> d;
  for (std::size_t i = 0; i < bank.size(); ++i) {
    double s = 0;
    for (int j = 0; j < 4; ++j) s += std::pow((q[j] - v[i][j]) / sd[j], 2);
    d.push_back({std::sqrt(s), bank[i].features.sample_id});
  }
  std::sort(d.begin(), d.end());

  const auto sel = select_demonstrations(x, bank, k);
  CHECK_FALSE(sel.capped);
  REQUIRE(sel.demos.size() == k);
  for (std::size_t i = 0; i < k; ++i) {
    CHECK(sel.demos[i].sample_id == d[i].second);
    CHECK(sel.demos[i].distance == doctest::Approx(d[i].first).epsilon(1e-9));
  }

  const auto capped = select_demonstrations(x, bank, 100);
  CHECK(capped.capped);
  CHECK(capped.demos.size() == bank.size());
}

TEST_CASE("RAG block lists the retrieved cases before the instructions") {
  const auto bank = random_bank(10, 4);
  const auto x = qs_test::fixture_sample();
  PromptSpec spec;
  spec.rag_k = 3;
  const auto p = render_prompt(x, spec, "m", &bank);
  const auto rag = p.user_text.find("## Reference Cases");
  REQUIRE(rag != std::string::npos);
  CHECK(rag < p.user_text.find("Based on the information provided"));
  CHECK(count_of(p.user_text, "Reported MMI: ") == 3);
  CHECK(header_count(p.user_text) == 5);
  CHECK_THROWS_AS(render_prompt(x, spec, "m", nullptr), Error);

  spec.redact_location = true;
  const auto r = render_prompt(x, spec, "m", &bank);
  CHECK(r.user_text.find("San Diego") == std::string::npos);
  CHECK(r.user_text.find("California") == std::string::npos);
}

TEST_CASE("sections parse by name") {
  CHECK(parse_section("building") == Section::Building);
  CHECK_THROWS_AS(parse_section("weather"), Error);
  CHECK(mmi_scale_text().find("Level XII: Damage total.") != std::string::npos);
  CHECK(count_of(mmi_scale_text(), "\n") == 11);
}

#include "quakesense/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "quakesense/error.hpp"
#include "quakesense/io.hpp"

namespace quakesense {

using nlohmann::json;

std::string_view to_string(Section s) {
  switch (s) {
    case Section::Geospatial: return "geospatial";
    case Section::Building: return "building";
    case Section::Socioeconomic: return "socioeconomic";
    case Section::Visual: return "visual";
  }
  return "?";
}

Section parse_section(std::string_view name) {
  for (Section s : kAllSections) {
    if (to_string(s) == name) return s;
  }
  throw Error(ErrorKind::Config,
              fmt::format("unknown prompt section '{}' (expected geospatial, building, socioeconomic or visual)",
                          name));
}

std::string PromptSpec::summary() const {
  std::vector<std::string> names;
  for (Section s : sections) names.emplace_back(to_string(s));
  std::sort(names.begin(), names.end());
  return fmt::format("sections={} icl={} rag_k={} redact={} date={}", fmt::join(names, ","),
                     icl_mmi_guide ? 1 : 0, rag_k, redact_location ? 1 : 0, assumed_event_date);
}

// ---------------------------------------------------------------------------
// Template text. Concatenating every block in order, without the reference
// cases, reproduces the original template exactly, typos included.

namespace {

constexpr std::string_view kSystemPrompt =
    "\nYou are a seismic expert specialized in earthquake damage assessment and disaster response. "
    "You analyze earthquake data, local conditions, and building characteristics to provide damage "
    "assessments using the Modified Mercalli Intensity (MMI) scale.\n";

constexpr std::string_view kHeadBlock =
    "\nThe earthquake happened date is {event_date}. \n"
    "\n"
    "Here is the EARTHQUAKE information. \n"
    "- Epicenter: {eq_place}\n"
    "- Coordinates: {eq_lat}, {eq_lng}\n"
    "- Magnitude: {eq_magnitude} mw\n"
    "- Depth: {eq_depth} km\n"
    "\n"
    "YOUR LOCATION information is listed below. \n"
    "- State: {state}\n"
    "- City: {city}\n"
    "- Zipcode: {zipcode}\n"
    "- Coordinates: {lat}, {lng}\n"
    "- Distance from epicenter: {distance} km\n"
    "\n";

constexpr std::string_view kGeospatialBlock =
    "## Geospatial features in YOUR LOCATION\n"
    "- VS30 at your location: {vs30} m/s \n"
    "(VS30 represents the time-averaged shear-wave velocity (VS) to a depth of 30 meters, which is a "
    "key index to account for seismic site conditions)\n"
    "\n";

constexpr std::string_view kBuildingBlock =
    "## Building Description in YOUR LOCATION (within a 100-meter radius)\n"
    "- Building description: {building} \n"
    "\n";

constexpr std::string_view kSocioeconomicBlock =
    "## Community Socioecnomics and Demographics in YOUR LOCATION (at Cencus Block Group level)\n"
    "- Population density: {population_density} people per square km\n"
    "- Urban population percentage: {urban_population_pct}%\n"
    "- Over 65 percentage: {over_65_rate}%\n"
    "- Median household income: ${median_household_income}/year\n"
    "- Education (bachelor's or higher): {education}%\n"
    "\n";

constexpr std::string_view kVisualBlock =
    "## Visual Context in YOUR LOCATION\n"
    "The image provided shows your surrounding environment and infrastructure. \n"
    "\n";

constexpr std::string_view kTailBlock =
    "Based on the information provided, ASSESS the potential earthquake damage level using the "
    "Modified Mercalli Intensity (MMI) scale.\n"
    "1. Identify the damage level.\n"
    "2. Explain your reasoning by addressing the following factors and considering the visual "
    "context. \n"
    "   - Distance to the epicenter and earthquake magnitude\n"
    "   - Geospatial features\n"
    "   - Infrastructure quality and building characteristics\n"
    "   - Population density and socioeconomic vulnerabilities\n"
    "   - Visual image of surroundings\n"
    "\n"
    "The following is an abbreviated description of the 12 levels of Modified Mercalli intensity. "
    "{MMI Scale}\n"
    "\n"
    "Output the result in JSON format:\n"
    "{{\n"
    "    \"Reasoning\": \"<Provide reasoning>\"\n"
    "    \"MMI\": \"<Respond MMI level>\",\n"
    "}}\n";

constexpr std::string_view kRedacted = "[REDACTED]";

std::string fixed(double v, int decimals) {
  std::string s = fmt::format("{:.{}f}", v, decimals);
  // "-0.00" reads oddly in a prompt.
  if (s.front() == '-' && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
  return s;
}

// Replaces every case-insensitive occurrence of `needle` with the redaction
// marker.
std::string redact(std::string text, std::string_view needle) {
  if (needle.empty()) return text;
  const std::string lower_needle = to_lower(needle);
  std::string lower = to_lower(text);
  std::size_t pos = lower.find(lower_needle);
  while (pos != std::string::npos) {
    text.replace(pos, needle.size(), kRedacted);
    lower.replace(pos, needle.size(), kRedacted);
    pos = lower.find(lower_needle, pos + kRedacted.size());
  }
  return text;
}

std::string redact_all(std::string text, std::initializer_list<std::string_view> needles) {
  // Longest first so "New York" is handled before "York".
  std::vector<std::string_view> sorted(needles);
  std::sort(sorted.begin(), sorted.end(),
            [](std::string_view a, std::string_view b) { return a.size() > b.size(); });
  for (auto n : sorted) text = redact(std::move(text), n);
  return text;
}

}  // namespace

std::string_view system_prompt_text() { return kSystemPrompt; }

std::string mmi_scale_text() {
  std::string out;
  for (int v = 1; v <= 12; ++v) {
    const MmiLevel level = MmiLevel::from_value(v);
    if (v > 1) out += '\n';
    out += fmt::format("Level {}: {}", level.roman(), mmi_description(level));
  }
  return out;
}

std::string substitute_placeholders(std::string_view tmpl, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(tmpl.size() + 256);
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    const char c = tmpl[i];
    if (c == '{' && i + 1 < tmpl.size() && tmpl[i + 1] == '{') {
      out += '{';
      ++i;
    } else if (c == '}' && i + 1 < tmpl.size() && tmpl[i + 1] == '}') {
      out += '}';
      ++i;
    } else if (c == '{') {
      const auto close = tmpl.find('}', i + 1);
      if (close == std::string_view::npos) {
        throw Error(ErrorKind::Render, fmt::format("unterminated placeholder at offset {}", i));
      }
      const std::string name(tmpl.substr(i + 1, close - i - 1));
      const auto it = values.find(name);
      if (it == values.end()) {
        throw Error(ErrorKind::Render, fmt::format("placeholder {{{}}} has no value", name));
      }
      out += it->second;
      i = close;
    } else {
      out += c;
    }
  }
  return out;
}

std::string building_narrative(const BuildingSummary& b) {
  const std::string radius = fmt::format("{:g}", b.radius_m);
  if (b.count == 0) return fmt::format("No buildings recorded within {} m.", radius);

  std::string out = fmt::format("{} building{} within {} m.", b.count, b.count == 1 ? "" : "s", radius);

  std::vector<std::pair<std::string, std::size_t>> types;
  for (const auto& [t, n] : b.type_distribution) {
    if (t != kUnspecifiedType) types.emplace_back(t, n);
  }
  std::stable_sort(types.begin(), types.end(),
                   [](const auto& a, const auto& c) { return a.second > c.second; });
  if (!types.empty()) {
    std::vector<std::string> parts;
    for (std::size_t i = 0; i < std::min<std::size_t>(3, types.size()); ++i) {
      parts.push_back(fmt::format("{} ({})", types[i].first, types[i].second));
    }
    out += fmt::format(" Types: {}.", fmt::join(parts, ", "));
  }
  if (b.height_min && b.height_max && b.height_avg) {
    out += fmt::format(" Height: {} to {} m, average {} m.", fixed(*b.height_min, 2),
                       fixed(*b.height_max, 2), fixed(*b.height_avg, 2));
  }
  std::vector<std::pair<std::string, double>> materials(b.material_prevalence.begin(),
                                                        b.material_prevalence.end());
  std::stable_sort(materials.begin(), materials.end(),
                   [](const auto& a, const auto& c) { return a.second > c.second; });
  if (!materials.empty()) {
    std::vector<std::string> parts;
    for (std::size_t i = 0; i < std::min<std::size_t>(3, materials.size()); ++i) {
      parts.push_back(fmt::format("{} ({}%)", materials[i].first, fixed(materials[i].second * 100.0, 2)));
    }
    out += fmt::format(" Materials: {}.", fmt::join(parts, ", "));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Demonstrations

std::vector<BankEntry> load_demonstration_bank(const std::filesystem::path& path) {
  std::vector<BankEntry> bank;
  std::size_t n = 0;
  for (const auto& line : read_lines(path)) {
    ++n;
    try {
      const json j = json::parse(line);
      const std::string roman = j.at("mmi").get<std::string>();
      const auto level = MmiLevel::from_roman(roman);
      if (!level) {
        throw Error(ErrorKind::Value,
                    fmt::format("{}: record {}: '{}' is not an MMI level", path.string(), n, roman));
      }
      bank.push_back({j.at("features").get<SampleFeatures>(), *level});
    } catch (const json::exception& e) {
      throw Error(ErrorKind::Parse, fmt::format("{}: record {}: {}", path.string(), n, e.what()));
    }
  }
  return bank;
}

std::string features_digest(const SampleFeatures& x, bool redact_location) {
  const auto& s = x.socioeconomics;
  std::string where = redact_location
                          ? fmt::format("{}, {}", kRedacted, kRedacted)
                          : fmt::format("{}, {}", x.location.city, x.location.state);
  return fmt::format(
      "Magnitude {} mw, depth {} km, distance from epicenter {} km, VS30 {} m/s, location {}. "
      "Buildings: {} Population density {} people per square km, urban {}%, over 65 {}%, median "
      "household income ${}/year, bachelor's or higher {}%.",
      fixed(x.earthquake.magnitude, 1), fixed(x.earthquake.depth_km, 2),
      fixed(x.location.epicentral_distance_km, 2), fixed(x.site.vs30, 0), where,
      building_narrative(x.buildings), fixed(s.population_density, 2), fixed(s.urban_pct, 2),
      fixed(s.over65_pct, 2), fixed(s.median_income, 0), fixed(s.bachelor_pct, 2));
}

std::array<double, 4> retrieval_vector(const SampleFeatures& x) {
  return {x.location.epicentral_distance_km, x.site.vs30,
          std::log1p(x.socioeconomics.population_density), static_cast<double>(x.buildings.count)};
}

DemonstrationSelection select_demonstrations(const SampleFeatures& x, std::span<const BankEntry> bank,
                                             std::size_t k, bool redact_location) {
  DemonstrationSelection out;
  if (k == 0) return out;
  if (bank.empty()) throw Error(ErrorKind::Config, "demonstrations requested but the bank is empty");
  if (k > bank.size()) {
    out.capped = true;
    k = bank.size();
  }

  const std::size_t n = bank.size();
  std::vector<std::array<double, 4>> vecs(n);
  for (std::size_t i = 0; i < n; ++i) vecs[i] = retrieval_vector(bank[i].features);
  std::array<double, 4> mean{}, scale{};
  for (std::size_t f = 0; f < 4; ++f) {
    double m = 0.0;
    for (const auto& v : vecs) m += v[f];
    m /= static_cast<double>(n);
    double var = 0.0;
    for (const auto& v : vecs) var += (v[f] - m) * (v[f] - m);
    const double sd = std::sqrt(var / static_cast<double>(n));
    mean[f] = m;
    scale[f] = sd > 0.0 ? sd : 1.0;
  }
  const auto q = retrieval_vector(x);

  std::vector<std::pair<double, std::size_t>> ranked(n);
  for (std::size_t i = 0; i < n; ++i) {
    double d2 = 0.0;
    for (std::size_t f = 0; f < 4; ++f) {
      const double diff = (q[f] - mean[f]) / scale[f] - (vecs[i][f] - mean[f]) / scale[f];
      d2 += diff * diff;
    }
    ranked[i] = {std::sqrt(d2), i};
  }
  std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return bank[a.second].features.sample_id < bank[b.second].features.sample_id;
  });

  for (std::size_t r = 0; r < k; ++r) {
    const auto& e = bank[ranked[r].second];
    std::string digest = features_digest(e.features, redact_location);
    if (redact_location) {
      digest = redact_all(std::move(digest), {x.location.city, x.location.state});
    }
    out.demos.push_back({e.features.sample_id, std::move(digest), e.mmi, ranked[r].first});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rendering

RenderedPrompt render_prompt(const SampleFeatures& x, const PromptSpec& spec, const std::string& model_id,
                             const std::vector<BankEntry>* bank) {
  const bool redact_on = spec.redact_location;
  const auto& loc = x.location;
  const auto& s = x.socioeconomics;

  // The epicenter place is itself a city / state name ("Ridgecrest, California").
  const std::string place = redact_on ? std::string(kRedacted) : x.earthquake.place;

  const std::map<std::string, std::string> values = {
      {"event_date", spec.assumed_event_date},
      {"eq_place", place},
      {"eq_lat", fixed(x.earthquake.epicenter.lat, 6)},
      {"eq_lng", fixed(x.earthquake.epicenter.lon, 6)},
      {"eq_magnitude", fixed(x.earthquake.magnitude, 1)},
      {"eq_depth", fixed(x.earthquake.depth_km, 2)},
      {"state", redact_on ? std::string(kRedacted) : loc.state},
      {"city", redact_on ? std::string(kRedacted) : loc.city},
      {"zipcode", loc.zipcode},
      {"lat", fixed(loc.coords.lat, 6)},
      {"lng", fixed(loc.coords.lon, 6)},
      {"distance", fixed(loc.epicentral_distance_km, 2)},
      {"vs30", fixed(x.site.vs30, 0)},
      {"building", building_narrative(x.buildings)},
      {"population_density", fixed(s.population_density, 2)},
      {"urban_population_pct", fixed(s.urban_pct, 2)},
      {"over_65_rate", fixed(s.over65_pct, 2)},
      {"median_household_income", fixed(s.median_income, 0)},
      {"education", fixed(s.bachelor_pct, 2)},
      {"MMI Scale", spec.icl_mmi_guide ? "\n" + mmi_scale_text() : std::string(kMmiRangeInstruction)},
  };

  const bool with_image =
      spec.sections.contains(Section::Visual) && x.image.status == ImageStatus::Available;

  std::string user = substitute_placeholders(kHeadBlock, values);
  if (spec.sections.contains(Section::Geospatial)) user += substitute_placeholders(kGeospatialBlock, values);
  if (spec.sections.contains(Section::Building)) user += substitute_placeholders(kBuildingBlock, values);
  if (spec.sections.contains(Section::Socioeconomic)) {
    user += substitute_placeholders(kSocioeconomicBlock, values);
  }
  if (with_image) user += substitute_placeholders(kVisualBlock, values);

  RenderedPrompt out;
  if (spec.rag_k > 0) {
    if (bank == nullptr) {
      throw Error(ErrorKind::Config, "rag_k > 0 requires a demonstration bank");
    }
    const auto sel = select_demonstrations(x, *bank, spec.rag_k, redact_on);
    out.rag_capped = sel.capped;
    user += "## Reference Cases\n";
    user += "Past cases with similar conditions and the MMI reported for them:\n";
    for (std::size_t i = 0; i < sel.demos.size(); ++i) {
      user += fmt::format("- Case {}: {}\n  Reported MMI: {}\n", i + 1, sel.demos[i].features_digest,
                          sel.demos[i].reported_mmi.roman());
    }
    user += "\n";
  }
  user += substitute_placeholders(kTailBlock, values);

  out.system_text = std::string(kSystemPrompt);
  out.user_text = std::move(user);
  if (with_image) {
    out.image = x.image;
    out.image_bytes = read_binary_file(x.image.image_ref);
  }
  const std::string_view image_view(reinterpret_cast<const char*>(out.image_bytes.data()),
                                    out.image_bytes.size());
  out.prompt_hash = sha256_fields({out.system_text, out.user_text, image_view, model_id});
  return out;
}

}  // namespace quakesense

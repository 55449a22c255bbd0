#pragma once

// Rendering of the seismic-expert prompt from a fused feature bundle.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "quakesense/fusion.hpp"
#include "quakesense/mmi.hpp"

namespace quakesense {

// Optional feature sections. Earthquake and location blocks and the
// assessment instructions are always present.
enum class Section { Geospatial, Building, Socioeconomic, Visual };

inline constexpr std::array<Section, 4> kAllSections = {Section::Geospatial, Section::Building,
                                                       Section::Socioeconomic, Section::Visual};

std::string_view to_string(Section s);
// Throws Error(Config) on an unknown name.
Section parse_section(std::string_view name);

struct PromptSpec {
  std::set<Section> sections{kAllSections.begin(), kAllSections.end()};
  bool icl_mmi_guide = false;
  std::size_t rag_k = 0;
  bool redact_location = false;
  std::string assumed_event_date = "2025-06-01";

  // e.g. "sections=building,geospatial,socioeconomic,visual icl=0 rag_k=0 redact=0"
  std::string summary() const;
};

// Twelve lines "Level <roman>: <descriptor>", I through XII.
std::string mmi_scale_text();

// Instruction substituted for the scale when the guide is not embedded.
inline constexpr std::string_view kMmiRangeInstruction =
    "Respond with a single MMI level from I to XII.";

std::string_view system_prompt_text();

// Deterministic narrative used for the building placeholder: count, the three
// most common tagged types, height range and average, and up to three
// materials.
std::string building_narrative(const BuildingSummary& b);

struct BankEntry {
  SampleFeatures features;
  MmiLevel mmi;
};

// JSONL; each line {"features": <SampleFeatures>, "mmi": "VII"}.
std::vector<BankEntry> load_demonstration_bank(const std::filesystem::path& path);

struct Demonstration {
  std::string sample_id;
  std::string features_digest;
  MmiLevel reported_mmi;
  double distance = 0.0;  // in z-score units
};

struct DemonstrationSelection {
  std::vector<Demonstration> demos;
  bool capped = false;  // k exceeded the bank size
};

// One-line text rendering of a sample's E/G/L/B/S fields.
std::string features_digest(const SampleFeatures& x, bool redact_location);

// Vector used for neighbour search: epicentral distance, vs30,
// log(1 + population density), building count.
std::array<double, 4> retrieval_vector(const SampleFeatures& x);

// k nearest bank entries by z-scored Euclidean distance; ties by sample_id.
DemonstrationSelection select_demonstrations(const SampleFeatures& x, std::span<const BankEntry> bank,
                                             std::size_t k, bool redact_location = false);

struct RenderedPrompt {
  std::string system_text;
  std::string user_text;
  std::optional<StreetImage> image;
  std::vector<std::uint8_t> image_bytes;
  std::string prompt_hash;
  bool rag_capped = false;
};

// Throws Error(Render) when a template placeholder has no value, and
// Error(Config) when rag_k > 0 without a bank.
RenderedPrompt render_prompt(const SampleFeatures& x, const PromptSpec& spec,
                             const std::string& model_id,
                             const std::vector<BankEntry>* bank = nullptr);

// Substitutes {name} placeholders; "{{" and "}}" render as single braces.
// Exposed for tests.
std::string substitute_placeholders(std::string_view tmpl,
                                    const std::map<std::string, std::string>& values);

}  // namespace quakesense

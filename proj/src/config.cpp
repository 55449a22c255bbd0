#include "quakesense/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <fmt/format.h>
#include <unistd.h>

#include "quakesense/error.hpp"
#include "quakesense/io.hpp"

namespace quakesense {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json defaults() {
  json sections = json::array();
  for (Section s : kAllSections) sections.push_back(to_string(s));
  const ModelConfig m;
  return {
      {"zones",
       {{"kind", "zip"}, {"city_property", "city"}, {"state_property", "state"}, {"county_property", "county"}}},
      {"sample_plan", {{"points_per_zone", 50}, {"seed", 0}, {"max_rejections_per_point", 10000}}},
      {"data_sources", {{"building_radius_m", 100.0}, {"cbg_id_property", "GEOID"}}},
      {"prompt",
       {{"sections", sections},
        {"icl_mmi_guide", false},
        {"redact_location", false},
        {"assumed_event_date", "2025-06-01"}}},
      {"model",
       {{"model_id", m.model_id},
        {"endpoint", m.endpoint},
        {"api_key_env", m.api_key_env},
        {"temperature", m.temperature},
        {"max_output_tokens", m.max_output_tokens},
        {"max_in_flight", m.max_in_flight},
        {"retry", {{"max_attempts", m.retry.max_attempts}, {"base_backoff_ms", m.retry.base_backoff_ms}}},
        {"timeout_ms", m.timeout_ms}}},
      {"evaluation", {{"county_rollup", "sample_weighted"}}},
      {"analysis", {{"top_k", 15}}},
      {"sweep", json::array()},
  };
}

enum class PathKind { File, Dir, Output };

// Collects every problem instead of stopping at the first.
class Reader {
 public:
  Reader(const json& doc, fs::path base) : doc_(doc), base_(std::move(base)) {}

  std::vector<std::string> problems;

  const json* at(const std::string& dotted) const {
    const json* cur = &doc_;
    std::size_t start = 0;
    while (start <= dotted.size()) {
      const auto dot = dotted.find('.', start);
      const std::string key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (!cur->is_object() || !cur->contains(key)) return nullptr;
      cur = &(*cur)[key];
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    return cur->is_null() ? nullptr : cur;
  }

  void problem(std::string msg) { problems.push_back(std::move(msg)); }

  std::string str(const std::string& key, bool required = true) {
    const json* v = at(key);
    if (v == nullptr) {
      if (required) problem(fmt::format("{}: required", key));
      return {};
    }
    if (!v->is_string()) {
      problem(fmt::format("{}: expected a string", key));
      return {};
    }
    return v->get<std::string>();
  }

  double num(const std::string& key, double lo, double hi) {
    const json* v = at(key);
    if (v == nullptr || !v->is_number()) {
      problem(fmt::format("{}: expected a number", key));
      return lo;
    }
    const double d = v->get<double>();
    if (!(d >= lo && d <= hi)) problem(fmt::format("{}: {} outside [{}, {}]", key, d, lo, hi));
    return d;
  }

  std::uint64_t uint(const std::string& key, std::uint64_t lo) {
    const json* v = at(key);
    if (v == nullptr || !v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() &&
                                                     v->get<long long>() < 0)) {
      problem(fmt::format("{}: expected a non-negative integer", key));
      return lo;
    }
    const auto u = v->get<std::uint64_t>();
    if (u < lo) problem(fmt::format("{}: must be >= {}", key, lo));
    return u;
  }

  bool boolean(const std::string& key) {
    const json* v = at(key);
    if (v == nullptr || !v->is_boolean()) {
      problem(fmt::format("{}: expected true or false", key));
      return false;
    }
    return v->get<bool>();
  }

  fs::path resolve(const std::string& raw) const {
    const fs::path p(raw);
    return p.is_absolute() ? p : (base_ / p).lexically_normal();
  }

  fs::path path(const std::string& key, PathKind kind) {
    const std::string raw = str(key);
    if (raw.empty()) return {};
    return check(key, resolve(raw), kind);
  }

  std::optional<fs::path> opt_path(const std::string& key, PathKind kind) {
    if (at(key) == nullptr) return std::nullopt;
    const std::string raw = str(key);
    if (raw.empty()) return std::nullopt;
    return check(key, resolve(raw), kind);
  }

 private:
  fs::path check(const std::string& key, const fs::path& p, PathKind kind) {
    std::error_code ec;
    switch (kind) {
      case PathKind::File:
        if (!fs::is_regular_file(p, ec)) problem(fmt::format("{}: file not found: {}", key, p.string()));
        break;
      case PathKind::Dir:
        if (!fs::is_directory(p, ec)) problem(fmt::format("{}: directory not found: {}", key, p.string()));
        break;
      case PathKind::Output: {
        fs::create_directories(p, ec);
        if (ec || ::access(p.c_str(), W_OK) != 0) {
          problem(fmt::format("{}: cannot create or write {}", key, p.string()));
        }
        break;
      }
    }
    return p;
  }

  const json& doc_;
  fs::path base_;
};

bool is_secret_name(const std::string& key) {
  const std::string k = to_lower(key);
  return k == "api_key" || k == "apikey" || k == "key" || k == "token" || k == "secret";
}

// Secrets come from the environment only; a literal key in the file is refused.
void find_inline_secrets(const json& j, const std::string& where, std::vector<std::string>& problems) {
  if (!j.is_object()) return;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string path = where.empty() ? it.key() : where + "." + it.key();
    if (is_secret_name(it.key())) {
      problems.push_back(fmt::format("{}: credentials are not read from config files; name an environment "
                                     "variable with api_key_env instead",
                                     path));
    }
    find_inline_secrets(it.value(), path, problems);
  }
}

// Allowed keys. An object lists its children; null is a leaf; "*" accepts
// any child names (perspective keyword lists).
const json& known_keys() {
  static const json k = json::parse(R"({
    "event": null,
    "zones": {"path": null, "kind": null, "id_property": null, "city_property": null, "state_property": null,
              "county_property": null},
    "sample_plan": {"points_per_zone": null, "seed": null, "max_rejections_per_point": null},
    "data_sources": {"vs30": null, "buildings": null, "building_radius_m": null, "cbg": null,
                     "cbg_id_property": null, "acs": null,
                     "images": {"url_template": null, "api_key_env": null, "store_dir": null},
                     "dyfi": null, "dyfi_county": null, "zip_county": null},
    "prompt": {"sections": null, "icl_mmi_guide": null, "rag_k": null, "redact_location": null,
               "assumed_event_date": null},
    "demonstration_bank": null,
    "model": {"model_id": null, "endpoint": null, "api_key_env": null, "temperature": null,
              "max_output_tokens": null, "max_in_flight": null,
              "retry": {"max_attempts": null, "base_backoff_ms": null}, "timeout_ms": null},
    "evaluation": {"county_rollup": null},
    "analysis": {"top_k": null, "stopwords": null, "perspectives": "*"},
    "output_dir": null,
    "cache_dir": null,
    "sweep": null
  })");
  return k;
}

void find_unknown_keys(const json& j, const json& allowed, const std::string& where,
                       std::vector<std::string>& problems) {
  if (!j.is_object() || !allowed.is_object()) return;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string path = where.empty() ? it.key() : where + "." + it.key();
    if (is_secret_name(it.key())) continue;  // reported separately
    if (!allowed.contains(it.key())) {
      problems.push_back(fmt::format("{}: unknown key", path));
      continue;
    }
    find_unknown_keys(it.value(), allowed[it.key()], path, problems);
  }
}

void merge_defaults(json& doc) {
  json merged = defaults();
  merged.merge_patch(doc);
  doc = std::move(merged);
}

RunConfig parse_resolved(const json& doc, const fs::path& base_dir, Reader& r) {
  RunConfig c;
  c.base_dir = base_dir;
  c.resolved = doc;

  c.event = r.path("event", PathKind::File);

  // Zones
  c.zones.path = r.path("zones.path", PathKind::File);
  const std::string kind = r.str("zones.kind");
  try {
    c.zones.kind = parse_zone_kind(kind);
  } catch (const Error& e) {
    r.problem(fmt::format("zones.kind: {}", e.what()));
  }
  c.zones.id_property = r.at("zones.id_property") ? r.str("zones.id_property")
                                                  : std::string(default_id_property(c.zones.kind));
  c.resolved["zones"]["id_property"] = c.zones.id_property;
  c.zones.fields.city_property = r.str("zones.city_property");
  c.zones.fields.state_property = r.str("zones.state_property");
  c.zones.fields.county_property = r.str("zones.county_property");

  // Sampling
  c.sample_plan.points_per_zone = r.uint("sample_plan.points_per_zone", 1);
  c.sample_plan.seed = r.uint("sample_plan.seed", 0);
  c.sample_plan.max_rejections_per_point = r.uint("sample_plan.max_rejections_per_point", 1);

  // Data sources
  auto& d = c.data;
  d.vs30 = r.path("data_sources.vs30", PathKind::File);
  d.buildings = r.path("data_sources.buildings", PathKind::File);
  d.building_radius_m = r.num("data_sources.building_radius_m", 1e-9, 1e6);
  d.cbg = r.path("data_sources.cbg", PathKind::File);
  d.cbg_id_property = r.str("data_sources.cbg_id_property");
  d.acs = r.path("data_sources.acs", PathKind::File);
  if (const json* img = r.at("data_sources.images"); img && img->is_object()) {
    d.images.url_template = r.str("data_sources.images.url_template");
    d.images.api_key_env = r.str("data_sources.images.api_key_env", false);
    d.images.store_dir = r.path("data_sources.images.store_dir", PathKind::Output);
  } else {
    d.images.directory = r.path("data_sources.images", PathKind::Dir);
  }
  d.dyfi = r.path("data_sources.dyfi", PathKind::File);
  d.dyfi_county = r.opt_path("data_sources.dyfi_county", PathKind::File);
  d.zip_county = r.opt_path("data_sources.zip_county", PathKind::File);

  // Prompt
  auto& p = c.prompt;
  p.sections.clear();
  if (const json* secs = r.at("prompt.sections"); secs && secs->is_array()) {
    for (const auto& s : *secs) {
      if (!s.is_string()) {
        r.problem("prompt.sections: entries must be strings");
        continue;
      }
      try {
        p.sections.insert(parse_section(s.get<std::string>()));
      } catch (const Error& e) {
        r.problem(fmt::format("prompt.sections: {}", e.what()));
      }
    }
  } else {
    r.problem("prompt.sections: expected an array");
  }
  p.icl_mmi_guide = r.boolean("prompt.icl_mmi_guide");
  p.redact_location = r.boolean("prompt.redact_location");
  p.assumed_event_date = r.str("prompt.assumed_event_date");
  c.demonstration_bank = r.opt_path("demonstration_bank", PathKind::File);
  if (r.at("prompt.rag_k")) {
    p.rag_k = r.uint("prompt.rag_k", 0);
  } else {
    p.rag_k = c.demonstration_bank ? 3 : 0;
  }
  if (p.rag_k > 0 && !c.demonstration_bank) {
    r.problem("prompt.rag_k: reference cases requested but no demonstration_bank is configured");
  }

  // Model
  auto& m = c.model;
  m.model_id = r.str("model.model_id");
  m.endpoint = r.str("model.endpoint");
  m.api_key_env = r.str("model.api_key_env", false);
  m.temperature = r.num("model.temperature", 0.0, 2.0);
  m.max_output_tokens = static_cast<int>(r.uint("model.max_output_tokens", 1));
  m.max_in_flight = static_cast<int>(r.uint("model.max_in_flight", 1));
  m.retry.max_attempts = static_cast<int>(r.uint("model.retry.max_attempts", 1));
  m.retry.base_backoff_ms = static_cast<int>(r.uint("model.retry.base_backoff_ms", 0));
  m.timeout_ms = static_cast<int>(r.uint("model.timeout_ms", 1));
  if (!m.endpoint.empty() && !is_mock_endpoint(m.endpoint)) {
    if (m.api_key_env.empty()) r.problem("model.api_key_env: required for a non-mock endpoint");
    if (m.endpoint.find("://") == std::string::npos) r.problem("model.endpoint: expected a URL");
  }

  // Evaluation and analysis
  try {
    c.rollup = parse_rollup_mode(r.str("evaluation.county_rollup"));
  } catch (const Error& e) {
    r.problem(fmt::format("evaluation.county_rollup: {}", e.what()));
  }
  c.analysis.top_k = r.uint("analysis.top_k", 1);
  c.analysis.stopwords = r.opt_path("analysis.stopwords", PathKind::File);
  if (const json* ps = r.at("analysis.perspectives")) {
    if (!ps->is_object()) {
      r.problem("analysis.perspectives: expected an object of keyword lists");
    } else {
      c.analysis.perspectives.clear();
      for (auto it = ps->begin(); it != ps->end(); ++it) {
        Perspective persp{it.key(), {}};
        if (!it.value().is_array()) {
          r.problem(fmt::format("analysis.perspectives.{}: expected an array of strings", it.key()));
          continue;
        }
        for (const auto& k : it.value()) {
          if (k.is_string()) persp.keywords.push_back(k.get<std::string>());
          else r.problem(fmt::format("analysis.perspectives.{}: keywords must be strings", it.key()));
        }
        c.analysis.perspectives.push_back(std::move(persp));
      }
    }
  }

  // Outputs
  c.output_dir = r.path("output_dir", PathKind::Output);
  if (r.at("cache_dir")) {
    c.cache_dir = r.path("cache_dir", PathKind::Output);
  } else {
    c.cache_dir = c.output_dir / "cache";
  }

  if (const json* sw = r.at("sweep")) {
    if (!sw->is_array()) {
      r.problem("sweep: expected an array");
    } else {
      std::set<std::string> names;
      for (std::size_t i = 0; i < sw->size(); ++i) {
        const json& e = (*sw)[i];
        const std::string where = fmt::format("sweep[{}]", i);
        if (!e.is_object() || !e.contains("name") || !e["name"].is_string()) {
          r.problem(fmt::format("{}: expected an object with a string name", where));
          continue;
        }
        const std::string name = e["name"].get<std::string>();
        if (name.empty() || name.find_first_not_of("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_.-") !=
                                std::string::npos || name == "." || name == "..") {
          r.problem(fmt::format("{}: name '{}' must be non-empty and use only letters, digits, '_', '.', '-'",
                                where, name));
        }
        if (!names.insert(name).second) r.problem(fmt::format("{}: duplicate name '{}'", where, name));
        for (const char* shared : {"zones", "sample_plan", "data_sources", "event", "output_dir", "sweep"}) {
          if (e.contains(shared)) {
            r.problem(fmt::format("{}: '{}' cannot vary inside a sweep (sampling and fusion are shared)", where,
                                  shared));
          }
        }
      }
      c.sweep = *sw;
    }
  }
  return c;
}

}  // namespace

void apply_overrides(json& doc, const ConfigOverrides& o) {
  if (!doc.is_object()) return;
  json& prompt = doc["prompt"];
  if (!prompt.is_object()) prompt = json::object();
  if (!o.ablate.empty()) {
    std::set<Section> sections;
    if (prompt.contains("sections") && prompt["sections"].is_array()) {
      for (const auto& s : prompt["sections"]) {
        if (s.is_string()) sections.insert(parse_section(s.get<std::string>()));
      }
    } else {
      sections.insert(kAllSections.begin(), kAllSections.end());
    }
    for (const auto& a : o.ablate) sections.erase(parse_section(a));
    json arr = json::array();
    for (Section s : kAllSections) {
      if (sections.contains(s)) arr.push_back(to_string(s));
    }
    prompt["sections"] = arr;
  }
  if (o.redact_location) prompt["redact_location"] = true;
  if (o.icl) prompt["icl_mmi_guide"] = true;
  if (o.rag_k) prompt["rag_k"] = *o.rag_k;
  if (o.seed) {
    if (!doc["sample_plan"].is_object()) doc["sample_plan"] = json::object();
    doc["sample_plan"]["seed"] = *o.seed;
  }
}

RunConfig parse_config(const json& input, const fs::path& base_dir, const std::string& source_name) {
  if (!input.is_object()) throw Error(ErrorKind::Config, fmt::format("{}: config must be a JSON object", source_name));
  json doc = input;
  merge_defaults(doc);
  Reader r(doc, base_dir);
  RunConfig c = parse_resolved(doc, base_dir, r);
  find_inline_secrets(input, "", r.problems);
  find_unknown_keys(input, known_keys(), "", r.problems);

  // Each sweep entry must itself be a valid configuration.
  if (c.sweep.is_array()) {
    for (const auto& e : c.sweep) {
      if (!e.is_object() || !e.contains("name")) continue;
      json variant = doc;
      variant.erase("sweep");
      json patch = e;
      patch.erase("name");
      const std::string label = e["name"].is_string() ? e["name"].get<std::string>() : e["name"].dump();
      find_unknown_keys(patch, known_keys(), fmt::format("sweep '{}'", label), r.problems);
      variant.merge_patch(patch);
      Reader vr(variant, base_dir);
      parse_resolved(variant, base_dir, vr);
      for (const auto& p : vr.problems) {
        r.problems.push_back(fmt::format("sweep '{}': {}", e["name"].get<std::string>(), p));
      }
    }
  }

  if (!r.problems.empty()) {
    std::string msg = fmt::format("{}: {} configuration problem{}:", source_name, r.problems.size(),
                                  r.problems.size() == 1 ? "" : "s");
    for (const auto& p : r.problems) msg += "\n  - " + p;
    throw Error(ErrorKind::Config, msg);
  }
  return c;
}

RunConfig load_config(const fs::path& path, const ConfigOverrides& overrides) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const Error& e) {
    throw Error(ErrorKind::Config, e.what());
  }
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::Config, fmt::format("{}: invalid JSON: {}", path.string(), e.what()));
  }
  try {
    apply_overrides(doc, overrides);
  } catch (const Error& e) {
    throw Error(ErrorKind::Config, e.what());
  }
  const fs::path abs = fs::absolute(path);
  RunConfig c = parse_config(doc, abs.parent_path(), path.string());
  c.source = abs;
  return c;
}

std::string config_digest(const RunConfig& cfg) {
  json j = cfg.resolved;
  j.erase("output_dir");
  j.erase("cache_dir");
  return sha256_hex(j.dump());
}

}  // namespace quakesense

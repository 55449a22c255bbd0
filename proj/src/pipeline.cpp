#include "quakesense/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <ostream>
#include <set>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "quakesense/analysis.hpp"
#include "quakesense/error.hpp"
#include "quakesense/evaluation.hpp"
#include "quakesense/export.hpp"
#include "quakesense/fusion.hpp"
#include "quakesense/geo.hpp"
#include "quakesense/io.hpp"
#include "quakesense/llm_client.hpp"
#include "quakesense/prompt.hpp"

namespace quakesense {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(Step s) {
  switch (s) {
    case Step::Sample: return "sample";
    case Step::Fuse: return "fuse";
    case Step::Simulate: return "simulate";
    case Step::Evaluate: return "evaluate";
    case Step::Analyze: return "analyze";
    case Step::Export: return "export";
  }
  return "?";
}

fs::path step_dir(const RunConfig& cfg, Step s) { return cfg.output_dir / std::string(to_string(s)); }

namespace {

// ---------------------------------------------------------------------------
// Artifact names

fs::path points_csv(const RunConfig& c) { return step_dir(c, Step::Sample) / "points.csv"; }
fs::path points_jsonl(const RunConfig& c) { return step_dir(c, Step::Sample) / "points.jsonl"; }
fs::path features_jsonl(const RunConfig& c) { return step_dir(c, Step::Fuse) / "features.jsonl"; }
fs::path rejected_jsonl(const RunConfig& c) { return step_dir(c, Step::Fuse) / "rejected.jsonl"; }
fs::path predictions_jsonl(const RunConfig& c) { return step_dir(c, Step::Simulate) / "predictions.jsonl"; }
fs::path failures_jsonl(const RunConfig& c) { return step_dir(c, Step::Simulate) / "failures.jsonl"; }
fs::path run_info_json(const RunConfig& c) { return step_dir(c, Step::Simulate) / "run_info.json"; }
fs::path report_json(const RunConfig& c) { return step_dir(c, Step::Evaluate) / "report.json"; }
fs::path report_txt(const RunConfig& c) { return step_dir(c, Step::Evaluate) / "report.txt"; }
fs::path zone_scores_json(const RunConfig& c) { return step_dir(c, Step::Evaluate) / "zone_scores.json"; }
fs::path scatter_csv(const RunConfig& c) { return step_dir(c, Step::Analyze) / "scatter.csv"; }
fs::path terms_csv(const RunConfig& c, const std::string& suffix = {}) {
  return step_dir(c, Step::Analyze) / (suffix.empty() ? "terms_by_mmi.csv" : "terms_by_mmi_" + suffix + ".csv");
}
fs::path notes_txt(const RunConfig& c) { return step_dir(c, Step::Analyze) / "notes.txt"; }
fs::path choropleth_geojson(const RunConfig& c) { return step_dir(c, Step::Export) / "choropleth_zip.geojson"; }
fs::path manifest_json(const RunConfig& c) { return step_dir(c, Step::Export) / "manifest.json"; }
fs::path stamp_path(const RunConfig& c, Step s) { return step_dir(c, s) / "stamp.json"; }

std::vector<fs::path> artifacts(const RunConfig& c, Step s) {
  switch (s) {
    case Step::Sample: return {points_csv(c), points_jsonl(c)};
    case Step::Fuse: return {features_jsonl(c), rejected_jsonl(c)};
    case Step::Simulate: return {predictions_jsonl(c), failures_jsonl(c), run_info_json(c)};
    case Step::Evaluate: return {report_json(c), report_txt(c), zone_scores_json(c)};
    case Step::Analyze: return {terms_csv(c), scatter_csv(c), notes_txt(c)};
    case Step::Export: return {choropleth_geojson(c), manifest_json(c)};
  }
  return {};
}

std::optional<Step> predecessor(Step s) {
  switch (s) {
    case Step::Sample: return std::nullopt;
    case Step::Fuse: return Step::Sample;
    case Step::Simulate: return Step::Fuse;
    case Step::Evaluate: return Step::Simulate;
    case Step::Analyze: return Step::Simulate;
    case Step::Export: return Step::Evaluate;
  }
  return std::nullopt;
}

template <typename T>
std::string to_jsonl(const std::vector<T>& items) {
  std::string out;
  for (const auto& x : items) {
    out += json(x).dump();
    out += '\n';
  }
  return out;
}

void note(const PipelineOptions& o, const std::string& msg) {
  if (o.log) fmt::print(*o.log, "{}\n", msg);
}

// ---------------------------------------------------------------------------
// Stamps

std::string file_hash(const fs::path& p) { return sha256_hex(read_text_file(p)); }

std::string directory_hash(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::string acc;
  for (const auto& f : files) acc += f.filename().string() + ":" + file_hash(f) + "\n";
  return sha256_hex(acc);
}

json section(const RunConfig& c, std::initializer_list<const char*> keys) {
  json j = json::object();
  for (const char* k : keys) {
    if (c.resolved.contains(k)) j[k] = c.resolved[k];
  }
  return j;
}

std::optional<json> read_stamp(const RunConfig& c, Step s) {
  const fs::path p = stamp_path(c, s);
  std::error_code ec;
  if (!fs::is_regular_file(p, ec)) return std::nullopt;
  const json j = json::parse(read_text_file(p), nullptr, false);
  if (j.is_discarded() || !j.contains("key")) return std::nullopt;
  return j;
}

json expected_key(const RunConfig& c, Step s);

// Stamp of the predecessor, which must exist and match the current config.
std::string upstream_hash(const RunConfig& c, Step s) {
  const auto pre = predecessor(s);
  if (!pre) return {};
  const auto stamp = read_stamp(c, *pre);
  if (!stamp) {
    throw Error(ErrorKind::Dependency,
                fmt::format("'{}' needs the output of the '{}' step; run `quakesense {} --config {}` first",
                            to_string(s), to_string(*pre), to_string(*pre), c.source.string()));
  }
  if ((*stamp)["key"] != expected_key(c, *pre)) {
    throw Error(ErrorKind::Dependency,
                fmt::format("'{}' artifacts in {} were built from a different configuration or inputs; rerun "
                            "`quakesense {}` (with the same flags) first",
                            to_string(*pre), step_dir(c, *pre).string(), to_string(*pre)));
  }
  for (const auto& a : artifacts(c, *pre)) {
    if (!fs::exists(a)) {
      throw Error(ErrorKind::Dependency,
                  fmt::format("'{}' artifact {} is missing; rerun `quakesense {}`", to_string(*pre), a.string(),
                              to_string(*pre)));
    }
  }
  return sha256_hex((*stamp)["key"].dump());
}

json expected_key(const RunConfig& c, Step s) {
  json inputs = json::object();
  json cfg;
  const auto& d = c.data;
  switch (s) {
    case Step::Sample:
      cfg = section(c, {"zones", "sample_plan"});
      inputs["zones"] = file_hash(c.zones.path);
      break;
    case Step::Fuse: {
      cfg = section(c, {"event", "zones", "data_sources"});
      cfg["data_sources"].erase("dyfi");
      cfg["data_sources"].erase("dyfi_county");
      inputs["event"] = file_hash(c.event);
      inputs["vs30"] = file_hash(d.vs30);
      inputs["buildings"] = file_hash(d.buildings);
      inputs["cbg"] = file_hash(d.cbg);
      inputs["acs"] = file_hash(d.acs);
      if (d.zip_county) inputs["zip_county"] = file_hash(*d.zip_county);
      if (d.images.directory) inputs["images"] = directory_hash(*d.images.directory);
      break;
    }
    case Step::Simulate:
      cfg = section(c, {"prompt", "model", "demonstration_bank"});
      if (c.demonstration_bank && c.prompt.rag_k > 0) inputs["demonstration_bank"] = file_hash(*c.demonstration_bank);
      break;
    case Step::Evaluate:
      cfg = section(c, {"evaluation"});
      cfg["dyfi"] = c.resolved["data_sources"].value("dyfi", "");
      inputs["dyfi"] = file_hash(d.dyfi);
      if (d.dyfi_county) inputs["dyfi_county"] = file_hash(*d.dyfi_county);
      if (d.zip_county) inputs["zip_county"] = file_hash(*d.zip_county);
      break;
    case Step::Analyze:
      cfg = section(c, {"analysis"});
      if (c.analysis.stopwords) inputs["stopwords"] = file_hash(*c.analysis.stopwords);
      break;
    case Step::Export:
      cfg = json::object();
      break;
  }
  json key = {{"step", to_string(s)}, {"config", sha256_hex(cfg.dump())}, {"inputs", inputs}};
  const auto pre = predecessor(s);
  if (pre) {
    const auto stamp = read_stamp(c, *pre);
    key["upstream"] = stamp ? sha256_hex((*stamp)["key"].dump()) : "";
  }
  return key;
}

// Returns true when the step can be skipped.
bool reusable(const RunConfig& c, Step s, const PipelineOptions& o) {
  if (o.force) return false;
  const auto stamp = read_stamp(c, s);
  if (!stamp || (*stamp)["key"] != expected_key(c, s)) return false;
  for (const auto& a : artifacts(c, s)) {
    if (!fs::exists(a)) return false;
  }
  return true;
}

void write_stamp(const RunConfig& c, Step s) {
  const json j = {{"key", expected_key(c, s)}, {"created", utc_timestamp()}};
  atomic_write(stamp_path(c, s), j.dump(2) + "\n");
}

StepOutcome reused(Step s) { return {s, true, fmt::format("{}: up to date, reused", to_string(s))}; }

// ---------------------------------------------------------------------------
// Shared loaders

std::vector<ZonePolygon> load_config_zones(const RunConfig& c) {
  return load_zones(c.zones.path, c.zones.kind, c.zones.id_property);
}

std::map<std::string, std::size_t> count_by_zone(const std::vector<SampledPoint>& pts) {
  std::map<std::string, std::size_t> m;
  for (const auto& p : pts) ++m[p.zone_id];
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// Steps

StepOutcome cmd_sample(const RunConfig& c, const PipelineOptions& o) {
  const Step s = Step::Sample;
  if (reusable(c, s, o)) return reused(s);
  const auto zones = load_config_zones(c);
  const auto points = sample_zones(zones, c.sample_plan);
  atomic_write(points_csv(c), points_to_csv(points));
  atomic_write(points_jsonl(c), points_to_jsonl(points));
  write_stamp(c, s);
  return {s, false,
          fmt::format("sample: {} points in {} zones -> {}", points.size(), zones.size(), points_csv(c).string())};
}

StepOutcome cmd_fuse(const RunConfig& c, const PipelineOptions& o) {
  const Step s = Step::Fuse;
  upstream_hash(c, s);
  if (reusable(c, s, o)) return reused(s);

  const auto points = load_points_jsonl(points_jsonl(c));
  const auto zones = load_config_zones(c);
  std::map<std::string, const ZonePolygon*> zone_by_id;
  for (const auto& z : zones) zone_by_id.emplace(z.zone_id, &z);

  note(o, "fuse: loading data sources");
  const EarthquakeParams eq = load_event(c.event);
  const Vs30Grid grid = Vs30Grid::load(c.data.vs30);
  const BuildingIndex buildings(load_buildings(c.data.buildings));
  const CbgIndex cbg(load_zones(c.data.cbg, ZoneKind::County, c.data.cbg_id_property));
  const AcsTable acs = load_acs(c.data.acs);
  std::optional<ZipCountyMap> zip_county;
  if (c.data.zip_county) zip_county = load_zip_county(*c.data.zip_county);
  std::unique_ptr<ImageProvider> images;
  if (c.data.images.directory) {
    images = std::make_unique<LocalImageProvider>(*c.data.images.directory);
  } else {
    images = std::make_unique<HttpImageProvider>(c.data.images.url_template, c.data.images.api_key_env,
                                                 c.data.images.store_dir, c.model.retry.max_attempts,
                                                 c.model.retry.base_backoff_ms);
  }

  FusionSources src;
  src.earthquake = eq;
  src.vs30 = &grid;
  src.buildings = &buildings;
  src.cbg = &cbg;
  src.acs = &acs;
  src.images = images.get();
  src.zip_county = zip_county ? &*zip_county : nullptr;
  src.fields = c.zones.fields;
  src.building_radius_m = c.data.building_radius_m;

  std::vector<SampleFeatures> accepted;
  std::vector<Rejection> rejected;
  for (const auto& p : points) {
    const auto it = zone_by_id.find(p.zone_id);
    if (it == zone_by_id.end()) {
      throw Error(ErrorKind::Join, fmt::format("sampled point {} refers to unknown zone {}", p.sample_id, p.zone_id));
    }
    auto outcome = assemble_features(p, *it->second, src);
    if (auto* f = std::get_if<SampleFeatures>(&outcome)) accepted.push_back(std::move(*f));
    else rejected.push_back(std::get<Rejection>(std::move(outcome)));
  }
  atomic_write(features_jsonl(c), to_jsonl(accepted));
  atomic_write(rejected_jsonl(c), to_jsonl(rejected));
  write_stamp(c, s);
  return {s, false, fmt::format("fuse: {} accepted, {} rejected -> {}", accepted.size(), rejected.size(),
                                features_jsonl(c).string())};
}

StepOutcome cmd_simulate(const RunConfig& c, const PipelineOptions& o) {
  const Step s = Step::Simulate;
  upstream_hash(c, s);
  if (reusable(c, s, o)) return reused(s);

  const auto features = load_features_jsonl(features_jsonl(c));
  std::vector<BankEntry> bank;
  if (c.prompt.rag_k > 0) bank = load_demonstration_bank(*c.demonstration_bank);
  const ResponseCache cache(c.cache_dir);
  LlmClient client(c.model, &cache);
  note(o, fmt::format("simulate: {} samples, model {}, {}", features.size(), c.model.model_id, c.prompt.summary()));
  const BatchResult r = run_batch(features, c.prompt, c.prompt.rag_k > 0 ? &bank : nullptr, client);
  note(o, fmt::format("simulate: {} network calls, {} cache hits, peak in flight {}", client.network_calls(),
                      client.cache_hits(), client.peak_in_flight()));

  const json info = {{"model_id", c.model.model_id},
                     {"endpoint", c.model.endpoint},
                     {"temperature", c.model.temperature},
                     {"prompt_mode", c.prompt.summary()},
                     {"rag_capped", r.rag_capped},
                     {"predicted", r.predictions.size()},
                     {"failed", r.failures.size()}};
  atomic_write(predictions_jsonl(c), to_jsonl(r.predictions));
  atomic_write(failures_jsonl(c), to_jsonl(r.failures));
  atomic_write(run_info_json(c), info.dump(2) + "\n");
  write_stamp(c, s);
  return {s, false, fmt::format("simulate: {} predictions, {} failed -> {}", r.predictions.size(),
                                r.failures.size(), predictions_jsonl(c).string())};
}

StepOutcome cmd_evaluate(const RunConfig& c, const PipelineOptions& o) {
  const Step s = Step::Evaluate;
  upstream_hash(c, s);
  if (reusable(c, s, o)) return reused(s);

  const auto preds = load_predictions_jsonl(predictions_jsonl(c));
  const auto truth_rows = load_dyfi(c.data.dyfi, ZoneKind::Zip);
  const TruthTable truth = index_truth(truth_rows);
  std::optional<ZipCountyMap> zip_county;
  if (c.data.zip_county) zip_county = load_zip_county(*c.data.zip_county);
  std::optional<TruthTable> county_truth;
  if (c.data.dyfi_county) {
    const auto rows = load_dyfi(*c.data.dyfi_county, ZoneKind::County);
    county_truth = index_truth(rows);
  }

  EvalInputs in;
  in.predictions = preds;
  in.zip_truth = &truth;
  in.zip_county = zip_county ? &*zip_county : nullptr;
  in.county_truth = county_truth ? &*county_truth : nullptr;
  in.rollup = c.rollup;
  in.model_id = c.model.model_id;
  const EvalReport report = evaluate(in);

  // Every zone with predictions, truth attached where known; the choropleth
  // is drawn from these.
  auto all = aggregate_zones(preds, ZoneKind::Zip);
  for (auto& z : all) {
    const auto it = truth.find(z.zone_id);
    if (it != truth.end()) z.truth = it->second.mean_mmi;
  }

  atomic_write(report_json(c), to_json(report).dump(2) + "\n");
  atomic_write(report_txt(c), format_report_table(report));
  atomic_write(zone_scores_json(c), scores_to_json(all).dump(2) + "\n");
  write_stamp(c, s);
  const auto fmt_opt = [](const std::optional<double>& v) { return v ? fmt::format("{:.3f}", *v) : "n/a"; };
  return {s, false, fmt::format("evaluate: zip RMSE {} r {} over {} zones -> {}", fmt_opt(report.zip.rmse),
                                fmt_opt(report.zip.corr), report.zip.n_zones, report_txt(c).string())};
}

StepOutcome cmd_analyze(const RunConfig& c, const PipelineOptions& o) {
  const Step s = Step::Analyze;
  upstream_hash(c, s);
  if (reusable(c, s, o)) return reused(s);

  const auto preds = load_predictions_jsonl(predictions_jsonl(c));
  const auto features = load_features_jsonl(features_jsonl(c));
  Stopwords stop = c.analysis.stopwords ? load_stopwords(*c.analysis.stopwords) : default_stopwords();

  std::vector<std::string> notes;
  auto terms_for = [&](const std::string& label, const std::vector<std::string>* keywords) {
    TfidfOptions opts;
    opts.top_k = c.analysis.top_k;
    opts.stopwords = &stop;
    opts.keywords = keywords;
    try {
      return terms_to_csv(tfidf_by_mmi(preds, opts));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Analysis) throw;
      notes.push_back(fmt::format("{}: {}", label, e.what()));
      return terms_to_csv({});
    }
  };
  atomic_write(terms_csv(c), terms_for("all reasoning", nullptr));
  for (const auto& p : c.analysis.perspectives) {
    atomic_write(terms_csv(c, p.name), terms_for(fmt::format("perspective {}", p.name), &p.keywords));
  }

  const auto rows = scatter_export(preds, features);
  atomic_write(scatter_csv(c), scatter_to_csv(rows));
  std::vector<std::pair<double, double>> dist, vs30;
  for (const auto& r : rows) {
    dist.emplace_back(r.distance_km, r.mmi_pred);
    vs30.emplace_back(r.vs30_ms, r.mmi_pred);
  }
  auto rank_corr = [&](const char* label, const std::vector<std::pair<double, double>>& pairs) {
    try {
      notes.push_back(fmt::format("spearman({}, mmi_pred) = {:.6f} over {} samples", label, spearman(pairs),
                                  pairs.size()));
    } catch (const Error& e) {
      notes.push_back(fmt::format("spearman({}, mmi_pred) undefined: {}", label, e.what()));
    }
  };
  rank_corr("distance_km", dist);
  rank_corr("vs30_ms", vs30);

  std::string text;
  for (const auto& n : notes) text += n + "\n";
  atomic_write(notes_txt(c), text);
  write_stamp(c, s);
  return {s, false, fmt::format("analyze: {} scatter rows -> {}", rows.size(), step_dir(c, s).string())};
}

namespace {

RunManifest build_manifest(const RunConfig& c, const std::string& status, const std::string& error) {
  RunManifest m;
  m.config_digest = config_digest(c);
  m.seed = c.sample_plan.seed;
  m.model_id = c.model.model_id;
  m.prompt_mode = c.prompt.summary();
  m.finished = utc_timestamp();
  if (const auto st = read_stamp(c, Step::Sample)) m.started = st->value("created", "");

  std::map<std::string, std::size_t> rejected_reasons, failed_reasons;
  if (fs::exists(points_jsonl(c))) {
    for (const auto& [zone, n] : count_by_zone(load_points_jsonl(points_jsonl(c)))) m.counts[zone].requested = n;
  }
  const bool fused = fs::exists(features_jsonl(c)) && fs::exists(rejected_jsonl(c));
  if (fused) {
    for (const auto& f : load_features_jsonl(features_jsonl(c))) ++m.counts[f.zone_id].fused_ok;
    for (const auto& r : load_rejections_jsonl(rejected_jsonl(c))) {
      ++m.counts[r.zone_id].fused_rejected;
      ++rejected_reasons[r.reason];
    }
  } else {
    for (auto& [zone, z] : m.counts) {
      z.fused_rejected = z.requested;
      rejected_reasons["aborted"] += z.requested;
    }
  }
  const bool simulated = fused && fs::exists(predictions_jsonl(c)) && fs::exists(failures_jsonl(c));
  bool rag_capped = false;
  if (simulated) {
    for (const auto& p : load_predictions_jsonl(predictions_jsonl(c))) ++m.counts[p.zone_id].predicted;
    for (const auto& f : load_rejections_jsonl(failures_jsonl(c))) {
      ++m.counts[f.zone_id].failed;
      ++failed_reasons[f.reason];
    }
    if (fs::exists(run_info_json(c))) {
      rag_capped = json::parse(read_text_file(run_info_json(c))).value("rag_capped", false);
    }
  } else {
    for (auto& [zone, z] : m.counts) {
      z.failed = z.fused_ok;
      failed_reasons["aborted"] += z.fused_ok;
    }
  }

  json excluded = json::array();
  if (status == "ok" && fs::exists(report_json(c))) {
    excluded = json::parse(read_text_file(report_json(c))).value("excluded_zones", json::array());
  }
  m.details = {{"status", status},
               {"points_per_zone", c.sample_plan.points_per_zone},
               {"temperature", c.model.temperature},
               {"county_rollup", to_string(c.rollup)},
               {"rag_capped", rag_capped},
               {"fusion_rejections_by_reason", rejected_reasons},
               {"prediction_failures_by_reason", failed_reasons},
               {"excluded_zones", excluded}};
  if (!error.empty()) m.details["error"] = error;
  return m;
}

}  // namespace

StepOutcome cmd_export(const RunConfig& c, const PipelineOptions& o) {
  const Step s = Step::Export;
  upstream_hash(c, s);
  if (reusable(c, s, o)) return reused(s);

  const auto scores = scores_from_json(json::parse(read_text_file(zone_scores_json(c))));
  const auto zones = load_config_zones(c);
  const EarthquakeParams eq = load_event(c.event);
  atomic_write(choropleth_geojson(c), export_choropleth(scores, zones, eq.epicenter));
  write_manifest(manifest_json(c), build_manifest(c, "ok", {}));
  write_stamp(c, s);
  return {s, false, fmt::format("export: {} zones -> {}", scores.size(), choropleth_geojson(c).string())};
}

std::vector<StepOutcome> cmd_run(const RunConfig& c, const PipelineOptions& o) {
  std::vector<StepOutcome> out;
  try {
    for (auto fn : {cmd_sample, cmd_fuse, cmd_simulate, cmd_evaluate, cmd_analyze, cmd_export}) {
      out.push_back(fn(c, o));
      note(o, out.back().summary);
    }
  } catch (const Error& e) {
    try {
      write_manifest(manifest_json(c), build_manifest(c, "failed", e.what()));
    } catch (const std::exception& inner) {
      note(o, fmt::format("could not write failure manifest: {}", inner.what()));
    }
    throw;
  }
  return out;
}

RunConfig sweep_variant(const RunConfig& base, const json& entry) {
  const std::string name = entry.at("name").get<std::string>();
  json doc = base.resolved;
  doc.erase("sweep");
  json patch = entry;
  patch.erase("name");
  doc.merge_patch(patch);
  doc["output_dir"] = (base.output_dir / "sweep" / name).string();
  if (!patch.contains("cache_dir")) doc["cache_dir"] = base.cache_dir.string();
  RunConfig v = parse_config(doc, base.base_dir, fmt::format("{} (sweep '{}')", base.source.string(), name));
  v.source = base.source;
  return v;
}

std::vector<StepOutcome> cmd_sweep(const RunConfig& c, const PipelineOptions& o) {
  if (!c.sweep.is_array() || c.sweep.empty()) {
    throw Error(ErrorKind::Config, "sweep: the config has no sweep entries");
  }
  std::vector<StepOutcome> out;
  out.push_back(cmd_sample(c, o));
  note(o, out.back().summary);
  out.push_back(cmd_fuse(c, o));
  note(o, out.back().summary);

  json summary = json::array();
  std::string table;
  for (const auto& entry : c.sweep) {
    const RunConfig v = sweep_variant(c, entry);
    const std::string name = entry.at("name").get<std::string>();
    fs::create_directories(v.output_dir);
    for (Step shared : {Step::Sample, Step::Fuse}) {
      const fs::path link = step_dir(v, shared);
      const fs::path target = fs::absolute(step_dir(c, shared));
      std::error_code ec;
      if (fs::is_symlink(link, ec)) {
        if (fs::read_symlink(link) == target) continue;
        fs::remove(link);
      } else if (fs::exists(link, ec)) {
        fs::remove_all(link);
      }
      fs::create_directory_symlink(target, link);
    }
    note(o, fmt::format("sweep '{}': {} / {}", name, v.model.model_id, v.prompt.summary()));
    for (auto fn : {cmd_simulate, cmd_evaluate, cmd_analyze, cmd_export}) {
      out.push_back(fn(v, o));
      note(o, out.back().summary);
    }
    const json report = json::parse(read_text_file(report_json(v)));
    summary.push_back({{"name", name},
                       {"model_id", v.model.model_id},
                       {"prompt_mode", v.prompt.summary()},
                       {"zip", report["zip"]},
                       {"county", report["county"]}});
  }

  auto cell = [](const json& level, const char* key) {
    if (!level.is_object() || !level.contains(key) || level[key].is_null()) return std::string("n/a");
    return fmt::format("{:.3f}", level[key].get<double>());
  };
  std::size_t w = 4;
  for (const auto& s : summary) w = std::max(w, s["name"].get<std::string>().size());
  table = fmt::format("{:<{}}  {:>7}  {:>7}  {:>7}  {:>7}  {}\n", "Name", w, "RMSE_Z", "Corr_Z", "RMSE_C",
                      "Corr_C", "Model / prompt");
  for (const auto& s : summary) {
    table += fmt::format("{:<{}}  {:>7}  {:>7}  {:>7}  {:>7}  {} / {}\n", s["name"].get<std::string>(), w,
                         cell(s["zip"], "rmse"), cell(s["zip"], "corr"), cell(s["county"], "rmse"),
                         cell(s["county"], "corr"), s["model_id"].get<std::string>(),
                         s["prompt_mode"].get<std::string>());
  }
  atomic_write(c.output_dir / "sweep" / "summary.json", summary.dump(2) + "\n");
  atomic_write(c.output_dir / "sweep" / "summary.txt", table);
  out.push_back({Step::Export, false, fmt::format("sweep: {} entries -> {}", summary.size(),
                                                  (c.output_dir / "sweep" / "summary.txt").string())});
  return out;
}

}  // namespace quakesense

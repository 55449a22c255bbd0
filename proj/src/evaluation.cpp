#include "quakesense/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "quakesense/error.hpp"
#include "quakesense/io.hpp"

namespace quakesense {

using nlohmann::json;

std::vector<GroundTruth> load_dyfi(const std::filesystem::path& path, ZoneKind kind) {
  const CsvTable t = read_csv(path);
  const auto zc = t.column("zone_id");
  const auto cc = t.column("cdi");
  const auto nc = t.column("nresp");
  for (auto [col, name] : {std::pair{zc, "zone_id"}, std::pair{cc, "cdi"}, std::pair{nc, "nresp"}}) {
    if (!col) throw Error(ErrorKind::Schema, fmt::format("{}: missing column '{}'", path.string(), name));
  }
  std::vector<GroundTruth> out;
  std::set<std::string> seen;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::size_t line = t.line_numbers[r];
    auto field = [&](std::size_t c) { return c < row.size() ? std::string_view(row[c]) : std::string_view{}; };
    const std::string id = trim(field(*zc));
    const auto cdi = parse_double(field(*cc));
    const auto nresp = parse_int(field(*nc));
    if (id.empty() || !cdi || !nresp || *nresp < 0) {
      throw Error(ErrorKind::Parse, fmt::format("{}: line {}: unparseable {} ground-truth row", path.string(),
                                                line, to_string(kind)));
    }
    if (!(*cdi >= 1.0 && *cdi <= 12.0)) {
      throw Error(ErrorKind::Value,
                  fmt::format("{}: line {}: cdi {} outside [1, 12] for zone {}", path.string(), line, *cdi, id));
    }
    if (!seen.insert(id).second) {
      throw Error(ErrorKind::Conflict, fmt::format("{}: line {}: duplicate zone_id '{}'", path.string(), line, id));
    }
    out.push_back({id, *cdi, static_cast<std::size_t>(*nresp)});
  }
  return out;
}

TruthTable index_truth(std::span<const GroundTruth> rows) {
  TruthTable t;
  for (const auto& g : rows) t.emplace(g.zone_id, g);
  return t;
}

ZoneScore aggregate_zone(std::span<const Prediction> preds, const std::string& zone_id, ZoneKind kind) {
  if (preds.empty()) {
    throw Error(ErrorKind::Aggregation, fmt::format("zone {} has no successful predictions", zone_id));
  }
  long long sum = 0;
  for (const auto& p : preds) {
    if (p.zone_id != zone_id) {
      throw Error(ErrorKind::Aggregation,
                  fmt::format("prediction {} belongs to zone {}, not {}", p.sample_id, p.zone_id, zone_id));
    }
    sum += p.mmi.value();
  }
  return {zone_id, kind, static_cast<double>(sum) / static_cast<double>(preds.size()), preds.size(), std::nullopt};
}

std::vector<ZoneScore> aggregate_zones(std::span<const Prediction> preds, ZoneKind kind) {
  std::map<std::string, std::vector<Prediction>> groups;
  for (const auto& p : preds) groups[p.zone_id].push_back(p);
  std::vector<ZoneScore> out;
  out.reserve(groups.size());
  for (const auto& [zone, members] : groups) out.push_back(aggregate_zone(members, zone, kind));
  return out;
}

std::string_view to_string(RollupMode m) {
  return m == RollupMode::SampleWeighted ? "sample_weighted" : "unweighted";
}

RollupMode parse_rollup_mode(std::string_view s) {
  if (s == "sample_weighted") return RollupMode::SampleWeighted;
  if (s == "unweighted") return RollupMode::Unweighted;
  throw Error(ErrorKind::Config,
              fmt::format("unknown county_rollup '{}' (expected sample_weighted or unweighted)", s));
}

std::vector<ZoneScore> county_rollup(std::span<const ZoneScore> zip_scores, const ZipCountyMap& zip_county,
                                     RollupMode mode, const TruthTable* zip_truth) {
  std::map<std::string, std::vector<const ZoneScore*>> members;
  for (const auto& z : zip_scores) {
    const auto it = zip_county.find(z.zone_id);
    if (it == zip_county.end()) {
      throw Error(ErrorKind::Mapping, fmt::format("zip {} has no county mapping", z.zone_id));
    }
    members[it->second.county_id].push_back(&z);
  }
  std::vector<ZoneScore> out;
  for (const auto& [county, zips] : members) {
    ZoneScore c;
    c.zone_id = county;
    c.kind = ZoneKind::County;
    double num = 0.0, den = 0.0;
    for (const auto* z : zips) {
      const double w = mode == RollupMode::SampleWeighted ? static_cast<double>(z->n_effective) : 1.0;
      num += w * z->mean_pred;
      den += w;
      c.n_effective += z->n_effective;
    }
    c.mean_pred = num / den;
    if (zip_truth != nullptr) {
      double tn = 0.0, td = 0.0, plain = 0.0;
      std::size_t k = 0;
      for (const auto* z : zips) {
        const auto it = zip_truth->find(z->zone_id);
        if (it == zip_truth->end()) continue;
        const double w = static_cast<double>(it->second.response_count);
        tn += w * it->second.mean_mmi;
        td += w;
        plain += it->second.mean_mmi;
        ++k;
      }
      if (k > 0) c.truth = td > 0.0 ? tn / td : plain / static_cast<double>(k);
    }
    out.push_back(std::move(c));
  }
  return out;
}

double rmse(std::span<const ScorePair> pairs) {
  if (pairs.empty()) throw Error(ErrorKind::Metric, "rmse of an empty set");
  double sum = 0.0;
  for (const auto& [p, t] : pairs) sum += (p - t) * (p - t);
  return std::sqrt(sum / static_cast<double>(pairs.size()));
}

double pearson(std::span<const ScorePair> pairs) {
  const std::size_t n = pairs.size();
  if (n < 2) throw Error(ErrorKind::Metric, fmt::format("pearson needs at least 2 pairs, got {}", n));
  double mx = 0.0, my = 0.0;
  bool x_const = true, y_const = true;
  for (const auto& [x, y] : pairs) {
    mx += x;
    my += y;
    x_const = x_const && x == pairs[0].first;
    y_const = y_const && y == pairs[0].second;
  }
  if (x_const || y_const) {
    throw Error(ErrorKind::UndefinedCorrelation,
                fmt::format("correlation undefined: {} series is constant", x_const ? "predicted" : "truth"));
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (const auto& [x, y] : pairs) {
    sxy += (x - mx) * (y - my);
    sxx += (x - mx) * (x - mx);
    syy += (y - my) * (y - my);
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

namespace {

LevelMetrics score_level(std::span<const ZoneScore> scores) {
  LevelMetrics m;
  std::vector<ScorePair> pairs;
  for (const auto& s : scores) {
    if (s.truth) pairs.emplace_back(s.mean_pred, *s.truth);
  }
  m.n_zones = pairs.size();
  if (pairs.empty()) {
    m.note = "no zones with both predictions and ground truth";
    return m;
  }
  m.rmse = rmse(pairs);
  try {
    m.corr = pearson(pairs);
  } catch (const Error& e) {
    m.note = e.what();
  }
  return m;
}

void partition(std::vector<ZoneScore>& scores, const TruthTable& truth, ZoneKind kind,
               std::vector<ExcludedZone>& excluded) {
  std::set<std::string> predicted;
  std::vector<ZoneScore> joined;
  for (auto& s : scores) {
    predicted.insert(s.zone_id);
    const auto it = truth.find(s.zone_id);
    if (it == truth.end()) {
      excluded.push_back({s.zone_id, kind, "no_ground_truth"});
      continue;
    }
    s.truth = it->second.mean_mmi;
    joined.push_back(s);
  }
  for (const auto& [id, g] : truth) {
    if (!predicted.contains(id)) excluded.push_back({id, kind, "no_predictions"});
  }
  scores = std::move(joined);
}

json metrics_json(const LevelMetrics& m) {
  json j = {{"n_zones", m.n_zones}, {"rmse", nullptr}, {"corr", nullptr}};
  if (m.rmse) j["rmse"] = *m.rmse;
  if (m.corr) j["corr"] = *m.corr;
  if (!m.note.empty()) j["note"] = m.note;
  return j;
}

}  // namespace

json scores_to_json(std::span<const ZoneScore> scores) {
  json arr = json::array();
  for (const auto& s : scores) {
    json j = {{"zone_id", s.zone_id}, {"kind", to_string(s.kind)}, {"mean_pred", s.mean_pred},
              {"n_effective", s.n_effective}};
    if (s.truth) j["truth"] = *s.truth;
    arr.push_back(std::move(j));
  }
  return arr;
}

std::vector<ZoneScore> scores_from_json(const json& j) {
  std::vector<ZoneScore> out;
  for (const auto& e : j) {
    ZoneScore s;
    s.zone_id = e.at("zone_id").get<std::string>();
    s.kind = parse_zone_kind(e.at("kind").get<std::string>());
    s.mean_pred = e.at("mean_pred").get<double>();
    s.n_effective = e.at("n_effective").get<std::size_t>();
    if (e.contains("truth")) s.truth = e["truth"].get<double>();
    out.push_back(std::move(s));
  }
  return out;
}

EvalReport evaluate(const EvalInputs& in) {
  if (in.zip_truth == nullptr) throw Error(ErrorKind::Config, "evaluation needs zip-level ground truth");
  EvalReport r;
  r.model_id = in.model_id;
  r.rollup = in.rollup;

  std::vector<ZoneScore> all_zip = aggregate_zones(in.predictions, ZoneKind::Zip);
  r.zip_scores = all_zip;
  partition(r.zip_scores, *in.zip_truth, ZoneKind::Zip, r.excluded);
  r.zip = score_level(r.zip_scores);

  if (in.zip_county != nullptr) {
    for (auto& s : all_zip) s.truth.reset();
    std::vector<ZoneScore> counties = county_rollup(all_zip, *in.zip_county, in.rollup, in.zip_truth);
    TruthTable derived;
    if (in.county_truth == nullptr) {
      for (const auto& c : counties) {
        if (c.truth) derived.emplace(c.zone_id, GroundTruth{c.zone_id, *c.truth, 0});
      }
    }
    for (auto& c : counties) c.truth.reset();
    partition(counties, in.county_truth != nullptr ? *in.county_truth : derived, ZoneKind::County, r.excluded);
    r.county_scores = std::move(counties);
    r.county = score_level(r.county_scores);
  }
  return r;
}

json to_json(const EvalReport& r) {
  json excluded = json::array();
  for (const auto& e : r.excluded) {
    excluded.push_back({{"zone_id", e.zone_id}, {"kind", to_string(e.kind)}, {"reason", e.reason}});
  }
  json j = {{"model_id", r.model_id},
            {"county_rollup", to_string(r.rollup)},
            {"zip", metrics_json(r.zip)},
            {"county", r.county ? metrics_json(*r.county) : json(nullptr)},
            {"zip_scores", scores_to_json(r.zip_scores)},
            {"county_scores", scores_to_json(r.county_scores)},
            {"excluded_zones", excluded}};
  return j;
}

std::string format_report_table(const EvalReport& r) {
  auto cell = [](const std::optional<double>& v) { return v ? fmt::format("{:.3f}", *v) : std::string("n/a"); };
  const auto& c = r.county;
  const std::string model = r.model_id.empty() ? std::string("model") : r.model_id;
  const std::size_t w = std::max<std::size_t>(5, model.size());
  std::string out = fmt::format("{:<{}}  {:>7}  {:>7}  {:>7}  {:>7}\n", "Model", w, "RMSE_Z", "Corr_Z", "RMSE_C",
                                "Corr_C");
  out += fmt::format("{:<{}}  {:>7}  {:>7}  {:>7}  {:>7}\n", model, w, cell(r.zip.rmse), cell(r.zip.corr),
                     cell(c ? c->rmse : std::nullopt), cell(c ? c->corr : std::nullopt));
  out += fmt::format("\nzip zones scored: {}\n", r.zip.n_zones);
  if (c) out += fmt::format("county zones scored: {} ({})\n", c->n_zones, to_string(r.rollup));
  out += fmt::format("excluded zones: {}\n", r.excluded.size());
  return out;
}

}  // namespace quakesense

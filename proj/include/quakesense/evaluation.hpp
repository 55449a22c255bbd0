#pragma once

// Zone aggregation of predicted intensity and scoring against DYFI ground
// truth at zip-code and county level.

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "quakesense/geo.hpp"
#include "quakesense/llm_client.hpp"

namespace quakesense {

struct GroundTruth {
  std::string zone_id;
  double mean_mmi = 0.0;  // CDI
  std::size_t response_count = 0;
};

using TruthTable = std::map<std::string, GroundTruth>;

// CSV with columns zone_id, cdi, nresp. Rows with cdi outside [1, 12] are
// rejected with their line number; duplicate zone ids are a conflict.
std::vector<GroundTruth> load_dyfi(const std::filesystem::path& path, ZoneKind kind);
TruthTable index_truth(std::span<const GroundTruth> rows);

struct ZoneScore {
  std::string zone_id;
  ZoneKind kind = ZoneKind::Zip;
  double mean_pred = 0.0;
  std::size_t n_effective = 0;
  std::optional<double> truth;
};

// Mean of the integer MMI values. Throws Error(Aggregation) when `preds` is
// empty or contains another zone's prediction.
ZoneScore aggregate_zone(std::span<const Prediction> preds, const std::string& zone_id, ZoneKind kind);

// One score per zone present in `preds`, sorted by zone id.
std::vector<ZoneScore> aggregate_zones(std::span<const Prediction> preds, ZoneKind kind);

enum class RollupMode { SampleWeighted, Unweighted };
std::string_view to_string(RollupMode m);
RollupMode parse_rollup_mode(std::string_view s);

// County means from zip scores. Sample-weighted mode weights each zip by
// n_effective; unweighted mode averages zip means. County truth, when
// `zip_truth` is given, is the response-count-weighted mean of member-zip
// CDI values. Throws Error(Mapping) naming an unmapped zip.
std::vector<ZoneScore> county_rollup(std::span<const ZoneScore> zip_scores, const ZipCountyMap& zip_county,
                                     RollupMode mode = RollupMode::SampleWeighted,
                                     const TruthTable* zip_truth = nullptr);

using ScorePair = std::pair<double, double>;  // (predicted mean, truth)

// Throws Error(Metric) on empty input.
double rmse(std::span<const ScorePair> pairs);
// Throws Error(Metric) for N < 2 and Error(UndefinedCorrelation) when either
// series is constant. Clamped to [-1, 1].
double pearson(std::span<const ScorePair> pairs);

struct ExcludedZone {
  std::string zone_id;
  ZoneKind kind = ZoneKind::Zip;
  std::string reason;  // no_ground_truth | no_predictions
};

struct LevelMetrics {
  std::size_t n_zones = 0;
  std::optional<double> rmse;
  std::optional<double> corr;
  std::string note;  // why a metric is absent
};

struct EvalReport {
  std::string model_id;
  RollupMode rollup = RollupMode::SampleWeighted;
  LevelMetrics zip;
  std::optional<LevelMetrics> county;
  std::vector<ZoneScore> zip_scores;
  std::vector<ZoneScore> county_scores;
  std::vector<ExcludedZone> excluded;
};

struct EvalInputs {
  std::span<const Prediction> predictions;
  const TruthTable* zip_truth = nullptr;
  const ZipCountyMap* zip_county = nullptr;    // county level skipped when null
  const TruthTable* county_truth = nullptr;    // overrides the zip-derived county truth
  RollupMode rollup = RollupMode::SampleWeighted;
  std::string model_id;
};

// Scores only zones present in both predictions and truth; every other zone
// of either side is listed in `excluded`.
EvalReport evaluate(const EvalInputs& in);

nlohmann::json to_json(const EvalReport& r);
nlohmann::json scores_to_json(std::span<const ZoneScore> scores);
std::vector<ZoneScore> scores_from_json(const nlohmann::json& j);
// Aligned plain-text table: Model, RMSE_Z, Corr_Z, RMSE_C, Corr_C.
std::string format_report_table(const EvalReport& r);

}  // namespace quakesense

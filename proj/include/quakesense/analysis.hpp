#pragma once

// Post-hoc analysis of model reasoning: unigram TF-IDF per predicted level
// and distance / VS30 scatter rows.

#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "quakesense/fusion.hpp"
#include "quakesense/llm_client.hpp"
#include "quakesense/mmi.hpp"

namespace quakesense {

using Stopwords = std::set<std::string, std::less<>>;

// The list shipped in data/stopwords.txt, compiled in.
const Stopwords& default_stopwords();
// One token per line; blank lines and lines starting with '#' are ignored.
Stopwords load_stopwords(const std::filesystem::path& path);

// Lowercase, split on anything that is not an ASCII letter or digit, drop
// tokens shorter than 3 characters and stopwords.
std::vector<std::string> tokenize(std::string_view text, const Stopwords& stopwords);

// Sentences end at '.', '!' or '?' followed by whitespace or end of text.
std::vector<std::string> split_sentences(std::string_view text);

// A sentence counts toward a perspective when its lowercase text contains
// any of the keywords.
struct Perspective {
  std::string name;
  std::vector<std::string> keywords;
};

std::vector<Perspective> default_perspectives();

// Sentences of `text` attributed to the keyword set, joined with spaces.
std::string filter_sentences(std::string_view text, std::span<const std::string> keywords);

struct LevelDocument {
  MmiLevel level;
  std::map<std::string, std::size_t> counts;
  std::size_t length = 0;  // tokens after filtering
};

// One pooled document per predicted level that has at least one token.
std::vector<LevelDocument> build_level_documents(std::span<const Prediction> preds, const Stopwords& stopwords,
                                                 const std::vector<std::string>* keywords = nullptr);

struct TermScore {
  MmiLevel mmi_level;
  std::size_t rank = 0;  // 1-based within the level
  std::string term;
  double tf = 0.0;
  double idf = 0.0;
  double log_tfidf = 0.0;
};

struct TfidfOptions {
  std::size_t top_k = 15;
  const Stopwords* stopwords = nullptr;             // default list when null
  const std::vector<std::string>* keywords = nullptr;  // sentence filter
};

// idf = ln(D / df); terms present in every level document have idf 0 and
// are left out. Per level, the top_k terms by log(tf * idf) descending, then
// term ascending. Throws Error(Analysis) with fewer than two level documents.
std::vector<TermScore> tfidf_by_mmi(std::span<const Prediction> preds, const TfidfOptions& opts = {});

// Header: level,rank,term,tf,idf,log_tfidf
std::string terms_to_csv(std::span<const TermScore> terms);

struct ScatterRow {
  std::string sample_id;
  std::string zone_id;
  int mmi_pred = 0;
  double distance_km = 0.0;
  double vs30_ms = 0.0;
};

// One row per prediction, ordered by (zone_id, sample_id). Throws
// Error(Join) naming a prediction whose sample has no features.
std::vector<ScatterRow> scatter_export(std::span<const Prediction> preds, std::span<const SampleFeatures> features);

// Header: sample_id,mmi_pred,distance_km,vs30_ms
std::string scatter_to_csv(std::span<const ScatterRow> rows);

// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const std::pair<double, double>> pairs);

}  // namespace quakesense

#include "quakesense/analysis.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "quakesense/error.hpp"
#include "quakesense/evaluation.hpp"
#include "quakesense/io.hpp"

namespace quakesense {

namespace detail {
extern const std::string_view kDefaultStopwords;
}

namespace {

Stopwords parse_stopwords(std::string_view text) {
  Stopwords out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    const std::string w = to_lower(trim(line));
    if (!w.empty() && w[0] != '#') out.insert(w);
  }
  return out;
}

}  // namespace

const Stopwords& default_stopwords() {
  static const Stopwords words = parse_stopwords(detail::kDefaultStopwords);
  return words;
}

Stopwords load_stopwords(const std::filesystem::path& path) { return parse_stopwords(read_text_file(path)); }

std::vector<std::string> tokenize(std::string_view text, const Stopwords& stopwords) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (cur.size() >= 3 && !stopwords.contains(cur)) out.push_back(cur);
    cur.clear();
  };
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (u < 0x80 && std::isalnum(u)) cur += static_cast<char>(std::tolower(u));
    else flush();
  }
  flush();
  return out;
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if ((c == '.' || c == '!' || c == '?') &&
        (i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1])))) {
      std::string s = trim(text.substr(start, i + 1 - start));
      if (!s.empty()) out.push_back(std::move(s));
      start = i + 1;
    }
  }
  std::string tail = trim(text.substr(std::min(start, text.size())));
  if (!tail.empty()) out.push_back(std::move(tail));
  return out;
}

std::vector<Perspective> default_perspectives() {
  return {
      {"building",
       {"building", "structure", "construction", "masonry", "wood", "concrete", "chimney", "foundation",
        "height", "storey", "story", "seismic code", "furniture", "plaster", "wall"}},
      {"socioeconomic",
       {"population", "density", "income", "socioeconomic", "education", "educated", "affluent",
        "vulnerab", "elderly", "over 65", "community", "urban", "resident"}},
      {"visual",
       {"image", "visual", "street", "view", "visible", "photo", "appear", "surrounding", "road",
        "vegetation"}},
  };
}

std::string filter_sentences(std::string_view text, std::span<const std::string> keywords) {
  std::string out;
  for (const auto& s : split_sentences(text)) {
    const std::string lower = to_lower(s);
    const bool hit = std::any_of(keywords.begin(), keywords.end(), [&](const std::string& k) {
      return !k.empty() && lower.find(to_lower(k)) != std::string::npos;
    });
    if (!hit) continue;
    if (!out.empty()) out += ' ';
    out += s;
  }
  return out;
}

std::vector<LevelDocument> build_level_documents(std::span<const Prediction> preds, const Stopwords& stopwords,
                                                 const std::vector<std::string>* keywords) {
  std::map<int, LevelDocument> docs;
  for (const auto& p : preds) {
    const std::string text = keywords ? filter_sentences(p.reasoning, *keywords) : p.reasoning;
    const auto tokens = tokenize(text, stopwords);
    if (tokens.empty()) continue;
    auto [it, inserted] = docs.try_emplace(p.mmi.value(), LevelDocument{p.mmi, {}, 0});
    for (const auto& t : tokens) ++it->second.counts[t];
    it->second.length += tokens.size();
  }
  std::vector<LevelDocument> out;
  for (auto& [v, d] : docs) out.push_back(std::move(d));
  return out;
}

std::vector<TermScore> tfidf_by_mmi(std::span<const Prediction> preds, const TfidfOptions& opts) {
  const Stopwords& stop = opts.stopwords ? *opts.stopwords : default_stopwords();
  const auto docs = build_level_documents(preds, stop, opts.keywords);
  if (docs.size() < 2) {
    throw Error(ErrorKind::Analysis,
                fmt::format("TF-IDF needs at least 2 predicted MMI levels with text, found {}", docs.size()));
  }
  std::map<std::string, std::size_t> df;
  for (const auto& d : docs) {
    for (const auto& [term, n] : d.counts) ++df[term];
  }
  const double D = static_cast<double>(docs.size());

  std::vector<TermScore> out;
  for (const auto& d : docs) {
    std::vector<TermScore> level;
    for (const auto& [term, n] : d.counts) {
      const double idf = std::log(D / static_cast<double>(df[term]));
      const double tf = static_cast<double>(n) / static_cast<double>(d.length);
      if (!(tf * idf > 0.0)) continue;
      level.push_back({d.level, 0, term, tf, idf, std::log(tf * idf)});
    }
    std::sort(level.begin(), level.end(), [](const TermScore& a, const TermScore& b) {
      if (a.log_tfidf != b.log_tfidf) return a.log_tfidf > b.log_tfidf;
      return a.term < b.term;
    });
    if (level.size() > opts.top_k) level.erase(level.begin() + static_cast<std::ptrdiff_t>(opts.top_k), level.end());
    for (std::size_t i = 0; i < level.size(); ++i) level[i].rank = i + 1;
    out.insert(out.end(), level.begin(), level.end());
  }
  return out;
}

std::string terms_to_csv(std::span<const TermScore> terms) {
  std::string out = "level,rank,term,tf,idf,log_tfidf\n";
  for (const auto& t : terms) {
    out += fmt::format("{},{},{},{},{},{}\n", t.mmi_level.roman(), t.rank, csv_escape(t.term), t.tf, t.idf,
                       t.log_tfidf);
  }
  return out;
}

std::vector<ScatterRow> scatter_export(std::span<const Prediction> preds, std::span<const SampleFeatures> features) {
  std::map<std::string, const SampleFeatures*> by_id;
  for (const auto& f : features) by_id.emplace(f.sample_id, &f);
  std::vector<ScatterRow> rows;
  rows.reserve(preds.size());
  for (const auto& p : preds) {
    const auto it = by_id.find(p.sample_id);
    if (it == by_id.end()) {
      throw Error(ErrorKind::Join, fmt::format("prediction {} has no fused features", p.sample_id));
    }
    rows.push_back({p.sample_id, p.zone_id, p.mmi.value(), it->second->location.epicentral_distance_km,
                    it->second->site.vs30});
  }
  std::sort(rows.begin(), rows.end(), [](const ScatterRow& a, const ScatterRow& b) {
    return std::tie(a.zone_id, a.sample_id) < std::tie(b.zone_id, b.sample_id);
  });
  return rows;
}

std::string scatter_to_csv(std::span<const ScatterRow> rows) {
  std::string out = "sample_id,mmi_pred,distance_km,vs30_ms\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{}\n", csv_escape(r.sample_id), r.mmi_pred, r.distance_km, r.vs30_ms);
  }
  return out;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const std::pair<double, double>> pairs) {
  std::vector<double> xs, ys;
  for (const auto& [x, y] : pairs) {
    xs.push_back(x);
    ys.push_back(y);
  }
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  std::vector<ScorePair> ranked;
  for (std::size_t i = 0; i < rx.size(); ++i) ranked.emplace_back(rx[i], ry[i]);
  return pearson(ranked);
}

}  // namespace quakesense

#pragma once

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "corpuskit/corpus_io.hpp"
#include "corpuskit/errors.hpp"
#include "corpuskit/shardstore.hpp"

namespace corpuskit::stats {

struct DistributionRow {
  std::string source;
  double tokens = 0.0;
  double fraction = 0.0;
};

struct TokenStats {
  std::vector<DistributionRow> rows;  // descending by tokens
  double total = 0.0;
  std::vector<std::pair<std::string, std::uint64_t>> dropped;  // per source, not part of `total`
  std::uint64_t dropped_total = 0;
};

inline TokenStats distribution(const SourceManifest& sources) {
  if (sources.entries.empty()) throw EmptyInput("no sources");
  std::map<std::string, double> merged;
  for (const auto& [label, count] : sources.entries) merged[label] += count;

  TokenStats out;
  out.total = sources.total;
  for (const auto& [label, count] : merged)
    out.rows.push_back({label, count, out.total > 0.0 ? count / out.total : 0.0});
  std::stable_sort(out.rows.begin(), out.rows.end(),
                   [](const DistributionRow& a, const DistributionRow& b) { return a.tokens > b.tokens; });
  return out;
}

// Token counts are what training would consume: samples x context length.
// Tail tokens dropped during packing are listed separately.
inline TokenStats token_stats(const std::vector<std::pair<std::string, shard::ShardManifest>>& manifests,
                              const std::map<std::string, std::uint64_t>& dropped = {}) {
  if (manifests.empty()) throw EmptyInput("no manifests");
  std::vector<std::pair<std::string, double>> entries;
  std::map<std::string, std::uint64_t> tails;
  for (const auto& [label, m] : manifests) {
    entries.emplace_back(label, static_cast<double>(m.total_tokens()));
    tails[label] += m.dropped_tail();
  }
  for (const auto& [label, n] : dropped) tails[label] = n;

  TokenStats out = distribution(SourceManifest::from_entries(std::move(entries)));
  for (const auto& [label, n] : tails) {
    out.dropped.emplace_back(label, n);
    out.dropped_total += n;
  }
  return out;
}

inline std::string render_table(const TokenStats& s) {
  std::size_t width = 6;
  for (const auto& r : s.rows) width = std::max(width, r.source.size());
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %20s %10s\n", static_cast<int>(width), "source", "tokens", "fraction");
  out += buf;
  for (const auto& r : s.rows) {
    std::snprintf(buf, sizeof buf, "%-*s %20.10g %10.4f\n", static_cast<int>(width), r.source.c_str(), r.tokens,
                  r.fraction);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "%-*s %20.10g %10.4f\n", static_cast<int>(width), "total", s.total, 1.0);
  out += buf;
  if (s.dropped_total > 0 || !s.dropped.empty()) {
    std::snprintf(buf, sizeof buf, "* %llu tail tokens dropped during packing (not counted above)\n",
                  static_cast<unsigned long long>(s.dropped_total));
    out += buf;
  }
  return out;
}

inline nlohmann::ordered_json to_json(const TokenStats& s) {
  nlohmann::ordered_json j;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : s.rows) j["rows"].push_back({{"source", r.source}, {"tokens", r.tokens}, {"fraction", r.fraction}});
  j["total_tokens"] = s.total;
  j["dropped_tail"] = nlohmann::ordered_json::object();
  for (const auto& [label, n] : s.dropped) j["dropped_tail"][label] = n;
  j["dropped_tail_total"] = s.dropped_total;
  return j;
}

}  // namespace corpuskit::stats

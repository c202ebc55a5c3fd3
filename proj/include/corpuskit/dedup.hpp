#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "corpuskit/corpus_io.hpp"
#include "corpuskit/errors.hpp"
#include "corpuskit/hashing.hpp"
#include "corpuskit/parallel.hpp"
#include "corpuskit/utf8.hpp"

namespace corpuskit::dedup {

struct DedupConfig {
  std::size_t num_perm = 256;
  double threshold = 0.95;
  unsigned hash_bits = 64;
  std::uint64_t seed = 42;
  std::size_t shingle_n = 5;

  void validate() const {
    if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("threshold must lie in (0, 1)");
    if (num_perm < 16) throw std::invalid_argument("num_perm must be at least 16");
    if (hash_bits != 32 && hash_bits != 64) throw std::invalid_argument("hash_bits must be 32 or 64");
    if (shingle_n == 0) throw std::invalid_argument("shingle_n must be positive");
  }
};

using ShingleSet = std::vector<std::uint64_t>;  // sorted, unique

// Word n-gram shingles of the NFC-lowercased text, each hashed with sha1.
// Texts shorter than n words become a single shingle of the whole
// (space-joined) text.
inline ShingleSet shingle(std::string_view text, std::size_t n) {
  if (n == 0) throw std::invalid_argument("shingle size must be positive");
  const std::string norm = utf8::nfc_lower(text);

  std::vector<std::string_view> words;
  std::size_t i = 0;
  while (i < norm.size()) {
    const std::size_t ws = utf8::whitespace_len_at(norm, i);
    if (ws) {
      i += ws;
      continue;
    }
    const std::size_t start = i;
    while (i < norm.size() && !utf8::whitespace_len_at(norm, i)) i += utf8::char_len_at(norm, i);
    words.emplace_back(norm.data() + start, i - start);
  }
  if (words.empty()) return {};

  const auto join = [&](std::size_t from, std::size_t count) {
    std::string s(words[from]);
    for (std::size_t k = 1; k < count; ++k) {
      s.push_back(' ');
      s.append(words[from + k]);
    }
    return s;
  };

  ShingleSet out;
  if (words.size() < n) {
    out.push_back(sha1_low64(join(0, words.size())));
    return out;
  }
  out.reserve(words.size() - n + 1);
  for (std::size_t w = 0; w + n <= words.size(); ++w) out.push_back(sha1_low64(join(w, n)));
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline constexpr std::uint64_t kMersenne61 = (std::uint64_t{1} << 61) - 1;

inline std::uint64_t mod_mersenne61(unsigned __int128 x) noexcept {
  x = (x & kMersenne61) + (x >> 61);
  x = (x & kMersenne61) + (x >> 61);
  auto r = static_cast<std::uint64_t>(x);
  if (r >= kMersenne61) r -= kMersenne61;
  return r;
}

// Affine permutation family h_i(s) = ((a_i s + b_i) mod p) mod 2^bits with
// p = 2^61 - 1, coefficients drawn from splitmix64(seed).
class PermutationFamily {
 public:
  PermutationFamily(std::size_t num_perm, std::uint64_t seed, unsigned hash_bits)
      : mask_(hash_bits >= 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << hash_bits) - 1) {
    SplitMix64 rng(seed);
    const auto draw61 = [&] { return rng.next() >> 3; };
    a_.reserve(num_perm);
    b_.reserve(num_perm);
    for (std::size_t i = 0; i < num_perm; ++i) {
      std::uint64_t a;
      do a = draw61();
      while (a == 0 || a >= kMersenne61);
      std::uint64_t b;
      do b = draw61();
      while (b >= kMersenne61);
      a_.push_back(a);
      b_.push_back(b);
    }
  }

  std::size_t size() const noexcept { return a_.size(); }

  std::uint64_t operator()(std::size_t i, std::uint64_t s) const noexcept {
    const unsigned __int128 x = static_cast<unsigned __int128>(a_[i]) * s + b_[i];
    return mod_mersenne61(x) & mask_;
  }

  std::uint64_t a(std::size_t i) const { return a_.at(i); }
  std::uint64_t b(std::size_t i) const { return b_.at(i); }

 private:
  std::vector<std::uint64_t> a_, b_;
  std::uint64_t mask_;
};

struct MinHashSignature {
  std::vector<std::uint64_t> slots;

  friend bool operator==(const MinHashSignature&, const MinHashSignature&) = default;
};

inline MinHashSignature minhash_signature(std::span<const std::uint64_t> shingles, const PermutationFamily& perms) {
  if (shingles.empty()) throw EmptyDocument();
  MinHashSignature sig;
  sig.slots.assign(perms.size(), ~std::uint64_t{0});
  for (const std::uint64_t s : shingles) {
    for (std::size_t i = 0; i < perms.size(); ++i) sig.slots[i] = std::min(sig.slots[i], perms(i, s));
  }
  return sig;
}

inline MinHashSignature minhash_signature(std::span<const std::uint64_t> shingles, const DedupConfig& cfg) {
  return minhash_signature(shingles, PermutationFamily(cfg.num_perm, cfg.seed, cfg.hash_bits));
}

inline double estimate_jaccard(const MinHashSignature& a, const MinHashSignature& b) {
  if (a.slots.size() != b.slots.size())
    throw LengthMismatch("signature lengths differ: " + std::to_string(a.slots.size()) + " vs " +
                         std::to_string(b.slots.size()));
  if (a.slots.empty()) return 0.0;
  std::size_t equal = 0;
  for (std::size_t i = 0; i < a.slots.size(); ++i) equal += a.slots[i] == b.slots[i];
  return static_cast<double>(equal) / static_cast<double>(a.slots.size());
}

struct Banding {
  std::size_t bands = 1;
  std::size_t rows = 1;

  friend bool operator==(const Banding&, const Banding&) = default;
};

namespace detail {

// Trapezoidal rule on [lo, hi] with steps of (about) 0.01.
template <typename F>
double integrate(F f, double lo, double hi) {
  if (hi <= lo) return 0.0;
  const auto n = std::max<long>(1, std::lround((hi - lo) / 0.01));
  const double h = (hi - lo) / static_cast<double>(n);
  double sum = 0.5 * (f(lo) + f(hi));
  for (long i = 1; i < n; ++i) sum += f(lo + static_cast<double>(i) * h);
  return sum * h;
}

}  // namespace detail

// Band/row split minimising 0.5*P(false positive) + 0.5*P(false negative)
// of the S-curve 1-(1-s^r)^b around the threshold. Ties go to the larger
// b*r, then the larger b.
inline Banding optimal_bands(double threshold, std::size_t num_perm) {
  if (num_perm == 0) throw std::invalid_argument("num_perm must be positive");
  Banding best;
  double best_err = 0.0;
  bool have = false;
  for (std::size_t b = 1; b <= num_perm; ++b) {
    for (std::size_t r = 1; b * r <= num_perm; ++r) {
      const double bd = static_cast<double>(b);
      const double rd = static_cast<double>(r);
      const auto collide = [&](double s) { return 1.0 - std::pow(1.0 - std::pow(s, rd), bd); };
      const double fp = detail::integrate(collide, 0.0, threshold);
      const double fn = detail::integrate([&](double s) { return 1.0 - collide(s); }, threshold, 1.0);
      const double err = 0.5 * fp + 0.5 * fn;
      const bool better = !have || err < best_err ||
                          (err == best_err && (b * r > best.bands * best.rows ||
                                               (b * r == best.bands * best.rows && b > best.bands)));
      if (better) {
        best = {b, r};
        best_err = err;
        have = true;
      }
    }
  }
  return best;
}

struct Cluster {
  std::uint64_t kept = 0;
  std::vector<std::uint64_t> removed;

  friend bool operator==(const Cluster&, const Cluster&) = default;
};

struct DedupReport {
  std::vector<Cluster> clusters;
  std::size_t docs_in = 0;
  std::size_t docs_kept = 0;
  std::size_t pairs_candidates = 0;
  std::size_t pairs_confirmed = 0;
  std::vector<std::uint64_t> empty_ids;  // kept verbatim, never compared
  Banding banding;
  DedupConfig config;

  friend bool operator==(const DedupReport& a, const DedupReport& b) {
    return a.clusters == b.clusters && a.docs_in == b.docs_in && a.docs_kept == b.docs_kept &&
           a.pairs_candidates == b.pairs_candidates && a.pairs_confirmed == b.pairs_confirmed &&
           a.empty_ids == b.empty_ids && a.banding == b.banding;
  }
};

inline nlohmann::ordered_json to_json(const DedupReport& r) {
  nlohmann::ordered_json j;
  j["docs_in"] = r.docs_in;
  j["docs_kept"] = r.docs_kept;
  j["pairs_candidates"] = r.pairs_candidates;
  j["pairs_confirmed"] = r.pairs_confirmed;
  j["clusters"] = nlohmann::ordered_json::array();
  for (const auto& c : r.clusters) j["clusters"].push_back({{"kept", c.kept}, {"removed", c.removed}});
  j["empty_ids"] = r.empty_ids;
  j["config"] = {{"num_perm", r.config.num_perm},
                 {"threshold", r.config.threshold},
                 {"hash_bits", r.config.hash_bits},
                 {"seed", r.config.seed},
                 {"shingle_n", r.config.shingle_n},
                 {"shingling", "nfc+lowercase, whitespace word n-grams, sha1 low 64 bits"},
                 {"bands", r.banding.bands},
                 {"rows", r.banding.rows}};
  return j;
}

struct DedupResult {
  std::vector<Document> kept;
  DedupReport report;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> confirmed_pairs;  // (lower id, higher id)
};

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), std::size_t{0}); }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent_[b] = a;
  }

 private:
  std::vector<std::size_t> parent_;
};

namespace detail {

inline std::uint64_t hash_band(std::span<const std::uint64_t> band) noexcept {
  std::uint64_t h = 0x243F6A8885A308D3ULL;
  for (const std::uint64_t v : band) {
    h ^= v + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
    h = (h ^ (h >> 31)) * 0xBF58476D1CE4E5B9ULL;
  }
  return h;
}

}  // namespace detail

// Near-duplicate removal: MinHash signatures, LSH band buckets for
// candidates, signature-estimated Jaccard for confirmation, union-find for
// clusters. Each cluster keeps its minimum-id member. Output is identical
// for any worker count.
inline DedupResult dedup_corpus(const std::vector<Document>& docs, const DedupConfig& cfg,
                                std::size_t workers = 1) {
  cfg.validate();
  const std::size_t n = docs.size();
  {
    std::unordered_set<std::uint64_t> ids;
    for (const auto& d : docs)
      if (!ids.insert(d.id).second) throw DataError("duplicate document id " + std::to_string(d.id));
  }

  const PermutationFamily perms(cfg.num_perm, cfg.seed, cfg.hash_bits);
  std::vector<MinHashSignature> sigs(n);
  std::vector<char> has_sig(n, 0);
  parallel_for(n, workers, [&](std::size_t i) {
    const ShingleSet sh = shingle(docs[i].text, cfg.shingle_n);
    if (sh.empty()) return;
    sigs[i] = minhash_signature(sh, perms);
    has_sig[i] = 1;
  });

  DedupResult result;
  auto& report = result.report;
  report.config = cfg;
  report.docs_in = n;
  report.banding = optimal_bands(cfg.threshold, cfg.num_perm);
  const std::size_t rows = report.banding.rows;

  std::vector<std::uint32_t> live;
  for (std::size_t i = 0; i < n; ++i) {
    if (has_sig[i])
      live.push_back(static_cast<std::uint32_t>(i));
    else
      report.empty_ids.push_back(docs[i].id);
  }

  // Per-band bucketing; each band is owned by one task.
  using Pair = std::pair<std::uint32_t, std::uint32_t>;
  std::vector<std::vector<Pair>> band_pairs(report.banding.bands);
  parallel_for(report.banding.bands, workers, [&](std::size_t band) {
    const std::size_t off = band * rows;
    const auto slice = [&](std::uint32_t doc) {
      return std::span<const std::uint64_t>(sigs[doc].slots).subspan(off, rows);
    };
    std::vector<std::pair<std::uint64_t, std::uint32_t>> keyed;
    keyed.reserve(live.size());
    for (const std::uint32_t d : live) keyed.emplace_back(detail::hash_band(slice(d)), d);
    std::sort(keyed.begin(), keyed.end());
    auto& out = band_pairs[band];
    for (std::size_t lo = 0; lo < keyed.size();) {
      std::size_t hi = lo + 1;
      while (hi < keyed.size() && keyed[hi].first == keyed[lo].first) ++hi;
      for (std::size_t x = lo; x < hi; ++x)
        for (std::size_t y = x + 1; y < hi; ++y) {
          const auto sx = slice(keyed[x].second);
          const auto sy = slice(keyed[y].second);
          if (std::equal(sx.begin(), sx.end(), sy.begin())) out.emplace_back(keyed[x].second, keyed[y].second);
        }
      lo = hi;
    }
  });

  std::vector<Pair> candidates;
  for (auto& bp : band_pairs) candidates.insert(candidates.end(), bp.begin(), bp.end());
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  report.pairs_candidates = candidates.size();

  std::vector<char> confirmed(candidates.size(), 0);
  parallel_for(candidates.size(), workers, [&](std::size_t i) {
    const auto [a, b] = candidates[i];
    confirmed[i] = estimate_jaccard(sigs[a], sigs[b]) >= cfg.threshold;
  });

  UnionFind uf(n);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (!confirmed[i]) continue;
    const auto [a, b] = candidates[i];
    uf.unite(a, b);
    const auto ida = docs[a].id, idb = docs[b].id;
    result.confirmed_pairs.emplace_back(std::min(ida, idb), std::max(ida, idb));
  }
  std::sort(result.confirmed_pairs.begin(), result.confirmed_pairs.end());
  report.pairs_confirmed = result.confirmed_pairs.size();

  // Representative per root = minimum document id in the component.
  std::vector<std::size_t> rep(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t root = uf.find(i);
    if (rep[root] == n || docs[i].id < docs[rep[root]].id) rep[root] = i;
  }
  std::vector<std::vector<std::uint64_t>> removed_by_root(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t root = uf.find(i);
    if (rep[root] == i) {
      result.kept.push_back(docs[i]);
    } else {
      removed_by_root[root].push_back(docs[i].id);
    }
  }
  for (std::size_t root = 0; root < n; ++root) {
    auto& removed = removed_by_root[root];
    if (removed.empty()) continue;
    std::sort(removed.begin(), removed.end());
    report.clusters.push_back({docs[rep[root]].id, std::move(removed)});
  }
  std::sort(report.clusters.begin(), report.clusters.end(),
            [](const Cluster& a, const Cluster& b) { return a.kept < b.kept; });
  report.docs_kept = result.kept.size();
  return result;
}

}  // namespace corpuskit::dedup

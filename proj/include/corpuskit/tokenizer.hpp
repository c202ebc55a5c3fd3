#pragma once

#include <json.hpp>

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <queue>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "corpuskit/base64.hpp"
#include "corpuskit/corpus_io.hpp"
#include "corpuskit/errors.hpp"
#include "corpuskit/parallel.hpp"
#include "corpuskit/utf8.hpp"

namespace corpuskit::tokenizer {

using TokenId = std::uint32_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr TokenId kNumSpecials = 4;
inline constexpr TokenId kFirstByte = 4;
inline constexpr TokenId kFirstMerge = kFirstByte + 256;  // 260
inline constexpr int kModelVersion = 1;

inline constexpr TokenId byte_token(unsigned char b) noexcept { return kFirstByte + b; }

struct Specials {
  TokenId pad = kPad, bos = kBos, eos = kEos, unk = kUnk;
  friend bool operator==(const Specials&, const Specials&) = default;
};

using Merge = std::pair<TokenId, TokenId>;

// Byte-level BPE model. Layout: ids 0-3 specials, 4-259 single bytes in byte
// order, then one id per merge in training order.
struct TokenizerModel {
  std::vector<std::string> vocab;
  std::vector<Merge> merges;
  Specials specials;

  std::size_t vocab_size() const noexcept { return vocab.size(); }

  // The merge-free model: specials plus the 256 byte tokens.
  static TokenizerModel byte_level() {
    TokenizerModel m;
    m.vocab = {"<pad>", "<s>", "</s>", "<unk>"};
    for (int b = 0; b < 256; ++b) m.vocab.emplace_back(1, static_cast<char>(b));
    return m;
  }

  friend bool operator==(const TokenizerModel&, const TokenizerModel&) = default;
};

inline void validate(const TokenizerModel& m) {
  if (m.vocab.size() != kFirstMerge + m.merges.size())
    throw SchemaError("vocab size " + std::to_string(m.vocab.size()) + " != 260 + " +
                      std::to_string(m.merges.size()) + " merges");
  if (m.specials != Specials{}) throw SchemaError("specials must be pad=0 bos=1 eos=2 unk=3");
  for (int b = 0; b < 256; ++b) {
    const auto& tok = m.vocab[byte_token(static_cast<unsigned char>(b))];
    if (tok.size() != 1 || static_cast<unsigned char>(tok[0]) != b)
      throw SchemaError("byte token " + std::to_string(b) + " is out of place");
  }
  for (std::size_t i = 0; i < m.merges.size(); ++i) {
    const auto [l, r] = m.merges[i];
    const std::size_t id = kFirstMerge + i;
    if (l < kFirstByte || r < kFirstByte || l >= id || r >= id)
      throw SchemaError("merge " + std::to_string(i) + " references an invalid id");
    if (m.vocab[id] != m.vocab[l] + m.vocab[r])
      throw SchemaError("vocab entry " + std::to_string(id) + " does not match its merge");
  }
}

// Splits text so that every whitespace run is glued to the front of the word
// that follows it. A trailing whitespace run is its own piece. Concatenating
// the pieces gives back the input.
inline std::vector<std::string_view> pre_tokenize(std::string_view text) {
  std::vector<std::string_view> pieces;
  std::size_t i = 0;
  while (i < text.size()) {
    const std::size_t start = i;
    while (i < text.size()) {
      const std::size_t ws = utf8::whitespace_len_at(text, i);
      if (!ws) break;
      i += ws;
    }
    while (i < text.size() && !utf8::whitespace_len_at(text, i)) i += utf8::char_len_at(text, i);
    pieces.push_back(text.substr(start, i - start));
  }
  return pieces;
}

namespace detail {

inline std::uint64_t pair_key(TokenId l, TokenId r) noexcept { return (std::uint64_t{l} << 32) | r; }
inline TokenId key_left(std::uint64_t k) noexcept { return static_cast<TokenId>(k >> 32); }
inline TokenId key_right(std::uint64_t k) noexcept { return static_cast<TokenId>(k & 0xFFFFFFFFu); }

// Distinct pre-tokens with their corpus frequency, sorted by bytes.
inline std::vector<std::pair<std::string, std::uint64_t>> count_words(const std::vector<Document>& corpus,
                                                                      std::size_t workers) {
  const std::size_t chunks = std::max<std::size_t>(1, std::min<std::size_t>(corpus.size(), workers * 4));
  std::vector<std::unordered_map<std::string, std::uint64_t>> partial(chunks);
  parallel_for(chunks, workers, [&](std::size_t c) {
    const std::size_t lo = corpus.size() * c / chunks;
    const std::size_t hi = corpus.size() * (c + 1) / chunks;
    for (std::size_t i = lo; i < hi; ++i)
      for (const auto piece : pre_tokenize(corpus[i].text)) ++partial[c][std::string(piece)];
  });
  std::unordered_map<std::string, std::uint64_t> total;
  for (auto& p : partial)
    for (auto& [w, n] : p) total[w] += n;
  std::vector<std::pair<std::string, std::uint64_t>> words(total.begin(), total.end());
  std::sort(words.begin(), words.end());
  return words;
}

// Replaces every non-overlapping (l, r) occurrence, scanning left to right.
inline bool apply_merge(std::vector<TokenId>& syms, TokenId l, TokenId r, TokenId merged) {
  bool changed = false;
  std::size_t out = 0;
  for (std::size_t i = 0; i < syms.size();) {
    if (i + 1 < syms.size() && syms[i] == l && syms[i + 1] == r) {
      syms[out++] = merged;
      i += 2;
      changed = true;
    } else {
      syms[out++] = syms[i++];
    }
  }
  syms.resize(out);
  return changed;
}

}  // namespace detail

// Trains byte-level BPE. Each step merges the most frequent adjacent pair
// (ties: smallest left bytes, then smallest right bytes). Stops at
// vocab_size entries or once no pair occurs at least twice.
inline TokenizerModel train_bpe(const std::vector<Document>& corpus, std::size_t vocab_size,
                                std::size_t workers = 1) {
  if (vocab_size < kFirstMerge + 1) throw std::invalid_argument("vocab_size must be at least 261");
  if (corpus.empty()) throw EmptyCorpus();

  TokenizerModel model = TokenizerModel::byte_level();
  const auto counted = detail::count_words(corpus, workers);

  std::vector<std::vector<TokenId>> words;
  std::vector<std::uint64_t> freq;
  words.reserve(counted.size());
  freq.reserve(counted.size());
  for (const auto& [w, n] : counted) {
    std::vector<TokenId> syms;
    syms.reserve(w.size());
    for (const char c : w) syms.push_back(byte_token(static_cast<unsigned char>(c)));
    words.push_back(std::move(syms));
    freq.push_back(n);
  }

  std::unordered_map<std::uint64_t, std::uint64_t> pair_count;
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> pair_words;
  for (std::uint32_t w = 0; w < words.size(); ++w) {
    const auto& s = words[w];
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
      const auto k = detail::pair_key(s[i], s[i + 1]);
      pair_count[k] += freq[w];
      auto& list = pair_words[k];
      if (list.empty() || list.back() != w) list.push_back(w);
    }
  }

  struct Entry {
    std::uint64_t count;
    std::uint64_t key;
  };
  const auto& vocab = model.vocab;
  // priority_queue keeps the "largest" on top: higher count, then the
  // lexicographically smaller pair of byte strings.
  const auto lower_priority = [&vocab](const Entry& a, const Entry& b) {
    if (a.count != b.count) return a.count < b.count;
    const auto ta = std::tie(vocab[detail::key_left(a.key)], vocab[detail::key_right(a.key)]);
    const auto tb = std::tie(vocab[detail::key_left(b.key)], vocab[detail::key_right(b.key)]);
    return tb < ta;
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(lower_priority)> heap(lower_priority);
  for (const auto& [k, c] : pair_count) heap.push({c, k});

  std::unordered_set<std::uint64_t> touched;
  while (model.vocab.size() < vocab_size) {
    std::uint64_t key = 0;
    std::uint64_t count = 0;
    while (!heap.empty()) {
      const Entry top = heap.top();
      heap.pop();
      const auto it = pair_count.find(top.key);
      if (it != pair_count.end() && it->second == top.count && top.count > 0) {
        key = top.key;
        count = top.count;
        break;
      }
    }
    if (count < 2) break;

    const TokenId l = detail::key_left(key);
    const TokenId r = detail::key_right(key);
    const auto merged = static_cast<TokenId>(model.vocab.size());
    model.vocab.push_back(model.vocab[l] + model.vocab[r]);
    model.merges.emplace_back(l, r);

    touched.clear();
    auto affected = std::move(pair_words[key]);
    pair_words.erase(key);
    std::sort(affected.begin(), affected.end());
    affected.erase(std::unique(affected.begin(), affected.end()), affected.end());
    for (const std::uint32_t w : affected) {
      auto& s = words[w];
      std::vector<TokenId> next = s;
      if (!detail::apply_merge(next, l, r, merged)) continue;
      for (std::size_t i = 0; i + 1 < s.size(); ++i) {
        const auto k = detail::pair_key(s[i], s[i + 1]);
        auto it = pair_count.find(k);
        it->second -= freq[w];
        if (it->second == 0) pair_count.erase(it);
        touched.insert(k);
      }
      for (std::size_t i = 0; i + 1 < next.size(); ++i) {
        const auto k = detail::pair_key(next[i], next[i + 1]);
        pair_count[k] += freq[w];
        touched.insert(k);
        if (next[i] == merged || next[i + 1] == merged) {
          auto& list = pair_words[k];
          if (list.empty() || list.back() != w) list.push_back(w);
        }
      }
      s = std::move(next);
    }
    for (const auto k : touched) {
      const auto it = pair_count.find(k);
      if (it != pair_count.end()) heap.push({it->second, k});
    }
  }
  return model;
}

// Applies merges to pre-tokens in rank order (lowest rank first, leftmost
// first among equal ranks). Never produces special ids.
class BpeEncoder {
 public:
  explicit BpeEncoder(const TokenizerModel& model) {
    ranks_.reserve(model.merges.size());
    for (std::size_t i = 0; i < model.merges.size(); ++i)
      ranks_.emplace(detail::pair_key(model.merges[i].first, model.merges[i].second), static_cast<TokenId>(i));
  }

  std::vector<TokenId> encode(std::string_view text) const {
    std::vector<TokenId> out;
    for (const auto piece : pre_tokenize(text)) encode_piece(piece, out);
    return out;
  }

  std::size_t count(std::string_view text) const { return encode(text).size(); }

 private:
  void encode_piece(std::string_view piece, std::vector<TokenId>& out) const {
    std::vector<TokenId> syms;
    syms.reserve(piece.size());
    for (const char c : piece) syms.push_back(byte_token(static_cast<unsigned char>(c)));
    constexpr TokenId kNone = std::numeric_limits<TokenId>::max();
    while (syms.size() > 1) {
      TokenId best = kNone;
      std::size_t at = 0;
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
        const auto it = ranks_.find(detail::pair_key(syms[i], syms[i + 1]));
        if (it != ranks_.end() && it->second < best) {
          best = it->second;
          at = i;
        }
      }
      if (best == kNone) break;
      syms[at] = kFirstMerge + best;
      syms.erase(syms.begin() + static_cast<std::ptrdiff_t>(at) + 1);
    }
    out.insert(out.end(), syms.begin(), syms.end());
  }

  std::unordered_map<std::uint64_t, TokenId> ranks_;
};

inline std::vector<TokenId> encode(const TokenizerModel& model, std::string_view text) {
  return BpeEncoder(model).encode(text);
}

inline std::string decode(const TokenizerModel& model, std::span<const TokenId> ids) {
  std::string out;
  for (const TokenId id : ids) {
    if (id >= model.vocab.size()) throw UnknownId(id);
    if (id < kNumSpecials) continue;
    out += model.vocab[id];
  }
  return out;
}

struct CompressionReport {
  std::uint64_t tokens_a = 0;
  std::uint64_t tokens_b = 0;
  double reduction = 0.0;  // 1 - tokens_a / tokens_b
};

inline CompressionReport make_compression_report(std::uint64_t tokens_a, std::uint64_t tokens_b) {
  CompressionReport r{tokens_a, tokens_b, 0.0};
  r.reduction = tokens_b == 0 ? 0.0 : 1.0 - static_cast<double>(tokens_a) / static_cast<double>(tokens_b);
  return r;
}

inline CompressionReport compare_tokenizers(const TokenizerModel& a, const TokenizerModel& b,
                                            const std::vector<Document>& corpus, std::size_t workers = 1) {
  if (corpus.empty()) throw EmptyCorpus();
  const BpeEncoder enc_a(a), enc_b(b);
  std::vector<std::uint64_t> ca(corpus.size()), cb(corpus.size());
  parallel_for(corpus.size(), workers, [&](std::size_t i) {
    ca[i] = enc_a.count(corpus[i].text);
    cb[i] = enc_b.count(corpus[i].text);
  });
  std::uint64_t ta = 0, tb = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) ta += ca[i], tb += cb[i];
  return make_compression_report(ta, tb);
}

inline nlohmann::ordered_json to_json(const TokenizerModel& m) {
  nlohmann::ordered_json j;
  j["version"] = kModelVersion;
  j["vocab"] = nlohmann::ordered_json::array();
  for (const auto& tok : m.vocab) j["vocab"].push_back(base64::encode(tok));
  j["merges"] = nlohmann::ordered_json::array();
  for (const auto& [l, r] : m.merges) j["merges"].push_back({l, r});
  j["specials"] = {{"pad", m.specials.pad}, {"bos", m.specials.bos}, {"eos", m.specials.eos}, {"unk", m.specials.unk}};
  return j;
}

inline TokenizerModel model_from_json(const nlohmann::json& j) {
  try {
    if (!j.is_object()) throw SchemaError("model must be a JSON object");
    for (const char* field : {"version", "vocab", "merges", "specials"})
      if (!j.contains(field)) throw SchemaError(std::string("model is missing \"") + field + "\"");
    if (j.at("version") != kModelVersion) throw SchemaError("unsupported model version");
    TokenizerModel m;
    for (const auto& v : j.at("vocab")) {
      auto bytes = base64::decode(v.get<std::string>());
      if (!bytes) throw SchemaError("vocab entry is not valid base64");
      m.vocab.push_back(std::move(*bytes));
    }
    for (const auto& pair : j.at("merges")) {
      if (!pair.is_array() || pair.size() != 2) throw SchemaError("merge must be a two-element array");
      m.merges.emplace_back(pair[0].get<TokenId>(), pair[1].get<TokenId>());
    }
    const auto& s = j.at("specials");
    m.specials = {s.at("pad").get<TokenId>(), s.at("bos").get<TokenId>(), s.at("eos").get<TokenId>(),
                  s.at("unk").get<TokenId>()};
    validate(m);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed model: ") + e.what());
  }
}

inline void save_model(const TokenizerModel& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json(m).dump() << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

inline TokenizerModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("model is not valid JSON: ") + e.what());
  }
  return model_from_json(j);
}

}  // namespace corpuskit::tokenizer

#pragma once

#include <json.hpp>

#include <algorithm>
#include <array>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "corpuskit/corpus_io.hpp"
#include "corpuskit/errors.hpp"
#include "corpuskit/hashing.hpp"
#include "corpuskit/parallel.hpp"
#include "corpuskit/tokenizer.hpp"

namespace corpuskit::shard {

namespace fs = std::filesystem;
using tokenizer::TokenId;

inline constexpr std::array<char, 4> kMagic{'M', 'L', 'S', 'D'};
inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::uint32_t kTokenWidth = 2;
inline constexpr std::size_t kHeaderBytes = 4 + 4 + 4 + 4 + 8;
inline constexpr int kManifestVersion = 1;

// Fixed-length rows cut from one EOS-separated token stream.
struct PackedSamples {
  std::uint32_t context_length = 0;
  std::vector<TokenId> tokens;  // num_samples * context_length, row-major
  std::uint64_t dropped_tail = 0;

  std::size_t num_samples() const noexcept { return context_length ? tokens.size() / context_length : 0; }
  std::span<const TokenId> row(std::size_t i) const {
    return std::span<const TokenId>(tokens).subspan(i * context_length, context_length);
  }
};

inline PackedSamples pack_tokens(std::span<const std::vector<TokenId>> docs, std::uint32_t context_length,
                                 TokenId eos_id) {
  if (context_length < 2) throw std::invalid_argument("context_length must be at least 2");
  PackedSamples out;
  out.context_length = context_length;
  for (const auto& doc : docs) {
    out.tokens.insert(out.tokens.end(), doc.begin(), doc.end());
    out.tokens.push_back(eos_id);
  }
  out.dropped_tail = out.tokens.size() % context_length;
  out.tokens.resize(out.tokens.size() - out.dropped_tail);
  return out;
}

struct ShardMeta {
  std::string path;  // relative to the directory holding the manifest
  std::uint64_t num_samples = 0;
  std::uint64_t payload_bytes = 0;
  std::string digest_hex;
  std::uint32_t context_length = 0;
  std::uint32_t token_width = kTokenWidth;
  std::uint64_t dropped_tail = 0;  // tokens cut from the tail of this shard's stream

  friend bool operator==(const ShardMeta&, const ShardMeta&) = default;
};

struct ShardHeader {
  std::uint32_t version = kFormatVersion;
  std::uint32_t context_length = 0;
  std::uint32_t token_width = kTokenWidth;
  std::uint64_t num_samples = 0;
};

namespace detail {

template <typename T>
void put_le(std::vector<unsigned char>& buf, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

template <typename T>
T get_le(const unsigned char* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
  return v;
}

inline ShardHeader read_header(std::istream& in, const std::string& name) {
  std::array<unsigned char, kHeaderBytes> raw{};
  if (!in.read(reinterpret_cast<char*>(raw.data()), raw.size())) throw IoError(name + ": truncated header");
  if (std::memcmp(raw.data(), kMagic.data(), kMagic.size()) != 0) throw IoError(name + ": bad magic");
  ShardHeader h;
  h.version = get_le<std::uint32_t>(raw.data() + 4);
  h.context_length = get_le<std::uint32_t>(raw.data() + 8);
  h.token_width = get_le<std::uint32_t>(raw.data() + 12);
  h.num_samples = get_le<std::uint64_t>(raw.data() + 16);
  if (h.version != kFormatVersion) throw IoError(name + ": unsupported shard version");
  if (h.token_width != kTokenWidth) throw IoError(name + ": unsupported token width");
  return h;
}

inline std::vector<unsigned char> read_payload(std::istream& in, const ShardHeader& h, const std::string& name) {
  const std::uint64_t bytes = h.num_samples * h.context_length * h.token_width;
  std::vector<unsigned char> payload(bytes);
  if (bytes && !in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(bytes)))
    throw IoError(name + ": truncated payload");
  return payload;
}

}  // namespace detail

// Header (magic "MLSD", u32 version, u32 context_length, u32 token_width,
// u64 num_samples; little-endian) followed by rows of little-endian u16.
inline ShardMeta write_shard(const PackedSamples& samples, const fs::path& path) {
  std::vector<unsigned char> payload;
  payload.reserve(samples.tokens.size() * kTokenWidth);
  for (const TokenId id : samples.tokens) {
    if (id > 0xFFFF) throw TokenOverflow(id);
    detail::put_le<std::uint16_t>(payload, static_cast<std::uint16_t>(id));
  }
  std::vector<unsigned char> header;
  header.insert(header.end(), kMagic.begin(), kMagic.end());
  detail::put_le<std::uint32_t>(header, kFormatVersion);
  detail::put_le<std::uint32_t>(header, samples.context_length);
  detail::put_le<std::uint32_t>(header, kTokenWidth);
  detail::put_le<std::uint64_t>(header, samples.num_samples());

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(header.data()), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("write failed: " + path.string());

  ShardMeta meta;
  meta.path = path.filename().string();
  meta.num_samples = samples.num_samples();
  meta.payload_bytes = payload.size();
  meta.digest_hex = to_hex(sha1(payload));
  meta.context_length = samples.context_length;
  meta.dropped_tail = samples.dropped_tail;
  return meta;
}

inline PackedSamples read_shard(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const auto h = detail::read_header(in, path.string());
  const auto payload = detail::read_payload(in, h, path.string());
  PackedSamples s;
  s.context_length = h.context_length;
  s.tokens.resize(payload.size() / kTokenWidth);
  for (std::size_t i = 0; i < s.tokens.size(); ++i) s.tokens[i] = detail::get_le<std::uint16_t>(&payload[2 * i]);
  return s;
}

// Recomputes a shard's metadata from its bytes on disk.
inline ShardMeta describe_shard(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const auto h = detail::read_header(in, path.string());
  const auto payload = detail::read_payload(in, h, path.string());
  ShardMeta meta;
  meta.path = path.filename().string();
  meta.num_samples = h.num_samples;
  meta.payload_bytes = payload.size();
  meta.digest_hex = to_hex(sha1(payload));
  meta.context_length = h.context_length;
  meta.token_width = h.token_width;
  return meta;
}

inline nlohmann::ordered_json to_json(const ShardMeta& m) {
  return {{"path", m.path},
          {"num_samples", m.num_samples},
          {"payload_bytes", m.payload_bytes},
          {"digest_hex", m.digest_hex},
          {"dropped_tail", m.dropped_tail}};
}

inline fs::path sidecar_path(const fs::path& shard_path) {
  fs::path p = shard_path;
  p += ".json";
  return p;
}

class SplitConversionError : public DataError {
 public:
  SplitConversionError(std::size_t index, const std::string& what)
      : DataError("split " + std::to_string(index) + ": " + what), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

inline ShardMeta convert_split(const fs::path& split_path, const tokenizer::BpeEncoder& encoder,
                               std::uint32_t context_length, const fs::path& out_dir) {
  const auto docs = read_jsonl(split_path);
  std::vector<std::vector<TokenId>> ids;
  ids.reserve(docs.size());
  for (const auto& d : docs) ids.push_back(encoder.encode(d.text));
  const auto packed = pack_tokens(ids, context_length, tokenizer::kEos);
  fs::path shard_path = out_dir / split_path.filename();
  shard_path.replace_extension(".mlsd");
  auto meta = write_shard(packed, shard_path);
  std::ofstream side(sidecar_path(shard_path), std::ios::binary | std::ios::trunc);
  nlohmann::ordered_json j = to_json(meta);
  j["context_length"] = meta.context_length;
  j["token_width"] = meta.token_width;
  j["source_split"] = split_path.filename().string();
  side << j.dump(2) << '\n';
  if (!side) throw IoError("cannot write sidecar for " + shard_path.string());
  return meta;
}

// Tokenizes, packs and writes every split independently (tails are not
// carried across splits). Metas come back in split order.
inline std::vector<ShardMeta> convert_splits(const std::vector<fs::path>& split_paths,
                                             const tokenizer::TokenizerModel& model, std::uint32_t context_length,
                                             const fs::path& out_dir, std::size_t workers = 1) {
  fs::create_directories(out_dir);
  const tokenizer::BpeEncoder encoder(model);
  std::vector<ShardMeta> metas(split_paths.size());
  parallel_for(split_paths.size(), workers, [&](std::size_t i) {
    try {
      metas[i] = convert_split(split_paths[i], encoder, context_length, out_dir);
    } catch (const DataError& e) {
      throw SplitConversionError(i, e.what());
    } catch (const std::filesystem::filesystem_error& e) {
      throw SplitConversionError(i, e.what());
    }
  });
  return metas;
}

struct ShardManifest {
  int version = kManifestVersion;
  std::uint32_t context_length = 0;
  std::uint32_t token_width = kTokenWidth;
  std::vector<ShardMeta> shards;
  std::uint64_t total_samples = 0;

  std::uint64_t total_tokens() const noexcept { return total_samples * context_length; }
  std::uint64_t dropped_tail() const noexcept {
    std::uint64_t n = 0;
    for (const auto& s : shards) n += s.dropped_tail;
    return n;
  }
};

inline nlohmann::ordered_json to_json(const ShardManifest& m) {
  nlohmann::ordered_json j;
  j["version"] = m.version;
  j["context_length"] = m.context_length;
  j["token_width"] = m.token_width;
  j["shards"] = nlohmann::ordered_json::array();
  for (const auto& s : m.shards) j["shards"].push_back(to_json(s));
  j["total_samples"] = m.total_samples;
  return j;
}

inline ShardManifest manifest_from_json(const nlohmann::json& j) {
  try {
    ShardManifest m;
    m.version = j.at("version").get<int>();
    if (m.version != kManifestVersion) throw SchemaError("unsupported manifest version");
    m.context_length = j.at("context_length").get<std::uint32_t>();
    m.token_width = j.at("token_width").get<std::uint32_t>();
    std::uint64_t sum = 0;
    for (const auto& s : j.at("shards")) {
      ShardMeta meta;
      meta.path = s.at("path").get<std::string>();
      meta.num_samples = s.at("num_samples").get<std::uint64_t>();
      meta.payload_bytes = s.at("payload_bytes").get<std::uint64_t>();
      meta.digest_hex = s.at("digest_hex").get<std::string>();
      meta.dropped_tail = s.value("dropped_tail", std::uint64_t{0});
      meta.context_length = m.context_length;
      meta.token_width = m.token_width;
      if (meta.payload_bytes != meta.num_samples * m.context_length * m.token_width)
        throw SchemaError("shard " + meta.path + ": payload_bytes disagrees with geometry");
      sum += meta.num_samples;
      m.shards.push_back(std::move(meta));
    }
    m.total_samples = j.at("total_samples").get<std::uint64_t>();
    if (m.total_samples != sum) throw SchemaError("total_samples does not match the shard list");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed manifest: ") + e.what());
  }
}

inline ShardManifest load_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return manifest_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(std::string("manifest is not valid JSON: ") + e.what());
  }
}

inline ShardManifest merge_manifests(std::vector<ShardMeta> metas, const fs::path& out_path) {
  if (metas.empty()) throw EmptyInput("no shards to merge");
  ShardManifest m;
  m.context_length = metas.front().context_length;
  m.token_width = metas.front().token_width;
  for (const auto& meta : metas)
    if (meta.context_length != m.context_length || meta.token_width != m.token_width)
      throw MixedGeometry("shard " + meta.path + " has context " + std::to_string(meta.context_length) +
                          " / width " + std::to_string(meta.token_width) + ", expected " +
                          std::to_string(m.context_length) + " / " + std::to_string(m.token_width));
  std::sort(metas.begin(), metas.end(), [](const ShardMeta& a, const ShardMeta& b) { return a.path < b.path; });
  for (std::size_t i = 1; i < metas.size(); ++i)
    if (metas[i].path == metas[i - 1].path) throw DuplicatePath("duplicate shard path " + metas[i].path);
  for (const auto& meta : metas) m.total_samples += meta.num_samples;
  m.shards = std::move(metas);

  std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + out_path.string());
  out << to_json(m).dump(2) << '\n';
  if (!out) throw IoError("write failed: " + out_path.string());
  return m;
}

// Rebuilds metas for every *.mlsd in a directory. Digests are recomputed
// from disk and checked against the sidecar written at conversion time.
inline std::vector<ShardMeta> collect_metas(const fs::path& dir) {
  std::vector<fs::path> paths;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".mlsd") paths.push_back(entry.path());
  std::sort(paths.begin(), paths.end());
  std::vector<ShardMeta> metas;
  for (const auto& p : paths) {
    ShardMeta meta = describe_shard(p);
    std::ifstream side(sidecar_path(p), std::ios::binary);
    if (side) {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(side);
      } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError(sidecar_path(p).string() + ": " + e.what());
      }
      const auto expected = j.value("digest_hex", std::string{});
      if (expected != meta.digest_hex) throw IntegrityError(meta.path, expected, meta.digest_hex);
      meta.dropped_tail = j.value("dropped_tail", std::uint64_t{0});
    }
    metas.push_back(std::move(meta));
  }
  return metas;
}

// Random access over all samples of a manifest. Each shard's digest is
// checked exactly once, on first access, before any of its rows is served.
class DatasetReader {
 public:
  explicit DatasetReader(const fs::path& manifest_path)
      : base_dir_(manifest_path.parent_path()), manifest_(load_manifest(manifest_path)) {
    offsets_.reserve(manifest_.shards.size() + 1);
    offsets_.push_back(0);
    for (const auto& s : manifest_.shards) offsets_.push_back(offsets_.back() + s.num_samples);
    shards_ = std::make_unique<Slot[]>(manifest_.shards.size());
  }

  const ShardManifest& manifest() const noexcept { return manifest_; }
  std::uint64_t size() const noexcept { return manifest_.total_samples; }
  std::size_t verifications() const noexcept { return verifications_.load(); }

  std::vector<TokenId> read_sample(std::uint64_t global_index) const {
    if (global_index >= size())
      throw IndexOutOfRange("sample " + std::to_string(global_index) + " out of range [0, " +
                            std::to_string(size()) + ")");
    const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), global_index);
    const auto shard = static_cast<std::size_t>(it - offsets_.begin()) - 1;
    const auto& payload = load(shard);
    const std::uint64_t local = global_index - offsets_[shard];
    const std::size_t ctx = manifest_.context_length;
    std::vector<TokenId> row(ctx);
    const unsigned char* p = payload.data() + local * ctx * kTokenWidth;
    for (std::size_t i = 0; i < ctx; ++i) row[i] = detail::get_le<std::uint16_t>(p + 2 * i);
    return row;
  }

 private:
  struct Slot {
    std::once_flag once;
    std::vector<unsigned char> payload;
  };

  const std::vector<unsigned char>& load(std::size_t shard) const {
    Slot& slot = shards_[shard];
    std::call_once(slot.once, [&] {
      const auto& meta = manifest_.shards[shard];
      const fs::path path = base_dir_ / meta.path;
      std::ifstream in(path, std::ios::binary);
      if (!in) throw IoError("cannot open " + path.string());
      const auto h = detail::read_header(in, meta.path);
      if (h.context_length != manifest_.context_length || h.num_samples != meta.num_samples)
        throw IntegrityError(meta.path, "geometry from manifest", "different header");
      auto payload = detail::read_payload(in, h, meta.path);
      ++verifications_;
      const std::string actual = to_hex(sha1(payload));
      if (actual != meta.digest_hex) throw IntegrityError(meta.path, meta.digest_hex, actual);
      slot.payload = std::move(payload);
    });
    return slot.payload;
  }

  fs::path base_dir_;
  ShardManifest manifest_;
  std::vector<std::uint64_t> offsets_;
  std::unique_ptr<Slot[]> shards_;
  mutable std::atomic<std::size_t> verifications_{0};
};

inline DatasetReader open_dataset(const fs::path& manifest_path) { return DatasetReader(manifest_path); }

// Fisher-Yates over [0, n) driven by splitmix64 with rejection-sampled
// bounded draws.
inline std::vector<std::uint64_t> shuffled_order(std::uint64_t n, std::uint64_t seed) {
  std::vector<std::uint64_t> order(n);
  std::iota(order.begin(), order.end(), std::uint64_t{0});
  SplitMix64 rng(seed);
  for (std::uint64_t i = n; i > 1; --i) {
    const std::uint64_t j = rng.bounded(i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

}  // namespace corpuskit::shard

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <thread>

#include "corpuskit/shardstore.hpp"
#include "support/test_support.hpp"

using namespace corpuskit;
using namespace corpuskit::shard;
namespace ct = corpuskit::testing;
using tokenizer::TokenId;

namespace {

std::vector<std::vector<TokenId>> docs_of_lengths(std::vector<std::size_t> lengths, TokenId start = 10) {
  std::vector<std::vector<TokenId>> docs;
  TokenId next = start;
  for (const auto n : lengths) {
    std::vector<TokenId> d;
    for (std::size_t i = 0; i < n; ++i) d.push_back(next++);
    docs.push_back(std::move(d));
  }
  return docs;
}

PackedSamples rows_of(std::uint32_t ctx, std::size_t rows, TokenId base) {
  PackedSamples s;
  s.context_length = ctx;
  for (std::size_t i = 0; i < rows * ctx; ++i) s.tokens.push_back(base + static_cast<TokenId>(i % 1000));
  return s;
}

tokenizer::TokenizerModel small_model() {
  std::mt19937_64 rng(2);
  std::vector<std::string> texts;
  for (int i = 0; i < 80; ++i) texts.push_back(ct::join(ct::random_words(rng, 40)));
  return tokenizer::train_bpe(ct::make_docs(texts), 500);
}

void write_corpus(const fs::path& p, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Document> docs;
  for (std::size_t i = 0; i < n; ++i) {
    Document d;
    d.id = i;
    d.text = ct::join(ct::random_words(rng, 5 + rng() % 80));
    docs.push_back(std::move(d));
  }
  write_jsonl(p, docs);
}

}  // namespace

TEST(PackTokens, HandCountedExample) {
  const auto docs = docs_of_lengths({5, 3});
  const auto p = pack_tokens(docs, 4, tokenizer::kEos);
  EXPECT_EQ(p.num_samples(), 2u);
  EXPECT_EQ(p.dropped_tail, 2u);
  // stream: 10 11 12 13 | 14 EOS 15 16 | 17 EOS (dropped)
  EXPECT_EQ(std::vector<TokenId>(p.row(0).begin(), p.row(0).end()), (std::vector<TokenId>{10, 11, 12, 13}));
  EXPECT_EQ(std::vector<TokenId>(p.row(1).begin(), p.row(1).end()), (std::vector<TokenId>{14, 2, 15, 16}));
}

TEST(PackTokens, EmptyInput) {
  const auto p = pack_tokens({}, 4, tokenizer::kEos);
  EXPECT_EQ(p.num_samples(), 0u);
  EXPECT_EQ(p.dropped_tail, 0u);
}

TEST(PackTokens, ConservationOnRandomCorpora) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::size_t> lengths(rng() % 30);
    for (auto& l : lengths) l = rng() % 300;
    const std::uint32_t ctx = 2 + static_cast<std::uint32_t>(rng() % 64);
    const auto docs = docs_of_lengths(lengths);
    const auto p = pack_tokens(docs, ctx, tokenizer::kEos);
    const std::size_t total = std::accumulate(lengths.begin(), lengths.end(), std::size_t{0}) + lengths.size();
    ASSERT_EQ(p.num_samples() * ctx + p.dropped_tail, total);
    ASSERT_LT(p.dropped_tail, ctx);
  }
}

TEST(PackTokens, RejectsTinyContext) { EXPECT_THROW(pack_tokens({}, 1, 2), std::invalid_argument); }

TEST(WriteShard, HeaderLayoutIsLittleEndian) {
  ct::TempDir dir;
  PackedSamples s;
  s.context_length = 2;
  s.tokens = {0x0102, 0xA0B0, 7, 8};
  const auto meta = write_shard(s, dir / "x.mlsd");
  const auto bytes = ct::read_file(dir / "x.mlsd");
  const std::string expected_header("MLSD\x01\x00\x00\x00\x02\x00\x00\x00\x02\x00\x00\x00\x02\x00\x00\x00\x00\x00\x00\x00", 24);
  EXPECT_EQ(bytes.substr(0, 24), expected_header);
  EXPECT_EQ(bytes.substr(24), std::string("\x02\x01\xB0\xA0\x07\x00\x08\x00", 8));
  EXPECT_EQ(meta.payload_bytes, 8u);
  EXPECT_EQ(meta.digest_hex, to_hex(sha1(std::string_view(bytes).substr(24))));
  EXPECT_EQ(meta.path, "x.mlsd");
}

TEST(WriteShard, RoundTripAndPayloadSize) {
  ct::TempDir dir;
  const auto s = rows_of(4096, 3, 300);
  const auto meta = write_shard(s, dir / "a.mlsd");
  EXPECT_EQ(meta.payload_bytes, 24576u);
  EXPECT_EQ(meta.num_samples, 3u);
  const auto back = read_shard(dir / "a.mlsd");
  EXPECT_EQ(back.tokens, s.tokens);
  EXPECT_EQ(back.context_length, 4096u);
}

TEST(WriteShard, TokenOverflow) {
  ct::TempDir dir;
  PackedSamples s;
  s.context_length = 2;
  s.tokens = {1, 70000};
  EXPECT_THROW(write_shard(s, dir / "o.mlsd"), TokenOverflow);
}

TEST(ConvertSplits, SingleSplitEqualsDirectPipeline) {
  ct::TempDir dir;
  write_corpus(dir / "c.jsonl", 30, 1);
  const auto model = small_model();
  const auto splits = split_jsonl(dir / "c.jsonl", 1, dir / "splits");
  const auto metas = convert_splits(splits, model, 64, dir / "out");
  ASSERT_EQ(metas.size(), 1u);

  const auto docs = read_jsonl(dir / "c.jsonl");
  std::vector<std::vector<TokenId>> ids;
  for (const auto& d : docs) ids.push_back(tokenizer::encode(model, d.text));
  const auto direct = write_shard(pack_tokens(ids, 64, tokenizer::kEos), dir / "direct.mlsd");
  EXPECT_EQ(metas[0].digest_hex, direct.digest_hex);
  EXPECT_EQ(metas[0].num_samples, direct.num_samples);
  EXPECT_EQ(metas[0].dropped_tail, direct.dropped_tail);
  EXPECT_EQ(metas[0].path, "c.split-0.mlsd");
}

TEST(ConvertSplits, IdenticalSplitsGiveIdenticalDigests) {
  ct::TempDir dir;
  write_corpus(dir / "half.jsonl", 10, 4);
  const auto content = ct::read_file(dir / "half.jsonl");
  ct::write_file(dir / "c.jsonl", content + content);
  const auto splits = split_jsonl(dir / "c.jsonl", 2, dir / "splits");
  const auto metas = convert_splits(splits, small_model(), 32, dir / "out", 2);
  ASSERT_EQ(metas.size(), 2u);
  EXPECT_EQ(metas[0].digest_hex, metas[1].digest_hex);
}

TEST(ConvertSplits, ConservationAndWorkerIndependence) {
  ct::TempDir dir;
  write_corpus(dir / "c.jsonl", 57, 5);
  const auto model = small_model();
  const auto splits = split_jsonl(dir / "c.jsonl", 5, dir / "splits");
  const auto a = convert_splits(splits, model, 48, dir / "one", 1);
  const auto b = convert_splits(splits, model, 48, dir / "many", 8);
  ASSERT_EQ(a, b);
  for (const auto& m : a) EXPECT_EQ(ct::read_file(dir / "one" / m.path), ct::read_file(dir / "many" / m.path));

  std::uint64_t expected = 0;
  for (const auto& d : read_jsonl(dir / "c.jsonl")) expected += tokenizer::encode(model, d.text).size() + 1;
  std::uint64_t packed = 0;
  for (const auto& m : a) packed += m.num_samples * 48 + m.dropped_tail;
  EXPECT_EQ(packed, expected);
}

TEST(ConvertSplits, ErrorsCarrySplitIndex) {
  ct::TempDir dir;
  ct::write_file(dir / "good.jsonl", "{\"text\":\"fine\"}\n");
  ct::write_file(dir / "bad.jsonl", "{\"text\":1}\n");
  try {
    convert_splits({dir / "good.jsonl", dir / "bad.jsonl"}, small_model(), 16, dir / "out");
    FAIL();
  } catch (const SplitConversionError& e) {
    EXPECT_EQ(e.index(), 1u);
  }
}

TEST(MergeManifests, SumsSortsAndWrites) {
  ct::TempDir dir;
  ShardMeta a{"b.mlsd", 10, 10 * 8 * 2, "aa", 8, 2, 1};
  ShardMeta b{"a.mlsd", 20, 20 * 8 * 2, "bb", 8, 2, 3};
  const auto m = merge_manifests({a, b}, dir / "manifest.json");
  EXPECT_EQ(m.total_samples, 30u);
  ASSERT_EQ(m.shards.size(), 2u);
  EXPECT_EQ(m.shards[0].path, "a.mlsd");
  EXPECT_EQ(m.dropped_tail(), 4u);
  const auto loaded = load_manifest(dir / "manifest.json");
  EXPECT_EQ(loaded.total_samples, 30u);
  EXPECT_EQ(loaded.shards, m.shards);
}

TEST(MergeManifests, SingleMeta) {
  ct::TempDir dir;
  const auto m = merge_manifests({ShardMeta{"only.mlsd", 3, 3 * 4 * 2, "cc", 4, 2, 0}}, dir / "m.json");
  EXPECT_EQ(m.total_samples, 3u);
  EXPECT_EQ(m.context_length, 4u);
}

TEST(MergeManifests, Errors) {
  ct::TempDir dir;
  ShardMeta a{"a.mlsd", 1, 4096 * 2, "x", 4096, 2, 0};
  ShardMeta b{"b.mlsd", 1, 2048 * 2, "y", 2048, 2, 0};
  EXPECT_THROW(merge_manifests({a, b}, dir / "m.json"), MixedGeometry);
  EXPECT_THROW(merge_manifests({a, a}, dir / "m.json"), DuplicatePath);
  EXPECT_THROW(merge_manifests({}, dir / "m.json"), EmptyInput);
}

TEST(ManifestJson, RejectsInconsistentTotals) {
  ct::TempDir dir;
  ct::write_file(dir / "m.json",
                 R"({"version":1,"context_length":4,"token_width":2,"shards":[{"path":"a","num_samples":1,"payload_bytes":8,"digest_hex":"x"}],"total_samples":5})");
  EXPECT_THROW(load_manifest(dir / "m.json"), SchemaError);
}

class DatasetFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    std::vector<ShardMeta> metas;
    // written out of path order on purpose
    metas.push_back(write_shard(rows_of(16, 5, 2000), dir_ / "s1.mlsd"));
    metas.push_back(write_shard(rows_of(16, 3, 100), dir_ / "s0.mlsd"));
    metas.push_back(write_shard(rows_of(16, 4, 5000), dir_ / "s2.mlsd"));
    manifest_ = merge_manifests(metas, dir_ / "manifest.json");
  }

  ct::TempDir dir_;
  ShardManifest manifest_;
};

TEST_F(DatasetFixture, FirstSampleComesFromFirstPathOrderedShard) {
  const auto reader = open_dataset(dir_ / "manifest.json");
  EXPECT_EQ(reader.size(), 12u);
  const auto expected = rows_of(16, 3, 100);
  const auto row = reader.read_sample(0);
  EXPECT_EQ(row, std::vector<TokenId>(expected.row(0).begin(), expected.row(0).end()));
}

TEST_F(DatasetFixture, IterationReproducesRowsInPathOrder) {
  const auto reader = open_dataset(dir_ / "manifest.json");
  std::vector<TokenId> all;
  for (std::uint64_t i = 0; i < reader.size(); ++i) {
    const auto row = reader.read_sample(i);
    all.insert(all.end(), row.begin(), row.end());
  }
  std::vector<TokenId> expected;
  for (const auto& s : {rows_of(16, 3, 100), rows_of(16, 5, 2000), rows_of(16, 4, 5000)})
    expected.insert(expected.end(), s.tokens.begin(), s.tokens.end());
  EXPECT_EQ(all, expected);
  EXPECT_EQ(reader.verifications(), 3u);
}

TEST_F(DatasetFixture, OutOfRange) {
  const auto reader = open_dataset(dir_ / "manifest.json");
  EXPECT_THROW(reader.read_sample(12), IndexOutOfRange);
}

TEST_F(DatasetFixture, FlippedPayloadByteFailsOnFirstAccess) {
  auto bytes = ct::read_file(dir_ / "s1.mlsd");
  bytes[kHeaderBytes + 17] ^= 0x01;
  ct::write_file(dir_ / "s1.mlsd", bytes);
  const auto reader = open_dataset(dir_ / "manifest.json");
  EXPECT_NO_THROW(reader.read_sample(0));  // s0 is intact
  try {
    reader.read_sample(3);
    FAIL();
  } catch (const IntegrityError& e) {
    EXPECT_EQ(e.shard(), "s1.mlsd");
    EXPECT_EQ(e.expected(), manifest_.shards[1].digest_hex);
  }
}

TEST_F(DatasetFixture, ConcurrentReadersVerifyEachShardOnce) {
  const auto reader = open_dataset(dir_ / "manifest.json");
  std::vector<std::jthread> threads;
  std::atomic<int> mismatches{0};
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      for (std::uint64_t i = 0; i < reader.size(); ++i) {
        const auto idx = (i + static_cast<std::uint64_t>(t)) % reader.size();
        if (reader.read_sample(idx).size() != 16) ++mismatches;
      }
    });
  }
  threads.clear();
  EXPECT_EQ(mismatches.load(), 0);
  EXPECT_EQ(reader.verifications(), 3u);
}

TEST(ShuffledOrder, DeterministicBijection) {
  const auto a = shuffled_order(1000, 7);
  EXPECT_EQ(a, shuffled_order(1000, 7));
  EXPECT_NE(a, shuffled_order(1000, 8));
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::uint64_t> iota(1000);
  std::iota(iota.begin(), iota.end(), 0u);
  EXPECT_EQ(sorted, iota);
}

TEST(ShuffledOrder, SmallCases) {
  EXPECT_EQ(shuffled_order(1, 42), (std::vector<std::uint64_t>{0}));
  EXPECT_TRUE(shuffled_order(0, 42).empty());
}

TEST(ShuffledOrder, MatchesIndependentSplitmixReference) {
  // frozen from a separate Python implementation of splitmix64 + Fisher-Yates
  EXPECT_EQ(SplitMix64(0).next(), 0xe220a8397b1dcdafULL);
  EXPECT_EQ(shuffled_order(10, 42), (std::vector<std::uint64_t>{0, 9, 5, 8, 6, 4, 7, 2, 1, 3}));
  EXPECT_EQ(shuffled_order(5, 0), (std::vector<std::uint64_t>{2, 3, 1, 4, 0}));
}

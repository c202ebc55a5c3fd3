#include <gtest/gtest.h>

#include <cmath>

#include "corpuskit/stats_report.hpp"
#include "support/test_support.hpp"

using namespace corpuskit;
using namespace corpuskit::stats;

namespace {

shard::ShardManifest manifest_with(std::uint64_t samples, std::uint32_t ctx, std::uint64_t tail = 0) {
  shard::ShardManifest m;
  m.context_length = ctx;
  m.total_samples = samples;
  m.shards.push_back({"x.mlsd", samples, samples * ctx * 2, "00", ctx, 2, tail});
  return m;
}

}  // namespace

TEST(Distribution, PublishedSourceTable) {
  const auto s = distribution(SourceManifest::from_entries({{"deduped text", 31.7},
                                                            {"filtered starcoder", 40.98},
                                                            {"madlad 400", 14.98},
                                                            {"instruction", 1.58},
                                                            {"journals", 1.14}}));
  EXPECT_NEAR(s.total, 90.38, 1e-9);
  EXPECT_EQ(std::round(s.total / 10.0) * 10.0, 90.0);
  ASSERT_EQ(s.rows.size(), 5u);
  EXPECT_EQ(s.rows[0].source, "filtered starcoder");
  EXPECT_NEAR(s.rows[0].fraction, 0.4534, 5e-5);
  double sum = 0.0;
  for (std::size_t i = 0; i < s.rows.size(); ++i) {
    sum += s.rows[i].fraction;
    if (i > 0) {
      EXPECT_GE(s.rows[i - 1].tokens, s.rows[i].tokens);
    }
  }
  EXPECT_NEAR(sum, 1.0, 1e-9);
}

TEST(Distribution, SingleSource) {
  const auto s = distribution(SourceManifest::from_entries({{"only", 12.0}}));
  ASSERT_EQ(s.rows.size(), 1u);
  EXPECT_DOUBLE_EQ(s.rows[0].fraction, 1.0);
}

TEST(TokenStats, CountsPackedTokensAndFootnotesTails) {
  const auto s = token_stats({{"a", manifest_with(10, 4096, 7)}, {"b", manifest_with(30, 4096, 5)}});
  EXPECT_DOUBLE_EQ(s.total, 40.0 * 4096);
  EXPECT_EQ(s.rows[0].source, "b");
  EXPECT_DOUBLE_EQ(s.rows[0].fraction, 0.75);
  EXPECT_EQ(s.dropped_total, 12u);
  const auto text = render_table(s);
  EXPECT_NE(text.find("total"), std::string::npos);
  EXPECT_NE(text.find("12 tail tokens dropped"), std::string::npos);
  const auto j = to_json(s);
  EXPECT_EQ(j["dropped_tail"]["a"], 7);
}

TEST(TokenStats, ExplicitDroppedCountsOverride) {
  const auto s = token_stats({{"a", manifest_with(1, 8, 3)}}, {{"a", 100}});
  EXPECT_EQ(s.dropped_total, 100u);
}

TEST(TokenStats, EmptyInput) {
  EXPECT_THROW(token_stats({}), EmptyInput);
  EXPECT_THROW(distribution(SourceManifest{}), EmptyInput);
}

TEST(TokenStats, OutputIsStable) {
  const std::vector<std::pair<std::string, shard::ShardManifest>> in{
      {"x", manifest_with(5, 16)}, {"y", manifest_with(5, 16)}, {"z", manifest_with(9, 16)}};
  EXPECT_EQ(to_json(token_stats(in)).dump(), to_json(token_stats(in)).dump());
  const auto s = token_stats(in);
  EXPECT_EQ(s.rows[0].source, "z");
  EXPECT_EQ(s.rows[1].source, "x");  // equal counts keep label order
}

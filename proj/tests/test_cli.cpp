#include <gtest/gtest.h>

#include <sstream>

#include "corpuskit/corpuskit.hpp"
#include "support/cli_runner.hpp"

using namespace corpuskit;
namespace ct = corpuskit::testing;
using ct::q;
using ct::run_cli;

namespace {

const std::filesystem::path kFixture = std::filesystem::path(CORPUSKIT_TEST_DATA) / "pipeline_100.jsonl";

}  // namespace

TEST(Cli, ScheduleRowAtWarmupIsPeak) {
  ct::TempDir dir;
  const auto r = run_cli("schedule --peak 1e-4 --warmup 2000 --total 4000", dir.path());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "step,lr");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    const auto step = std::stoull(line.substr(0, comma));
    const double lr = std::stod(line.substr(comma + 1));
    EXPECT_EQ(step, rows);
    if (step == 2000) {
      EXPECT_EQ(lr, 1e-4);
    }
    if (step == 0 || step == 4000) {
      EXPECT_EQ(lr, 0.0);
    }
    ++rows;
  }
  EXPECT_EQ(rows, 4001u);
}

TEST(Cli, UnknownSubcommandIsUsageError) {
  ct::TempDir dir;
  const auto r = run_cli("frobnicate", dir.path());
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find("Subcommands:"), std::string::npos);
  EXPECT_TRUE(r.out.empty());
}

TEST(Cli, MissingRequiredFlagIsUsageError) {
  ct::TempDir dir;
  EXPECT_EQ(run_cli("dedup --input " + q(kFixture), dir.path()).exit_code, 1);
  EXPECT_EQ(run_cli("schedule --warmup 10 --total 5", dir.path()).exit_code, 1);
}

TEST(Cli, VersionFlag) {
  ct::TempDir dir;
  const auto r = run_cli("--version", dir.path());
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_NE(r.out.find("shard format 1"), std::string::npos);
}

TEST(Cli, DataErrorsExitTwo) {
  ct::TempDir dir;
  ct::write_file(dir / "bad.jsonl", "{\"text\":\"ok\"}\n{\"text\":3}\n");
  const auto r = run_cli("dedup --input " + q(dir / "bad.jsonl") + " --output " + q(dir / "o.jsonl") +
                             " --report " + q(dir / "r.json"),
                         dir.path());
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("malformed line 1"), std::string::npos);

  const auto skipped = run_cli("dedup --skip-bad --input " + q(dir / "bad.jsonl") + " --output " +
                                   q(dir / "o.jsonl") + " --report " + q(dir / "r.json"),
                               dir.path());
  EXPECT_EQ(skipped.exit_code, 0) << skipped.err;
  EXPECT_NE(skipped.err.find("skipped 1"), std::string::npos);
}

TEST(Cli, DedupConfigFileMatchesFlagsAndFlagsWin) {
  ct::TempDir dir;
  const std::string io = " --input " + q(kFixture) + " --report ";
  ct::write_file(dir / "cfg.json", R"({"dedup":{"threshold":0.9,"seed":7}})");
  ASSERT_EQ(run_cli("dedup" + io + q(dir / "r1.json") + " --output " + q(dir / "o1.jsonl") +
                        " --threshold 0.9 --seed 7",
                    dir.path())
                .exit_code,
            0);
  ASSERT_EQ(run_cli("--config " + q(dir / "cfg.json") + " dedup" + io + q(dir / "r2.json") + " --output " +
                        q(dir / "o2.jsonl"),
                    dir.path())
                .exit_code,
            0);
  EXPECT_EQ(ct::read_file(dir / "r1.json"), ct::read_file(dir / "r2.json"));
  EXPECT_EQ(ct::read_file(dir / "o1.jsonl"), ct::read_file(dir / "o2.jsonl"));

  ASSERT_EQ(run_cli("--config " + q(dir / "cfg.json") + " dedup" + io + q(dir / "r3.json") + " --output " +
                        q(dir / "o3.jsonl") + " --seed 42 --threshold 0.95",
                    dir.path())
                .exit_code,
            0);
  const auto report = nlohmann::json::parse(ct::read_file(dir / "r3.json"));
  EXPECT_EQ(report["config"]["seed"], 42);
  EXPECT_EQ(report["config"]["threshold"], 0.95);
}

TEST(Cli, DedupFindsPlantedDuplicatesAndIsWorkerIndependent) {
  ct::TempDir dir;
  const std::string base = "dedup --input " + q(kFixture);
  ASSERT_EQ(run_cli(base + " --output " + q(dir / "a.jsonl") + " --report " + q(dir / "a.json") + " --workers 1",
                    dir.path())
                .exit_code,
            0);
  ASSERT_EQ(run_cli(base + " --output " + q(dir / "b.jsonl") + " --report " + q(dir / "b.json") + " --workers 8",
                    dir.path())
                .exit_code,
            0);
  EXPECT_EQ(ct::read_file(dir / "a.jsonl"), ct::read_file(dir / "b.jsonl"));
  EXPECT_EQ(ct::read_file(dir / "a.json"), ct::read_file(dir / "b.json"));
  const auto report = nlohmann::json::parse(ct::read_file(dir / "a.json"));
  EXPECT_EQ(report["docs_in"], 100);
  // five exact copies are always caught; near copies differ by one word
  EXPECT_GE(report["clusters"].size(), 5u);
  EXPECT_EQ(report["config"]["bands"], 5);
  EXPECT_EQ(report["config"]["rows"], 51);
}

TEST(Cli, SplitCommand) {
  ct::TempDir dir;
  const auto r = run_cli("split --input " + q(kFixture) + " -k 3 --outdir " + q(dir / "s"), dir.path());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  std::string joined;
  for (int i = 0; i < 3; ++i) joined += ct::read_file(dir / ("s/pipeline_100.split-" + std::to_string(i) + ".jsonl"));
  EXPECT_EQ(joined, ct::read_file(kFixture));
}

TEST(Cli, TrainCompareShardMergeStats) {
  ct::TempDir dir;
  ASSERT_EQ(run_cli("train-tokenizer --input " + q(kFixture) + " --vocab-size 600 --output " + q(dir / "m.json"),
                    dir.path())
                .exit_code,
            0);
  const auto model = tokenizer::load_model(dir / "m.json");
  EXPECT_EQ(model.vocab_size(), 600u);

  tokenizer::save_model(tokenizer::TokenizerModel::byte_level(), dir / "bytes.json");
  const auto cmp = run_cli("compare --tokenizer-a " + q(dir / "m.json") + " --tokenizer-b " + q(dir / "bytes.json") +
                               " --corpus " + q(kFixture),
                           dir.path());
  ASSERT_EQ(cmp.exit_code, 0) << cmp.err;
  const auto report = nlohmann::json::parse(cmp.out);
  EXPECT_GT(report["reduction"].get<double>(), 0.0);
  EXPECT_LT(report["tokens_a"].get<std::uint64_t>(), report["tokens_b"].get<std::uint64_t>());

  for (const char* workers : {"1", "8"}) {
    const auto out = dir / (std::string("shards") + workers);
    const auto ts = run_cli("tokenize-shard --input " + q(kFixture) + " --tokenizer " + q(dir / "m.json") +
                                " --context-length 256 --splits 4 --outdir " + q(out) + " --workers " + workers,
                            dir.path());
    ASSERT_EQ(ts.exit_code, 0) << ts.err;
    const auto mg = run_cli("merge --indir " + q(out) + " --manifest " + q(out / "manifest.json"), dir.path());
    ASSERT_EQ(mg.exit_code, 0) << mg.err;
  }
  EXPECT_EQ(ct::read_file(dir / "shards1/manifest.json"), ct::read_file(dir / "shards8/manifest.json"));
  const auto manifest = shard::load_manifest(dir / "shards1/manifest.json");
  EXPECT_EQ(manifest.shards.size(), 4u);
  EXPECT_EQ(manifest.context_length, 256u);

  ct::write_file(dir / "per_source.json", R"({"fixture":"shards1/manifest.json"})");
  const auto st = run_cli("stats --per-source " + q(dir / "per_source.json") + " --json " + q(dir / "stats.json"),
                          dir.path());
  ASSERT_EQ(st.exit_code, 0) << st.err;
  EXPECT_NE(st.out.find("fixture"), std::string::npos);
  const auto stats_json = nlohmann::json::parse(ct::read_file(dir / "stats.json"));
  EXPECT_EQ(stats_json["total_tokens"].get<double>(), static_cast<double>(manifest.total_tokens()));
}

TEST(Cli, MergeDetectsTamperedShard) {
  ct::TempDir dir;
  tokenizer::save_model(tokenizer::TokenizerModel::byte_level(), dir / "bytes.json");
  ASSERT_EQ(run_cli("tokenize-shard --input " + q(kFixture) + " --tokenizer " + q(dir / "bytes.json") +
                        " --context-length 128 --splits 2 --outdir " + q(dir / "out"),
                    dir.path())
                .exit_code,
            0);
  auto bytes = ct::read_file(dir / "out/pipeline_100.split-1.mlsd");
  bytes[shard::kHeaderBytes + 5] ^= 0x40;
  ct::write_file(dir / "out/pipeline_100.split-1.mlsd", bytes);
  const auto r = run_cli("merge --indir " + q(dir / "out") + " --manifest " + q(dir / "m.json"), dir.path());
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("digest mismatch"), std::string::npos);
}

TEST(Cli, SimulateRunEmitsTrace) {
  ct::TempDir dir;
  std::string csv = "step,loss\n";
  for (int i = 0; i < 800; ++i) csv += std::to_string(i) + "," + (i == 700 ? "20.5" : (i % 2 ? "2.1" : "2.0")) + "\n";
  ct::write_file(dir / "losses.csv", csv);
  const auto r = run_cli("simulate-run --losses " + q(dir / "losses.csv") +
                             " --checkpoint-interval 500 --window 50 --k 4 --stable 200 --total 4000 --emit csv",
                         dir.path());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "step,effective_lr,action,to_step,lr_multiplier");
  std::vector<std::string> rows;
  while (std::getline(in, line)) rows.push_back(line);
  ASSERT_EQ(rows.size(), 800u);
  EXPECT_EQ(rows[700].substr(0, rows[700].find(',')), "700");
  EXPECT_NE(rows[700].find(",ROLLBACK,500,0.7"), std::string::npos);
  EXPECT_EQ(rows[701].substr(0, rows[701].find(',')), "500");
}

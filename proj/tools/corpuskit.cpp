// corpuskit: JSONL corpus -> deduplicated corpus -> BPE tokenizer -> packed
// token shards -> statistics, plus LR schedule and run-controller replays.

#include <CLI11.hpp>

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "corpuskit/corpuskit.hpp"

namespace fs = std::filesystem;
using namespace corpuskit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename T>
void take(const CLI::Option* opt, const T& flag_value, T& target) {
  if (opt->count() > 0) target = flag_value;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<double> read_losses(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<double> losses;
  std::string line;
  for (std::size_t line_no = 0; std::getline(in, line); ++line_no) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto comma = line.rfind(',');
    std::string field = comma == std::string::npos ? line : line.substr(comma + 1);
    const auto b = field.find_first_not_of(" \t");
    const auto e = field.find_last_not_of(" \t");
    field = field.substr(b, e - b + 1);
    char* end = nullptr;
    const double v = std::strtod(field.c_str(), &end);
    if (end == field.c_str() || *end != '\0') {
      if (losses.empty() && line_no == 0) continue;  // header row
      throw MalformedLine(line_no, "not a number: " + field);
    }
    losses.push_back(v);
  }
  return losses;
}

// Shared between subcommands: --config, --workers, --skip-bad.
struct Common {
  std::string config_path;
  std::size_t workers = 1;
  CLI::Option* workers_opt = nullptr;
};

PipelineConfig base_config(const Common& common) {
  PipelineConfig cfg = common.config_path.empty() ? PipelineConfig{} : load_config(common.config_path);
  take(common.workers_opt, common.workers, cfg.workers);
  if (cfg.workers == 0) throw std::invalid_argument("--workers must be at least 1");
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"corpuskit: pretraining corpus pipeline (dedup, tokenizer, shards, stats, run control)"};
  app.set_version_flag("--version", std::string("corpuskit ") + kToolVersion +
                                        " (shard format " + std::to_string(shard::kFormatVersion) +
                                        ", manifest " + std::to_string(shard::kManifestVersion) +
                                        ", tokenizer model " + std::to_string(tokenizer::kModelVersion) + ")");
  app.require_subcommand(1);
  app.fallthrough();

  Common common;
  app.add_option("--config", common.config_path, "JSON config keyed by stage name; flags win on conflict")
      ->check(CLI::ExistingFile);
  common.workers_opt = app.add_option("--workers", common.workers, "worker threads (output is identical for any N)");

  // split
  auto* split = app.add_subcommand("split", "cut a JSONL file into k contiguous line blocks");
  std::string split_in, split_outdir;
  std::size_t split_k = 1;
  split->add_option("--input", split_in)->required()->check(CLI::ExistingFile);
  auto* split_k_opt = split->add_option("--splits,-k", split_k, "number of splits");
  split->add_option("--outdir", split_outdir, "defaults to the input's directory");

  // dedup
  auto* dd = app.add_subcommand("dedup", "MinHash/LSH near-duplicate removal");
  std::string dd_in, dd_out, dd_report;
  dedup::DedupConfig dd_flags;
  bool dd_skip_bad = false;
  dd->add_option("--input", dd_in)->required()->check(CLI::ExistingFile);
  dd->add_option("--output", dd_out)->required();
  dd->add_option("--report", dd_report)->required();
  auto* dd_perm = dd->add_option("--num-perm", dd_flags.num_perm);
  auto* dd_thr = dd->add_option("--threshold", dd_flags.threshold);
  auto* dd_seed = dd->add_option("--seed", dd_flags.seed);
  auto* dd_n = dd->add_option("--shingle-n", dd_flags.shingle_n);
  auto* dd_bits = dd->add_option("--hash-bits", dd_flags.hash_bits);
  dd->add_flag("--skip-bad", dd_skip_bad, "count malformed lines instead of failing");

  // train-tokenizer
  auto* tt = app.add_subcommand("train-tokenizer", "train a byte-level BPE tokenizer");
  std::string tt_in, tt_out;
  std::size_t tt_vocab = 32000;
  bool tt_skip_bad = false;
  tt->add_option("--input", tt_in)->required()->check(CLI::ExistingFile);
  tt->add_option("--output", tt_out)->required();
  auto* tt_vocab_opt = tt->add_option("--vocab-size", tt_vocab);
  tt->add_flag("--skip-bad", tt_skip_bad);

  // compare
  auto* cmp = app.add_subcommand("compare", "token-count reduction of tokenizer A relative to B");
  std::string cmp_a, cmp_b, cmp_corpus;
  cmp->add_option("--tokenizer-a", cmp_a)->required()->check(CLI::ExistingFile);
  cmp->add_option("--tokenizer-b", cmp_b)->required()->check(CLI::ExistingFile);
  cmp->add_option("--corpus", cmp_corpus)->required()->check(CLI::ExistingFile);

  // tokenize-shard
  auto* ts = app.add_subcommand("tokenize-shard", "split, tokenize and pack a corpus into binary shards");
  std::string ts_in, ts_tok, ts_outdir;
  std::uint32_t ts_ctx = 4096;
  std::size_t ts_splits = 1;
  ts->add_option("--input", ts_in)->required()->check(CLI::ExistingFile);
  ts->add_option("--tokenizer", ts_tok)->required()->check(CLI::ExistingFile);
  auto* ts_ctx_opt = ts->add_option("--context-length", ts_ctx);
  auto* ts_splits_opt = ts->add_option("--splits", ts_splits);
  ts->add_option("--outdir", ts_outdir)->required();

  // merge
  auto* mg = app.add_subcommand("merge", "merge shard metadata into one manifest");
  std::string mg_indir, mg_manifest;
  mg->add_option("--indir", mg_indir)->required()->check(CLI::ExistingDirectory);
  mg->add_option("--manifest", mg_manifest)->required();

  // stats
  auto* st = app.add_subcommand("stats", "per-source token distribution from manifests");
  std::vector<std::string> st_manifests;
  std::string st_per_source, st_json;
  st->add_option("--manifest", st_manifests, "manifest path, optionally as label=path (repeatable)");
  st->add_option("--per-source", st_per_source, "JSON file mapping source label to manifest path")
      ->check(CLI::ExistingFile);
  st->add_option("--json", st_json, "also write the table as JSON");

  // schedule
  auto* sc = app.add_subcommand("schedule", "emit the warmup/decay learning-rate schedule");
  run::LrSchedule sc_flags;
  std::string sc_emit = "csv";
  auto* sc_peak = sc->add_option("--peak", sc_flags.peak);
  auto* sc_warm = sc->add_option("--warmup", sc_flags.warmup_steps);
  auto* sc_total = sc->add_option("--total", sc_flags.total_steps);
  sc->add_option("--emit", sc_emit)->check(CLI::IsMember({"csv"}));

  // simulate-run
  auto* sr = app.add_subcommand("simulate-run", "replay the loss-spike controller over a loss stream");
  std::string sr_losses, sr_emit = "csv";
  run::LrSchedule sr_sched;
  run::ControllerConfig sr_ctl;
  std::uint64_t sr_interval = 500;
  sr->add_option("--losses", sr_losses, "CSV with the loss in the last column")->required()->check(CLI::ExistingFile);
  auto* sr_interval_opt = sr->add_option("--checkpoint-interval", sr_interval);
  auto* sr_window = sr->add_option("--window", sr_ctl.window);
  auto* sr_k = sr->add_option("--k", sr_ctl.k);
  auto* sr_stable = sr->add_option("--stable", sr_ctl.stable_steps);
  auto* sr_peak = sr->add_option("--peak", sr_sched.peak);
  auto* sr_warm = sr->add_option("--warmup", sr_sched.warmup_steps);
  auto* sr_total = sr->add_option("--total", sr_sched.total_steps, "defaults to max(#losses, warmup + 1)");
  sr->add_option("--emit", sr_emit)->check(CLI::IsMember({"csv"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    PipelineConfig cfg = base_config(common);

    if (*split) {
      take(split_k_opt, split_k, cfg.splits);
      const auto paths = split_jsonl(split_in, cfg.splits,
                                     split_outdir.empty() ? std::nullopt : std::optional<fs::path>(split_outdir));
      for (const auto& p : paths) std::cout << p.string() << '\n';
    } else if (*dd) {
      take(dd_perm, dd_flags.num_perm, cfg.dedup.num_perm);
      take(dd_thr, dd_flags.threshold, cfg.dedup.threshold);
      take(dd_seed, dd_flags.seed, cfg.dedup.seed);
      take(dd_n, dd_flags.shingle_n, cfg.dedup.shingle_n);
      take(dd_bits, dd_flags.hash_bits, cfg.dedup.hash_bits);
      std::size_t skipped = 0;
      const auto docs = read_jsonl(dd_in, {dd_skip_bad}, &skipped);
      if (skipped) std::cerr << "warning: skipped " << skipped << " malformed line(s)\n";
      const auto result = dedup::dedup_corpus(docs, cfg.dedup, cfg.workers);
      write_jsonl(dd_out, result.kept);
      write_text(dd_report, dedup::to_json(result.report).dump(2) + "\n");
      std::cerr << "dedup: " << result.report.docs_in << " in, " << result.report.docs_kept << " kept, "
                << result.report.clusters.size() << " clusters\n";
    } else if (*tt) {
      take(tt_vocab_opt, tt_vocab, cfg.vocab_size);
      std::size_t skipped = 0;
      const auto docs = read_jsonl(tt_in, {tt_skip_bad}, &skipped);
      if (skipped) std::cerr << "warning: skipped " << skipped << " malformed line(s)\n";
      const auto model = tokenizer::train_bpe(docs, cfg.vocab_size, cfg.workers);
      tokenizer::save_model(model, tt_out);
      std::cerr << "train-tokenizer: vocabulary " << model.vocab_size() << " (requested " << cfg.vocab_size
                << ", " << model.merges.size() << " merges)";
      if (model.vocab_size() < cfg.vocab_size) std::cerr << "; stopped early: no pair occurs twice";
      std::cerr << '\n';
    } else if (*cmp) {
      const auto a = tokenizer::load_model(cmp_a);
      const auto b = tokenizer::load_model(cmp_b);
      const auto corpus = read_jsonl(cmp_corpus);
      const auto r = tokenizer::compare_tokenizers(a, b, corpus, cfg.workers);
      nlohmann::ordered_json j{{"tokens_a", r.tokens_a}, {"tokens_b", r.tokens_b}, {"reduction", r.reduction}};
      std::cout << j.dump(2) << '\n';
    } else if (*ts) {
      take(ts_ctx_opt, ts_ctx, cfg.context_length);
      take(ts_splits_opt, ts_splits, cfg.splits);
      if (cfg.splits == 0) throw std::invalid_argument("--splits must be at least 1");
      const auto model = tokenizer::load_model(ts_tok);
      const fs::path outdir(ts_outdir);
      const auto split_paths = split_jsonl(ts_in, cfg.splits, outdir / "splits");
      const auto metas = shard::convert_splits(split_paths, model, cfg.context_length, outdir, cfg.workers);
      for (const auto& m : metas)
        std::cout << m.path << ' ' << m.num_samples << ' ' << m.digest_hex << ' ' << m.dropped_tail << '\n';
    } else if (*mg) {
      const fs::path manifest_path = fs::absolute(mg_manifest);
      const fs::path indir = fs::absolute(mg_indir);
      auto metas = shard::collect_metas(indir);
      for (auto& m : metas) m.path = (indir / m.path).lexically_relative(manifest_path.parent_path()).generic_string();
      const auto manifest = shard::merge_manifests(std::move(metas), manifest_path);
      std::cerr << "merge: " << manifest.shards.size() << " shards, " << manifest.total_samples << " samples\n";
    } else if (*st) {
      std::vector<std::pair<std::string, shard::ShardManifest>> manifests;
      for (const auto& entry : st_manifests) {
        const auto eq = entry.find('=');
        if (eq == std::string::npos)
          manifests.emplace_back("all", shard::load_manifest(entry));
        else
          manifests.emplace_back(entry.substr(0, eq), shard::load_manifest(entry.substr(eq + 1)));
      }
      if (!st_per_source.empty()) {
        std::ifstream in(st_per_source);
        nlohmann::json map;
        try {
          map = nlohmann::json::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
          throw SchemaError(std::string("--per-source: ") + e.what());
        }
        if (!map.is_object()) throw SchemaError("--per-source must be a JSON object");
        const fs::path base = fs::path(st_per_source).parent_path();
        for (auto it = map.begin(); it != map.end(); ++it) {
          if (!it->is_string()) throw SchemaError("--per-source values must be manifest paths");
          fs::path p = it->get<std::string>();
          if (p.is_relative()) p = base / p;
          manifests.emplace_back(it.key(), shard::load_manifest(p));
        }
      }
      if (manifests.empty()) throw std::invalid_argument("stats needs --manifest or --per-source");
      const auto s = stats::token_stats(manifests);
      std::cout << stats::render_table(s);
      if (!st_json.empty()) write_text(st_json, stats::to_json(s).dump(2) + "\n");
    } else if (*sc) {
      take(sc_peak, sc_flags.peak, cfg.schedule.peak);
      take(sc_warm, sc_flags.warmup_steps, cfg.schedule.warmup_steps);
      take(sc_total, sc_flags.total_steps, cfg.schedule.total_steps);
      cfg.schedule.validate();
      std::string out = "step,lr\n";
      for (std::uint64_t step = 0; step <= cfg.schedule.total_steps; ++step)
        out += std::to_string(step) + "," + fmt_double(run::lr_at(step, cfg.schedule)) + "\n";
      std::cout << out;
    } else if (*sr) {
      take(sr_interval_opt, sr_interval, cfg.checkpoint_interval);
      take(sr_window, sr_ctl.window, cfg.controller.window);
      take(sr_k, sr_ctl.k, cfg.controller.k);
      take(sr_stable, sr_ctl.stable_steps, cfg.controller.stable_steps);
      take(sr_peak, sr_sched.peak, cfg.schedule.peak);
      take(sr_warm, sr_sched.warmup_steps, cfg.schedule.warmup_steps);
      take(sr_total, sr_sched.total_steps, cfg.schedule.total_steps);
      const auto losses = read_losses(sr_losses);
      if (losses.empty()) throw EmptyInput("no losses in " + sr_losses);
      if (cfg.schedule.total_steps == 0)
        cfg.schedule.total_steps = std::max<std::uint64_t>(losses.size(), cfg.schedule.warmup_steps + 1);
      const auto trace = run::simulate_run(cfg.schedule, losses, cfg.checkpoint_interval, cfg.controller);
      std::string out = "step,effective_lr,action,to_step,lr_multiplier\n";
      for (const auto& row : trace) {
        out += std::to_string(row.step) + "," + fmt_double(row.effective_lr) + "," + run::to_string(row.action.kind) +
               "," + (row.action.kind == run::ActionKind::Rollback ? std::to_string(row.action.to_step) : "") + "," +
               fmt_double(row.action.lr_multiplier) + "\n";
      }
      std::cout << out;
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}

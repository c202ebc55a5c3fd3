#pragma once

#include <json.hpp>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include "corpuskit/dedup.hpp"
#include "corpuskit/errors.hpp"
#include "corpuskit/run_controller.hpp"

namespace corpuskit {

inline constexpr const char* kToolVersion = "1.0.0";

// Defaults for every stage, serialised as one JSON document keyed by stage.
struct PipelineConfig {
  dedup::DedupConfig dedup;
  std::size_t vocab_size = 32000;
  std::uint32_t context_length = 4096;
  std::size_t splits = 1;
  run::LrSchedule schedule;  // total_steps has no default
  run::ControllerConfig controller;
  std::uint64_t checkpoint_interval = 500;
  std::size_t workers = 1;
  // Recorded for completeness; no operation here trains a network.
  std::size_t batch_size = 24;
  double adamw_weight_decay = 0.1;
};

inline nlohmann::ordered_json to_json(const PipelineConfig& c) {
  nlohmann::ordered_json j;
  j["dedup"] = {{"num_perm", c.dedup.num_perm},
                {"threshold", c.dedup.threshold},
                {"hash_bits", c.dedup.hash_bits},
                {"seed", c.dedup.seed},
                {"shingle_n", c.dedup.shingle_n}};
  j["train-tokenizer"] = {{"vocab_size", c.vocab_size}};
  j["tokenize-shard"] = {{"context_length", c.context_length}, {"splits", c.splits}};
  j["schedule"] = {{"peak", c.schedule.peak}, {"warmup", c.schedule.warmup_steps}, {"total", c.schedule.total_steps}};
  j["simulate-run"] = {{"window", c.controller.window},
                       {"k", c.controller.k},
                       {"stable", c.controller.stable_steps},
                       {"checkpoint_interval", c.checkpoint_interval}};
  j["trainer"] = {{"batch_size", c.batch_size}, {"adamw_weight_decay", c.adamw_weight_decay}};
  j["workers"] = c.workers;
  return j;
}

inline PipelineConfig config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  try {
    if (!j.is_object()) throw SchemaError("config must be a JSON object");
    const auto section = [&](const char* name) -> const nlohmann::json& {
      static const nlohmann::json empty = nlohmann::json::object();
      const auto it = j.find(name);
      return it == j.end() ? empty : *it;
    };
    const auto& d = section("dedup");
    c.dedup.num_perm = d.value("num_perm", c.dedup.num_perm);
    c.dedup.threshold = d.value("threshold", c.dedup.threshold);
    c.dedup.hash_bits = d.value("hash_bits", c.dedup.hash_bits);
    c.dedup.seed = d.value("seed", c.dedup.seed);
    c.dedup.shingle_n = d.value("shingle_n", c.dedup.shingle_n);
    c.vocab_size = section("train-tokenizer").value("vocab_size", c.vocab_size);
    const auto& ts = section("tokenize-shard");
    c.context_length = ts.value("context_length", c.context_length);
    c.splits = ts.value("splits", c.splits);
    const auto& s = section("schedule");
    c.schedule.peak = s.value("peak", c.schedule.peak);
    c.schedule.warmup_steps = s.value("warmup", c.schedule.warmup_steps);
    c.schedule.total_steps = s.value("total", c.schedule.total_steps);
    const auto& r = section("simulate-run");
    c.controller.window = r.value("window", c.controller.window);
    c.controller.k = r.value("k", c.controller.k);
    c.controller.stable_steps = r.value("stable", c.controller.stable_steps);
    c.checkpoint_interval = r.value("checkpoint_interval", c.checkpoint_interval);
    const auto& t = section("trainer");
    c.batch_size = t.value("batch_size", c.batch_size);
    c.adamw_weight_decay = t.value("adamw_weight_decay", c.adamw_weight_decay);
    c.workers = j.value("workers", c.workers);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed config: ") + e.what());
  }
  return c;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(std::string("config is not valid JSON: ") + e.what());
  }
}

}  // namespace corpuskit

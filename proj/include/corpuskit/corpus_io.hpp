#pragma once

#include <json.hpp>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "corpuskit/errors.hpp"
#include "corpuskit/utf8.hpp"

namespace corpuskit {

namespace fs = std::filesystem;

// One corpus record. Fields other than id/text/source are carried in `extra`
// so pass-through stages do not lose metadata.
struct Document {
  std::uint64_t id = 0;
  std::string text;
  std::optional<std::string> source;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();

  friend bool operator==(const Document&, const Document&) = default;
};

struct ReadOptions {
  bool skip_bad = false;  // count malformed lines instead of aborting
};

// Sequential reader over a JSONL corpus. Line numbers are 0-based physical
// lines; auto-assigned ids use the same numbering.
class JsonlReader {
 public:
  explicit JsonlReader(const fs::path& path, ReadOptions opts = {}) : in_(path), opts_(opts) {
    if (!in_) throw IoError("cannot open " + path.string());
  }

  std::optional<Document> next() {
    std::string line;
    while (std::getline(in_, line)) {
      const std::uint64_t line_no = line_no_++;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        return parse(line, line_no);
      } catch (const MalformedLine&) {
        if (!opts_.skip_bad) throw;
        ++skipped_;
      }
    }
    return std::nullopt;
  }

  std::size_t skipped() const noexcept { return skipped_; }

 private:
  Document parse(const std::string& line, std::uint64_t line_no) {
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw MalformedLine(line_no, e.what());
    }
    if (!j.is_object()) throw MalformedLine(line_no, "not a JSON object");
    const auto text = j.find("text");
    if (text == j.end() || !text->is_string()) throw MalformedLine(line_no, "missing or non-string \"text\"");

    Document doc;
    doc.text = text->get<std::string>();
    if (!utf8::is_valid(doc.text)) throw MalformedLine(line_no, "text is not valid UTF-8");
    doc.id = line_no;
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it.key() == "text") continue;
      if (it.key() == "id") {
        if (!it->is_number_unsigned())
          throw MalformedLine(line_no, "\"id\" must be a non-negative integer");
        doc.id = it->get<std::uint64_t>();
      } else if (it.key() == "source") {
        if (!it->is_string()) throw MalformedLine(line_no, "\"source\" must be a string");
        doc.source = it->get<std::string>();
      } else {
        doc.extra[it.key()] = *it;
      }
    }
    if (!seen_ids_.insert(doc.id).second)
      throw MalformedLine(line_no, "duplicate id " + std::to_string(doc.id));
    return doc;
  }

  std::ifstream in_;
  ReadOptions opts_;
  std::uint64_t line_no_ = 0;
  std::size_t skipped_ = 0;
  std::unordered_set<std::uint64_t> seen_ids_;
};

inline std::vector<Document> read_jsonl(const fs::path& path, ReadOptions opts = {},
                                        std::size_t* skipped = nullptr) {
  JsonlReader reader(path, opts);
  std::vector<Document> docs;
  while (auto doc = reader.next()) docs.push_back(std::move(*doc));
  if (skipped) *skipped = reader.skipped();
  return docs;
}

inline std::string to_jsonl_line(const Document& doc) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  j["id"] = doc.id;
  j["text"] = doc.text;
  if (doc.source) j["source"] = *doc.source;
  for (auto it = doc.extra.begin(); it != doc.extra.end(); ++it) j[it.key()] = *it;
  return j.dump();
}

inline void write_jsonl(const fs::path& path, const std::vector<Document>& docs) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& doc : docs) out << to_jsonl_line(doc) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

// Name of the i-th split of `input`: <stem>.split-<i>.<ext>
inline fs::path split_name(const fs::path& input, std::size_t i, std::string_view ext = ".jsonl") {
  return input.stem().string() + ".split-" + std::to_string(i) + std::string(ext);
}

// Cuts a JSONL file into k contiguous blocks. The first N mod k splits get
// ceil(N/k) lines, the rest floor(N/k). Every written line ends in '\n'.
inline std::vector<fs::path> split_jsonl(const fs::path& input, std::size_t k,
                                         std::optional<fs::path> out_dir = std::nullopt) {
  if (k == 0) throw std::invalid_argument("split count must be positive");
  std::ifstream in(input, std::ios::binary);
  if (!in) throw IoError("cannot open " + input.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(std::move(line));

  const fs::path dir = out_dir ? *out_dir : input.parent_path();
  if (!dir.empty()) fs::create_directories(dir);
  const std::size_t n = lines.size();
  const std::size_t base = n / k;
  const std::size_t extra = n % k;

  std::vector<fs::path> paths;
  paths.reserve(k);
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t count = base + (i < extra ? 1 : 0);
    fs::path out_path = dir / split_name(input, i);
    std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + out_path.string());
    for (std::size_t j = 0; j < count; ++j) out << lines[cursor++] << '\n';
    if (!out) throw IoError("write failed: " + out_path.string());
    paths.push_back(std::move(out_path));
  }
  return paths;
}

// Per-source token counts (any unit, e.g. billions) with their total.
struct SourceManifest {
  std::vector<std::pair<std::string, double>> entries;
  double total = 0.0;

  static SourceManifest from_entries(std::vector<std::pair<std::string, double>> entries) {
    SourceManifest m;
    m.entries = std::move(entries);
    for (const auto& [label, count] : m.entries) {
      if (!(count >= 0.0) || !std::isfinite(count))
        throw SchemaError("source '" + label + "' has an invalid token count");
      m.total += count;
    }
    return m;
  }

  bool consistent() const noexcept {
    double sum = 0.0;
    for (const auto& e : entries) sum += e.second;
    return std::abs(sum - total) <= 1e-9 * std::max(1.0, std::abs(total));
  }
};

}  // namespace corpuskit

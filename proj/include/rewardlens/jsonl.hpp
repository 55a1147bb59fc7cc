#pragma once

// JSONL ingestion for preference pairs (RewardBench-style key aliases),
// probe suites, contrastive concept/term pairs, tagged distortion probes and
// plain (prompt, response) corpora.

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rewardlens/common.hpp"
#include "rewardlens/geometry.hpp"
#include "rewardlens/model.hpp"
#include "rewardlens/probes.hpp"

namespace rewardlens {

namespace detail {

inline nlohmann::json parse_jsonl_line(const std::string& line,
                                       const std::string& context,
                                       std::size_t line_no) {
  try {
    return nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data_format, context + ":" + std::to_string(line_no) +
                                     ": invalid JSON (" + e.what() + ")");
  }
}

inline std::string string_field(const nlohmann::json& rec,
                                std::initializer_list<const char*> aliases,
                                const std::string& context, std::size_t line_no,
                                bool required = true) {
  for (const char* key : aliases)
    if (rec.contains(key)) {
      require(rec[key].is_string(), ErrorKind::data_format,
              context + ":" + std::to_string(line_no) + ": field '" +
                  key + "' must be a string");
      return rec[key].get<std::string>();
    }
  if (required)
    fail(ErrorKind::data_format,
         context + ":" + std::to_string(line_no) + ": missing field '" +
             std::string(*aliases.begin()) + "'");
  return {};
}

template <typename Fn>
inline void for_each_jsonl_record(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::io, "cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  bool any = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    fn(parse_jsonl_line(line, path.string(), line_no), line_no);
    any = true;
  }
  require(any, ErrorKind::data_format, path.string() + ": no records");
}

}  // namespace detail

inline std::vector<PreferencePair> read_pair_file(
    const std::filesystem::path& path) {
  std::vector<PreferencePair> pairs;
  detail::for_each_jsonl_record(path, [&](const nlohmann::json& rec,
                                          std::size_t line_no) {
    PreferencePair p;
    p.prompt = detail::string_field(rec, {"prompt"}, path.string(), line_no);
    p.preferred = detail::string_field(rec, {"preferred", "chosen"},
                                       path.string(), line_no);
    p.dispreferred = detail::string_field(rec, {"dispreferred", "rejected"},
                                          path.string(), line_no);
    p.dimension = detail::string_field(rec, {"dimension"}, path.string(),
                                       line_no, false);
    p.validate();
    pairs.push_back(std::move(p));
  });
  return pairs;
}

inline ProbeSuite read_probe_file(const std::filesystem::path& path) {
  ProbeSuite suite;
  detail::for_each_jsonl_record(path, [&](const nlohmann::json& rec,
                                          std::size_t line_no) {
    ProbePair p;
    p.prompt = detail::string_field(rec, {"prompt"}, path.string(), line_no);
    p.variant_a = detail::string_field(rec, {"variant_a", "neutral", "aligned"},
                                       path.string(), line_no);
    p.variant_b =
        detail::string_field(rec, {"variant_b", "biased", "misaligned"},
                             path.string(), line_no);
    p.dimension = detail::string_field(rec, {"dimension"}, path.string(),
                                       line_no);
    suite[p.dimension].push_back(std::move(p));
  });
  return suite;
}

inline ContrastivePairs read_contrastive_file(
    const std::filesystem::path& path) {
  ContrastivePairs out;
  detail::for_each_jsonl_record(path, [&](const nlohmann::json& rec,
                                          std::size_t line_no) {
    const std::string name = detail::string_field(
        rec, {"concept", "term", "dimension"}, path.string(), line_no);
    PreferencePair p;
    p.prompt = detail::string_field(rec, {"prompt"}, path.string(), line_no);
    p.preferred = detail::string_field(rec, {"positive", "preferred"},
                                       path.string(), line_no);
    p.dispreferred = detail::string_field(rec, {"negative", "dispreferred"},
                                          path.string(), line_no);
    p.dimension = name;
    p.validate();
    out[name].push_back(std::move(p));
  });
  return out;
}

struct TaggedProbe {
  std::string name;
  std::string prompt;
  std::string variant_a;
  std::string variant_b;
  std::vector<std::string> dimensions;
};

inline std::vector<TaggedProbe> read_tagged_probe_file(
    const std::filesystem::path& path) {
  std::vector<TaggedProbe> probes;
  detail::for_each_jsonl_record(path, [&](const nlohmann::json& rec,
                                          std::size_t line_no) {
    TaggedProbe p;
    p.name = detail::string_field(rec, {"probe", "name"}, path.string(),
                                  line_no, false);
    if (p.name.empty()) p.name = "probe_" + std::to_string(probes.size());
    p.prompt = detail::string_field(rec, {"prompt"}, path.string(), line_no);
    p.variant_a =
        detail::string_field(rec, {"variant_a", "preferred"}, path.string(), line_no);
    p.variant_b = detail::string_field(rec, {"variant_b", "dispreferred"},
                                       path.string(), line_no);
    require(rec.contains("dimensions") && rec["dimensions"].is_array(),
            ErrorKind::data_format,
            path.string() + ":" + std::to_string(line_no) +
                ": missing 'dimensions' array");
    for (const auto& d : rec["dimensions"]) {
      require(d.is_string(), ErrorKind::data_format,
              path.string() + ":" + std::to_string(line_no) +
                  ": dimension tags must be strings");
      p.dimensions.push_back(d.get<std::string>());
    }
    probes.push_back(std::move(p));
  });
  return probes;
}

inline std::vector<std::pair<std::string, std::string>> read_corpus_file(
    const std::filesystem::path& path) {
  std::vector<std::pair<std::string, std::string>> corpus;
  detail::for_each_jsonl_record(path, [&](const nlohmann::json& rec,
                                          std::size_t line_no) {
    corpus.push_back(
        {detail::string_field(rec, {"prompt"}, path.string(), line_no),
         detail::string_field(rec, {"response"}, path.string(), line_no)});
  });
  return corpus;
}

inline std::vector<std::string> read_vocab_file(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::io, "cannot open " + path.string());
  std::vector<std::string> vocab;
  std::string tok;
  while (in >> tok) vocab.push_back(tok);
  require(!vocab.empty(), ErrorKind::data_format,
          path.string() + ": empty vocabulary");
  return vocab;
}

}  // namespace rewardlens

#pragma once

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rewardlens/common.hpp"

namespace rewardlens {

enum class HeadKind { scalar, multi_objective };
enum class NormKind { layernorm, identity };

inline const char* kBosToken = "<bos>";
inline const char* kSepToken = "<sep>";

struct TransformerConfig {
  int n_layers = 0;
  int d_model = 0;
  int n_heads = 0;
  int d_mlp = 0;
  int max_seq = 0;
  HeadKind head_kind = HeadKind::scalar;
  int n_objectives = 1;
  NormKind norm_kind = NormKind::layernorm;
  std::vector<std::string> vocab;  // token id = position

  int d_head() const { return d_model / n_heads; }
  int vocab_size() const { return static_cast<int>(vocab.size()); }

  void validate() const {
    require(n_layers >= 1, ErrorKind::shape_mismatch, "config: n_layers < 1");
    require(n_heads >= 1, ErrorKind::shape_mismatch, "config: n_heads < 1");
    require(d_model >= 1 && d_model % n_heads == 0, ErrorKind::shape_mismatch,
            "config: d_model must be a positive multiple of n_heads");
    require(d_mlp >= 1, ErrorKind::shape_mismatch, "config: d_mlp < 1");
    require(max_seq >= 2, ErrorKind::shape_mismatch, "config: max_seq < 2");
    require(vocab.size() >= 2, ErrorKind::shape_mismatch,
            "config: vocabulary needs at least 2 tokens");
    require(n_objectives >= 1, ErrorKind::shape_mismatch,
            "config: n_objectives < 1");
    if (head_kind == HeadKind::scalar)
      require(n_objectives == 1, ErrorKind::shape_mismatch,
              "config: scalar head with n_objectives != 1");
    bool has_bos = false, has_sep = false;
    for (const auto& t : vocab) {
      if (t == kBosToken) has_bos = true;
      if (t == kSepToken) has_sep = true;
      require(t.find(' ') == std::string::npos &&
                  t.find('\t') == std::string::npos &&
                  t.find('\n') == std::string::npos,
              ErrorKind::data_format, "config: token contains whitespace");
    }
    require(has_bos && has_sep, ErrorKind::data_format,
            "config: vocabulary must contain <bos> and <sep>");
  }
};

inline std::string head_kind_name(HeadKind k) {
  return k == HeadKind::scalar ? "scalar" : "multi_objective";
}

inline std::string norm_kind_name(NormKind k) {
  return k == NormKind::layernorm ? "layernorm" : "identity";
}

inline std::string serialize_config(const TransformerConfig& c) {
  std::ostringstream out;
  out << "format = reward-lens-model-v1\n";
  out << "n_layers = " << c.n_layers << "\n";
  out << "d_model = " << c.d_model << "\n";
  out << "n_heads = " << c.n_heads << "\n";
  out << "d_mlp = " << c.d_mlp << "\n";
  out << "max_seq = " << c.max_seq << "\n";
  out << "head_kind = " << head_kind_name(c.head_kind) << "\n";
  out << "n_objectives = " << c.n_objectives << "\n";
  out << "norm_kind = " << norm_kind_name(c.norm_kind) << "\n";
  out << "vocab =";
  for (const auto& t : c.vocab) out << " " << t;
  out << "\n";
  return out.str();
}

inline TransformerConfig parse_config(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorKind::data_format,
            "config: expected 'key = value', got: " + line);
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto get = [&](const std::string& key) -> std::string {
    auto it = kv.find(key);
    require(it != kv.end(), ErrorKind::data_format, "config: missing key " + key);
    return it->second;
  };
  auto get_int = [&](const std::string& key) {
    const std::string v = get(key);
    try {
      std::size_t used = 0;
      const int n = std::stoi(v, &used);
      require(used == v.size(), ErrorKind::data_format,
              "config: bad integer for " + key);
      return n;
    } catch (const Error&) {
      throw;
    } catch (...) {
      fail(ErrorKind::data_format, "config: bad integer for " + key);
    }
  };

  TransformerConfig c;
  require(get("format") == "reward-lens-model-v1", ErrorKind::data_format,
          "config: unsupported format tag");
  c.n_layers = get_int("n_layers");
  c.d_model = get_int("d_model");
  c.n_heads = get_int("n_heads");
  c.d_mlp = get_int("d_mlp");
  c.max_seq = get_int("max_seq");

  const std::string head = get("head_kind");
  if (head == "scalar")
    c.head_kind = HeadKind::scalar;
  else if (head == "multi_objective")
    c.head_kind = HeadKind::multi_objective;
  else
    fail(ErrorKind::unknown_head_kind, "config: unknown head_kind '" + head + "'");
  c.n_objectives = get_int("n_objectives");

  const std::string norm = get("norm_kind");
  if (norm == "layernorm")
    c.norm_kind = NormKind::layernorm;
  else if (norm == "identity")
    c.norm_kind = NormKind::identity;
  else
    fail(ErrorKind::data_format, "config: unknown norm_kind '" + norm + "'");

  std::istringstream vs(get("vocab"));
  std::string tok;
  while (vs >> tok) c.vocab.push_back(tok);
  c.validate();
  return c;
}

}  // namespace rewardlens

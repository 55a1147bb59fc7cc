#pragma once

// Whitespace tokenizer over a fixed vocabulary. Unknown tokens are an error
// rather than an UNK id so every test input is deterministic.

#include <string>
#include <unordered_map>
#include <vector>

#include "rewardlens/common.hpp"
#include "rewardlens/config.hpp"

namespace rewardlens {

class Tokenizer {
 public:
  explicit Tokenizer(const std::vector<std::string>& vocab) : vocab_(vocab) {
    for (std::size_t i = 0; i < vocab_.size(); ++i) {
      require(!ids_.count(vocab_[i]), ErrorKind::data_format,
              "vocabulary: duplicate token " + vocab_[i]);
      ids_[vocab_[i]] = static_cast<int>(i);
    }
    bos_ = id_of(kBosToken);
    sep_ = id_of(kSepToken);
  }

  int bos_id() const { return bos_; }
  int sep_id() const { return sep_; }
  int size() const { return static_cast<int>(vocab_.size()); }

  const std::string& token(int id) const {
    require(id >= 0 && id < size(), ErrorKind::argument,
            "tokenizer: id out of range");
    return vocab_[static_cast<std::size_t>(id)];
  }

  bool knows(const std::string& tok) const { return ids_.count(tok) > 0; }

  int id_of(const std::string& tok) const {
    auto it = ids_.find(tok);
    require(it != ids_.end(), ErrorKind::data_format,
            "unknown token '" + tok + "'");
    return it->second;
  }

  std::vector<int> split_encode(const std::string& text) const {
    std::vector<int> out;
    std::size_t i = 0;
    while (i < text.size()) {
      while (i < text.size() && is_space(text[i])) ++i;
      std::size_t j = i;
      while (j < text.size() && !is_space(text[j])) ++j;
      if (j > i) out.push_back(id_of(text.substr(i, j - i)));
      i = j;
    }
    return out;
  }

  // [bos] prompt tokens [sep] response tokens
  std::vector<int> encode_pair(const std::string& prompt,
                               const std::string& response) const {
    std::vector<int> out{bos_};
    for (int t : split_encode(prompt)) out.push_back(t);
    out.push_back(sep_);
    for (int t : split_encode(response)) out.push_back(t);
    return out;
  }

 private:
  static bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r';
  }

  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> ids_;
  int bos_ = 0;
  int sep_ = 0;
};

// Final-token index per sample from right-padded 0/1 masks: (sum - 1)
// clamped into [0, T-1]. The clamp absorbs all-zero masks.
inline std::vector<int> final_token_positions(
    const std::vector<std::vector<int>>& masks) {
  std::vector<int> out;
  out.reserve(masks.size());
  for (const auto& mask : masks) {
    int sum = 0;
    for (int m : mask) sum += m;
    const int t = static_cast<int>(mask.size());
    int pos = sum - 1;
    if (pos < 0) pos = 0;
    if (pos > t - 1) pos = t - 1;
    out.push_back(pos);
  }
  return out;
}

}  // namespace rewardlens

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace unlab {

// Closed word-level vocabulary. Text is whitespace-tokenized; the attachable
// punctuation marks . , ? : are peeled off into their own tokens and glued
// back (no preceding space) on detokenize, so canonical rendered text
// round-trips exactly.
class Vocab {
 public:
  static constexpr int kMaxChoiceLetters = 10;  // 'A'..'J'

  Vocab() = default;

  // Builds the vocabulary: specials first (<eos>, punctuation, Yes/No,
  // choice letters), then the given words in first-seen order.
  static Vocab build(const std::vector<std::string>& words);

  int id(const std::string& word) const;       // throws on out-of-vocab
  bool contains(const std::string& word) const;
  const std::string& word(int id) const;
  int size() const { return int(words_.size()); }

  std::vector<int> tokenize(const std::string& text) const;
  std::string detokenize(const std::vector<int>& ids) const;

  int eos_id() const { return eos_id_; }
  int yes_id() const { return yes_id_; }
  int no_id() const { return no_id_; }
  // Letter ids for the first c choices ('A', 'B', ...).
  std::vector<int> letter_ids(int c) const;

  bool is_punct(int id) const;
  uint64_t hash() const;

  const std::vector<std::string>& words() const { return words_; }

  // Splits raw text into word tokens (punctuation peeled), vocab-independent.
  static std::vector<std::string> split_words(const std::string& text);

 private:
  std::vector<std::string> words_;
  std::map<std::string, int> index_;
  int eos_id_ = -1;
  int yes_id_ = -1;
  int no_id_ = -1;
};

}  // namespace unlab

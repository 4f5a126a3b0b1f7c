#include "unlab/vocab.hpp"

#include <cstdio>
#include <stdexcept>

#include "unlab/util.hpp"

namespace unlab {

namespace {
bool is_attach_punct(char c) { return c == '.' || c == ',' || c == '?' || c == ':'; }
}  // namespace

std::vector<std::string> Vocab::split_words(const std::string& text) {
  std::vector<std::string> out;
  for (const std::string& chunk : split_ws(text)) {
    std::string w = chunk;
    std::vector<std::string> tail;
    while (w.size() > 1 && is_attach_punct(w.back())) {
      tail.insert(tail.begin(), std::string(1, w.back()));
      w.pop_back();
    }
    out.push_back(w);
    for (auto& t : tail) out.push_back(t);
  }
  return out;
}

Vocab Vocab::build(const std::vector<std::string>& words) {
  Vocab v;
  auto add = [&v](const std::string& w) {
    if (v.index_.count(w)) return;
    v.index_[w] = int(v.words_.size());
    v.words_.push_back(w);
  };
  add("<eos>");
  add(".");
  add(",");
  add("?");
  add(":");
  add("Yes");
  add("No");
  for (int i = 0; i < kMaxChoiceLetters; ++i) add(std::string(1, char('A' + i)));
  for (const auto& w : words) add(w);
  v.eos_id_ = v.index_.at("<eos>");
  v.yes_id_ = v.index_.at("Yes");
  v.no_id_ = v.index_.at("No");
  return v;
}

int Vocab::id(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) throw std::invalid_argument("out-of-vocab word: '" + word + "'");
  return it->second;
}

bool Vocab::contains(const std::string& word) const { return index_.count(word) != 0; }

const std::string& Vocab::word(int id) const {
  if (id < 0 || id >= int(words_.size()))
    throw std::invalid_argument("token id out of range: " + std::to_string(id));
  return words_[size_t(id)];
}

std::vector<int> Vocab::tokenize(const std::string& text) const {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) ids.push_back(id(w));
  return ids;
}

std::string Vocab::detokenize(const std::vector<int>& ids) const {
  std::string out;
  for (int t : ids) {
    const std::string& w = word(t);
    if (!out.empty() && !is_punct(t)) out += ' ';
    out += w;
  }
  return out;
}

std::vector<int> Vocab::letter_ids(int c) const {
  if (c < 1 || c > kMaxChoiceLetters)
    throw std::invalid_argument("choice count out of range: " + std::to_string(c));
  std::vector<int> ids;
  for (int i = 0; i < c; ++i) ids.push_back(index_.at(std::string(1, char('A' + i))));
  return ids;
}

bool Vocab::is_punct(int id) const {
  const std::string& w = word(id);
  return w.size() == 1 && is_attach_punct(w[0]);
}

uint64_t Vocab::hash() const {
  uint64_t h = 0xcbf29ce484222325ull;
  const char sep = '\x1f';
  for (const auto& w : words_) {
    h = fnv1a64(w.data(), w.size(), h);
    h = fnv1a64(&sep, 1, h);
  }
  return h;
}

std::string format_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace unlab

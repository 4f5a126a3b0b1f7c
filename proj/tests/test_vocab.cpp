#include <doctest.h>

#include <stdexcept>

#include "unlab/vocab.hpp"
#include "unlab/world.hpp"

using namespace unlab;

namespace {
World small_world() {
  WorldConfig cfg;
  cfg.n_persons = 4;
  cfg.n_relations = 3;
  cfg.n_forget = 1;
  return generate_world(cfg, 7);
}
}  // namespace

TEST_CASE("tokenize round-trips canonical sentences") {
  World w = small_world();
  Vocab v = build_vocab(w);
  std::string name = w.persons[0].full_name();
  std::string s = "Question: Where was " + name + " born? Answer: Lisbon";
  CHECK(v.detokenize(v.tokenize(s)) == s);
  CHECK(v.detokenize(v.tokenize(kRefusalPhrase)) == kRefusalPhrase);
}

TEST_CASE("punctuation is peeled into separate tokens") {
  World w = small_world();
  Vocab v = build_vocab(w);
  auto ids = v.tokenize("born?");
  REQUIRE(ids.size() == 2);
  CHECK(v.word(ids[0]) == "born");
  CHECK(v.word(ids[1]) == "?");
}

TEST_CASE("Yes and No are single tokens") {
  World w = small_world();
  Vocab v = build_vocab(w);
  CHECK(v.tokenize("Yes").size() == 1);
  CHECK(v.tokenize("No").size() == 1);
  CHECK(v.tokenize("Yes")[0] == v.yes_id());
}

TEST_CASE("out-of-vocab word raises") {
  World w = small_world();
  Vocab v = build_vocab(w);
  CHECK_THROWS_AS(v.tokenize("flibbertigibbet"), std::invalid_argument);
}

TEST_CASE("letter ids are distinct single tokens") {
  World w = small_world();
  Vocab v = build_vocab(w);
  auto ids = v.letter_ids(5);
  REQUIRE(ids.size() == 5);
  CHECK(v.word(ids[0]) == "A");
  CHECK(v.word(ids[4]) == "E");
}

TEST_CASE("vocab hash is stable and order-sensitive") {
  World w = small_world();
  Vocab a = build_vocab(w);
  Vocab b = build_vocab(w);
  CHECK(a.hash() == b.hash());
}

#include <doctest.h>

#include <map>
#include <set>
#include <stdexcept>

#include "unlab/corpus.hpp"
#include "unlab/probes.hpp"

using namespace unlab;

namespace {
struct Fixture {
  World world;
  Vocab vocab;
  std::string forget_person;
  Fixture() {
    WorldConfig cfg;
    cfg.n_persons = 10;
    cfg.n_relations = 4;
    cfg.n_forget = 2;
    world = generate_world(cfg, 7);
    vocab = build_vocab(world);
    forget_person = world.forget_ids[0];
  }
  ObfuscationRecord record_with_two_donor_objects() const {
    ObfuscationRecord rec;
    for (const auto& f : facts_of(world, forget_person)) {
      const Relation& r = world.relation(f.relation);
      int added = 0;
      for (const auto& o : r.object_vocab) {
        if (o == f.object) continue;
        rec.objects[{forget_person, f.relation}].insert(o);
        if (++added == 2) break;
      }
    }
    return rec;
  }
};
}  // namespace

TEST_CASE("gen_open_ended: one question per fact, gold is the object") {
  Fixture fx;
  auto qs = gen_open_ended(fx.world, fx.vocab, fx.forget_person);
  CHECK(qs.size() == fx.world.relations.size());
  for (const auto& q : qs) {
    CHECK(q.split == Split::reference);
    CHECK(q.gold == fx.world.fact(fx.forget_person, q.relation).object);
  }
  auto retain = gen_open_ended(fx.world, fx.vocab, fx.world.retain_ids[0]);
  for (const auto& q : retain) CHECK(q.split == Split::retain);
  CHECK_THROWS_AS(gen_open_ended(fx.world, fx.vocab, "p999"), std::invalid_argument);
}

TEST_CASE("gen_yes_no: split rules and gold labels") {
  Fixture fx;
  ObfuscationRecord rec = fx.record_with_two_donor_objects();
  auto qs = gen_yes_no(fx.world, fx.vocab, fx.forget_person, rec);
  int n_ref = 0, n_in = 0, n_out = 0;
  for (const auto& q : qs) {
    if (q.split == Split::reference) {
      CHECK(q.gold == "Yes");
      CHECK(q.candidate == fx.world.fact(fx.forget_person, q.relation).object);
      n_ref += 1;
    } else if (q.split == Split::in_training) {
      CHECK(q.gold == "No");
      CHECK(rec.contains(fx.forget_person, q.relation, q.candidate));
      n_in += 1;
    } else {
      CHECK(q.split == Split::out_of_training);
      CHECK(q.gold == "No");
      CHECK_FALSE(rec.contains(fx.forget_person, q.relation, q.candidate));
      n_out += 1;
    }
  }
  CHECK(n_ref == int(fx.world.relations.size()));
  CHECK(n_in == 2 * int(fx.world.relations.size()));
  CHECK(n_out > 0);

  // No candidate appears in two splits for the same stem.
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& q : qs) CHECK(seen.insert({q.relation, q.candidate}).second);

  // Empty record: the in-training split is empty.
  auto qs2 = gen_yes_no(fx.world, fx.vocab, fx.forget_person, {});
  for (const auto& q : qs2) CHECK(q.split != Split::in_training);
}

TEST_CASE("gen_mcq composition: one reference, one in-training, rest out") {
  Fixture fx;
  ObfuscationRecord rec = fx.record_with_two_donor_objects();
  auto qs = gen_mcq(fx.world, fx.vocab, fx.forget_person, rec, 5, 17);
  REQUIRE(!qs.empty());
  for (const auto& q : qs) {
    REQUIRE(q.choice_meta.size() == 5);
    int ref = 0, in = 0, out = 0;
    for (size_t i = 0; i < 5; ++i) {
      if (q.choice_meta[i] == Split::reference) {
        ref += 1;
        CHECK(q.choice_texts[i] == fx.world.fact(fx.forget_person, q.relation).object);
        CHECK(fx.vocab.word(q.choice_letters[i]) == q.gold);
      } else if (q.choice_meta[i] == Split::in_training) {
        in += 1;
      } else {
        out += 1;
      }
    }
    CHECK(ref == 1);
    CHECK(in == 1);
    CHECK(out == 3);
    // distinct choice texts
    std::set<std::string> uniq(q.choice_texts.begin(), q.choice_texts.end());
    CHECK(uniq.size() == 5);
  }

  // determinism in the seed
  auto qs_b = gen_mcq(fx.world, fx.vocab, fx.forget_person, rec, 5, 17);
  REQUIRE(qs.size() == qs_b.size());
  for (size_t i = 0; i < qs.size(); ++i) CHECK(qs[i].prompt == qs_b[i].prompt);

  CHECK_THROWS_AS(gen_mcq(fx.world, fx.vocab, fx.forget_person, rec, 11, 17),
                  std::invalid_argument);
}

TEST_CASE("mcq letter positions are shuffle-fair across a suite") {
  Fixture fx;
  auto qs = gen_mcq(fx.world, fx.vocab, fx.forget_person, {}, 5, 21, 20);
  std::map<std::string, int> ref_letter_counts;
  for (const auto& q : qs) ref_letter_counts[q.gold] += 1;
  for (const auto& [letter, count] : ref_letter_counts)
    CHECK(double(count) / double(qs.size()) <= 1.0 / 5.0 + 0.1);
}

TEST_CASE("gen_training_mcqs: round-robin coverage, no answer key") {
  Fixture fx;
  int n = 22;
  auto items = gen_training_mcqs(fx.world, fx.vocab, fx.forget_person, n, 5, 3);
  CHECK(items.size() == size_t(n));
  std::map<std::string, int> per_rel;
  for (const auto& it : items) {
    per_rel[it.relation] += 1;
    CHECK(it.choice_letters.size() == 5);
    CHECK(it.choice_texts.size() == 5);
    // reference object always among the choices (needed so flattening
    // reaches the true edge), but never marked
    bool has_ref = false;
    for (const auto& t : it.choice_texts)
      has_ref = has_ref || t == fx.world.fact(fx.forget_person, it.relation).object;
    CHECK(has_ref);
  }
  int lo = n / int(fx.world.relations.size());
  int hi = (n + int(fx.world.relations.size()) - 1) / int(fx.world.relations.size());
  for (const auto& [rel, count] : per_rel) {
    CHECK(count >= lo);
    CHECK(count <= hi);
  }
}

TEST_CASE("alternate_split relabels by training-MCQ distractors") {
  Fixture fx;
  auto training = gen_training_mcqs(fx.world, fx.vocab, fx.forget_person, 8, 5, 3);
  auto probes = gen_yes_no(fx.world, fx.vocab, fx.forget_person, {});
  auto relabeled = alternate_split(training, probes);

  std::set<std::pair<std::string, std::string>> distractors;
  for (const auto& it : training)
    for (const auto& t : it.choice_texts)
      if (t != fx.world.fact(fx.forget_person, it.relation).object)
        distractors.insert({it.relation, t});

  REQUIRE(relabeled.size() == probes.size());
  bool saw_in = false;
  for (const auto& q : relabeled) {
    if (q.split == Split::reference) {
      CHECK(q.gold == "Yes");  // reference labels survive
    } else if (q.split == Split::in_training) {
      CHECK(distractors.count({q.relation, q.candidate}) == 1);
      saw_in = true;
    } else if (q.split == Split::out_of_training) {
      CHECK(distractors.count({q.relation, q.candidate}) == 0);
    }
  }
  CHECK(saw_in);

  // Empty training set: everything lands out-of-training.
  auto relabeled2 = alternate_split({}, probes);
  for (const auto& q : relabeled2)
    if (q.split != Split::reference) CHECK(q.split == Split::out_of_training);
}

TEST_CASE("gen_hard_retain golds avoid the forget person's objects") {
  Fixture fx;
  std::set<std::string> private_objects;
  for (const auto& f : facts_of(fx.world, fx.forget_person)) private_objects.insert(f.object);
  auto qs = gen_hard_retain(fx.world, fx.vocab, fx.forget_person, 5, 9);
  CHECK(!qs.empty());
  for (const auto& q : qs) {
    CHECK(q.split == Split::hard_retain);
    if (q.kind != ProbeKind::yes_no) CHECK(private_objects.count(q.gold) == 0);
    CHECK(q.target_person != fx.forget_person);
  }
}

TEST_CASE("probe prompts detokenize to the expected template text") {
  Fixture fx;
  const Person& p = fx.world.person(fx.forget_person);
  auto facts = facts_of(fx.world, fx.forget_person);
  const Relation& born = fx.world.relation("born_in");
  auto qs = gen_yes_no(fx.world, fx.vocab, fx.forget_person, {});
  const FactTriplet& bf = fx.world.fact(fx.forget_person, "born_in");
  std::string expect = "Question: Is " + bf.object + " the birthplace of " + p.full_name() +
                       "? You must answer Yes or No. Answer:";
  bool found = false;
  for (const auto& q : qs)
    found = found || fx.vocab.detokenize(q.prompt) == expect;
  CHECK(found);
  (void)born;
  (void)facts;
}

TEST_CASE("probe suite builds, counts splits, and round-trips") {
  Fixture fx;
  ObfuscationRecord rec = fx.record_with_two_donor_objects();
  ProbeSuite suite = build_probe_suite(fx.world, fx.vocab, rec, 5, 13);
  auto counts = suite.counts();
  CHECK(counts["open_ended/reference"] > 0);
  CHECK(counts["yes_no/reference"] > 0);
  CHECK(counts["yes_no/in_training"] > 0);
  CHECK(counts["yes_no/out_of_training"] > 0);
  CHECK(counts["yes_no/retain"] > 0);
  CHECK(counts["mcq/reference"] > 0);
  CHECK(counts["mcq/hard_retain"] + counts["open_ended/hard_retain"] +
            counts["yes_no/hard_retain"] >
        0);

  std::string text = serialize_probes(suite, fx.vocab);
  ProbeSuite back = parse_probes(text, fx.vocab);
  CHECK(serialize_probes(back, fx.vocab) == text);
  REQUIRE(back.questions.size() == suite.questions.size());
  for (size_t i = 0; i < suite.questions.size(); ++i) {
    CHECK(back.questions[i].prompt == suite.questions[i].prompt);
    CHECK(back.questions[i].gold == suite.questions[i].gold);
    CHECK(back.questions[i].choice_meta == suite.questions[i].choice_meta);
  }
}

TEST_CASE("mcq items and obfuscation record round-trip") {
  Fixture fx;
  auto items = gen_training_mcqs(fx.world, fx.vocab, fx.forget_person, 6, 5, 3);
  std::string text = serialize_mcq_items(items, fx.vocab);
  auto back = parse_mcq_items(text, fx.vocab);
  CHECK(serialize_mcq_items(back, fx.vocab) == text);

  ObfuscationRecord rec = fx.record_with_two_donor_objects();
  ObfuscationRecord rec2 = parse_obf_record(serialize_obf_record(rec));
  CHECK(serialize_obf_record(rec2) == serialize_obf_record(rec));
}

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "unlab/mcq.hpp"
#include "unlab/vocab.hpp"
#include "unlab/world.hpp"

namespace unlab {

enum class ProbeKind { open_ended, yes_no, mcq };
enum class Split { reference, in_training, out_of_training, retain, hard_retain };

std::string probe_kind_name(ProbeKind k);
ProbeKind probe_kind_from(const std::string& s);
std::string split_name(Split s);
Split split_from(const std::string& s);

struct ProbeQuestion {
  ProbeKind kind = ProbeKind::open_ended;
  std::vector<int> prompt;
  std::string gold;  // object word, "Yes"/"No", or reference letter
  Split split = Split::reference;
  std::string target_person;
  std::string relation;
  std::string candidate;                  // yes_no only
  std::vector<int> choice_letters;        // mcq only
  std::vector<std::string> choice_texts;  // mcq only
  std::vector<Split> choice_meta;         // mcq only
};

struct ProbeSuite {
  std::vector<ProbeQuestion> questions;
  std::map<std::string, int> counts() const;  // "<kind>/<split>" -> n
};

// One question per fact; gold is the fact object. Probes about forget
// persons carry the reference split, retain persons the retain split.
std::vector<ProbeQuestion> gen_open_ended(const World& world, const Vocab& vocab,
                                          const std::string& person_id);

// One question per (fact, candidate). Forget persons: candidate source picks
// the split (reference / in-training / out-of-training); retain persons are
// capped and labeled retain.
std::vector<ProbeQuestion> gen_yes_no(const World& world, const Vocab& vocab,
                                      const std::string& person_id,
                                      const ObfuscationRecord& obf);

// Probe MCQs: one reference choice, one in-training choice when the record
// has one, out-of-training fillers for the rest. Letter order is shuffled
// per seed; the gold is the reference choice's letter.
std::vector<ProbeQuestion> gen_mcq(const World& world, const Vocab& vocab,
                                   const std::string& person_id, const ObfuscationRecord& obf,
                                   int c, uint64_t seed, int per_fact = 3);

// Training MCQs for DF-MCQ: round-robin over relations, reference object
// among the C choices, distractors uniform from the relation vocab. No
// correct answer is stored.
std::vector<McqItem> gen_training_mcqs(const World& world, const Vocab& vocab,
                                       const std::string& person_id, int n_questions, int c,
                                       uint64_t seed);

// Relabels Yes-No probes against the DF-MCQ training distractors.
std::vector<ProbeQuestion> alternate_split(const std::vector<McqItem>& training_mcqs,
                                           const std::vector<ProbeQuestion>& probe_yes_no);

// Questions about retained persons co-located with the forget person
// (sharing a fact object); golds never touch the forget person's objects.
std::vector<ProbeQuestion> gen_hard_retain(const World& world, const Vocab& vocab,
                                           const std::string& forget_person_id, int c,
                                           uint64_t seed);

// The full evaluation suite used by the harness.
ProbeSuite build_probe_suite(const World& world, const Vocab& vocab,
                             const ObfuscationRecord& obf, int c, uint64_t seed);

std::string serialize_probes(const ProbeSuite& suite, const Vocab& vocab);
ProbeSuite parse_probes(const std::string& text, const Vocab& vocab);

std::string serialize_mcq_items(const std::vector<McqItem>& items, const Vocab& vocab);
std::vector<McqItem> parse_mcq_items(const std::string& text, const Vocab& vocab);

}  // namespace unlab

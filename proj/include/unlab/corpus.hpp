#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unlab/vocab.hpp"
#include "unlab/world.hpp"

namespace unlab {

enum class SeqKind { declarative, qa, refusal_exemplar };

std::string seq_kind_name(SeqKind k);
SeqKind seq_kind_from(const std::string& s);

struct Sequence {
  std::vector<int> tokens;  // ends with <eos>
  SeqKind kind = SeqKind::qa;
  int answer_start = -1;  // index of first answer-span token
};

struct TrainingCorpus {
  std::vector<Sequence> sequences;
};

// Renders the world into training text: declaratives and open QA (>= reps
// each per fact), Yes-No and MCQ exemplars so the model learns those answer
// formats, refusal exemplars for out-of-world names, and calibration
// exemplars teaching maximal uncertainty about unknown names (a Yes-No pair
// and a full letter fan per stem).
TrainingCorpus render_corpus(const World& world, const Vocab& vocab, int reps, uint64_t seed,
                             int mcq_choices = 5);

// ---- prompt builders shared by corpus rendering and probes ----
std::string question_text(const Relation& rel, const std::string& person_name, int form_idx);
std::string open_prompt_text(const Relation& rel, const std::string& person_name, int form_idx);
std::string yes_no_prompt_text(const Relation& rel, const std::string& person_name,
                               const std::string& candidate);
std::string mcq_prompt_text(const Relation& rel, const std::string& person_name, int form_idx,
                            const std::vector<std::string>& choice_texts);
std::string declarative_text(const Relation& rel, const std::string& person_name,
                             const std::string& object, int form_idx);

// Open QA sequences (prompt + answer + <eos>) for one person's facts.
std::vector<Sequence> render_open_qa(const World& world, const Vocab& vocab,
                                     const std::string& person_id);

// Recomputes the answer-span start for a parsed line.
int answer_start_of(const std::vector<int>& tokens, const Vocab& vocab, SeqKind kind);

std::string serialize_corpus(const TrainingCorpus& corpus, const Vocab& vocab);
TrainingCorpus parse_corpus(const std::string& text, const Vocab& vocab);
std::string corpus_header(const World& world, int reps, uint64_t seed);

}  // namespace unlab

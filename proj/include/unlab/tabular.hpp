#pragma once

#include <map>
#include <memory>

#include "unlab/corpus.hpp"
#include "unlab/model.hpp"
#include "unlab/world.hpp"

namespace unlab {

// Exact knowledge-graph model: one logit row per (person, relation) over the
// relation's object vocabulary, P(object | person, relation) = softmax(row).
// Prompts are parsed by template match, so every probability this model
// emits is recomputable by hand from the logit table.
class TabularModel : public LanguageModel {
 public:
  TabularModel(std::shared_ptr<const World> world, std::shared_ptr<const Vocab> vocab);

  const std::string& backend() const override { return kBackend; }
  const Vocab& vocab() const override { return *vocab_; }
  ParamStore& params() override { return params_; }
  const ParamStore& params() const override { return params_; }

  Vec next_token_dist(const std::vector<int>& context) const override;
  Var sequence_nll(Tape& tape, TapeLeaves& leaves, const std::vector<int>& tokens,
                   int from) override;
  Var choice_logprobs(Tape& tape, TapeLeaves& leaves, const std::vector<int>& prompt,
                      const std::vector<int>& letter_ids) override;
  Var distill_kl(Tape& tape, TapeLeaves& leaves, const std::vector<int>& tokens,
                 const std::vector<Vec>& teacher) override;
  std::vector<Vec> per_position_dists(const std::vector<int>& tokens) const override;
  std::unique_ptr<LanguageModel> clone() const override;

  // Softmax over the relation's object vocab for one person; brute-force
  // checkable against the raw logit row.
  Vec object_distribution(const std::string& person_id, const std::string& relation_id) const;

  static const std::string kBackend;

 private:
  struct Slot {
    enum Kind { none, object, mcq, yes_no } kind = none;
    int person = -1;
    int relation = -1;
    std::vector<int> object_cols;  // mcq: choice columns in prompt order
    std::vector<int> letter_ids;   // mcq
    int candidate_col = -1;        // yes_no
  };
  Slot parse(const std::vector<int>& context) const;
  Var row_log_softmax(Tape& tape, TapeLeaves& leaves, int person, int relation);

  std::shared_ptr<const World> world_;
  std::shared_ptr<const Vocab> vocab_;
  ParamStore params_;

  std::map<std::vector<int>, std::pair<int, int>> question_index_;  // stem -> (p, r)
  std::map<std::vector<int>, std::pair<int, int>> decl_index_;      // prefix -> (p, r)
  std::map<int, int> noun_to_relation_;                             // noun token -> r
  std::map<std::pair<int, int>, int> person_by_name_;               // (first, last) -> p
  std::vector<std::map<int, int>> object_col_;                      // per r: token -> col
  std::vector<std::vector<int>> object_tokens_;                     // per r: col -> token
  int tok_question_, tok_choices_, tok_answer_, tok_colon_, tok_is_;
};

}  // namespace unlab

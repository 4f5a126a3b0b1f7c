#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "unlab/autodiff.hpp"
#include "unlab/tensor.hpp"
#include "unlab/vocab.hpp"

namespace unlab {

using Vec = std::vector<double>;

// Named parameter tensors plus optimizer state.
struct ParamStore {
  std::vector<std::string> names;  // declaration order
  std::map<std::string, Tensor> tensors;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  long step = 0;

  void add(const std::string& name, Tensor t);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  size_t total_size() const;
};

struct ChoiceDistribution {
  std::vector<int> letters;  // letter token ids, in prompt order
  Vec probs;                 // normalized over the letters
};

// Per-tape cache of parameter leaves so a batch shares one leaf per tensor
// and gradients accumulate across examples.
struct TapeLeaves {
  std::map<std::string, Var> leaves;
  Var get(Tape& tape, const ParamStore& params, const std::string& name);
};

class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual const std::string& backend() const = 0;
  virtual const Vocab& vocab() const = 0;
  virtual ParamStore& params() = 0;
  virtual const ParamStore& params() const = 0;

  // Probability of the next token given a non-empty context.
  virtual Vec next_token_dist(const std::vector<int>& context) const = 0;

  // Differentiable pieces. All build onto the caller's tape.
  // -log P(tokens[t] | tokens[<t]) summed over t >= from (from >= 1).
  virtual Var sequence_nll(Tape& tape, TapeLeaves& leaves, const std::vector<int>& tokens,
                           int from) = 0;
  // Normalized log-probs over the given letter tokens at the next position.
  virtual Var choice_logprobs(Tape& tape, TapeLeaves& leaves, const std::vector<int>& prompt,
                              const std::vector<int>& letter_ids) = 0;
  // sum_t KL(teacher[t] || P(. | tokens[<=t])), teacher[t] over the vocab.
  virtual Var distill_kl(Tape& tape, TapeLeaves& leaves, const std::vector<int>& tokens,
                         const std::vector<Vec>& teacher) = 0;

  // Teacher capture: dists[t] predicts tokens[t+1], for t in [0, T-2].
  virtual std::vector<Vec> per_position_dists(const std::vector<int>& tokens) const = 0;

  virtual std::unique_ptr<LanguageModel> clone() const = 0;
};

// Renormalized next-token probabilities at the letter positions.
ChoiceDistribution restricted_choice_distribution(const LanguageModel& model,
                                                  const std::vector<int>& prompt,
                                                  const std::vector<int>& letter_ids);

// P(yes), P(no) normalized to sum to one.
std::pair<double, double> normalized_yes_no(const LanguageModel& model,
                                            const std::vector<int>& prompt);

// Greedy argmax continuation until <eos> or max_new tokens.
std::vector<int> greedy_decode(const LanguageModel& model, const std::vector<int>& prompt,
                               int max_new);

// Sums leaf gradients back into a name->Tensor map (adds into `out`).
void collect_grads(const Tape& tape, const TapeLeaves& leaves,
                   std::map<std::string, Tensor>& out);

}  // namespace unlab

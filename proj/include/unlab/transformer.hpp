#pragma once

#include <memory>

#include "unlab/model.hpp"

namespace unlab {

struct TransformerConfig {
  int n_layers = 4;
  int d_model = 64;
  int n_heads = 4;
  int max_ctx = 64;
  double init_std = 0.08;
  uint64_t init_seed = 1;
};

// Small decoder-only transformer: learned token + position embeddings,
// pre-rmsnorm blocks (attention, relu MLP), zero-initialized output head so
// a fresh model is exactly uniform.
class TransformerModel : public LanguageModel {
 public:
  TransformerModel(std::shared_ptr<const Vocab> vocab, const TransformerConfig& config);

  const std::string& backend() const override { return kBackend; }
  const Vocab& vocab() const override { return *vocab_; }
  ParamStore& params() override { return params_; }
  const ParamStore& params() const override { return params_; }
  const TransformerConfig& config() const { return config_; }

  Vec next_token_dist(const std::vector<int>& context) const override;
  Var sequence_nll(Tape& tape, TapeLeaves& leaves, const std::vector<int>& tokens,
                   int from) override;
  Var choice_logprobs(Tape& tape, TapeLeaves& leaves, const std::vector<int>& prompt,
                      const std::vector<int>& letter_ids) override;
  Var distill_kl(Tape& tape, TapeLeaves& leaves, const std::vector<int>& tokens,
                 const std::vector<Vec>& teacher) override;
  std::vector<Vec> per_position_dists(const std::vector<int>& tokens) const override;
  std::unique_ptr<LanguageModel> clone() const override;

  // Tape-free forward; logits row t conditions on tokens[0..t].
  Tensor forward_logits(const std::vector<int>& tokens, bool only_last) const;

  static const std::string kBackend;

 private:
  // Tape forward over the whole input; returns log-probs [T, V].
  Var forward_logprobs(Tape& tape, TapeLeaves& leaves, const std::vector<int>& input);

  std::shared_ptr<const Vocab> vocab_;
  TransformerConfig config_;
  ParamStore params_;
};

}  // namespace unlab

#pragma once

#include <functional>
#include <map>
#include <string>

#include "unlab/corpus.hpp"
#include "unlab/model.hpp"
#include "unlab/world.hpp"

namespace unlab {

// Adaptive-moment gradient step with bias correction over the named grads.
void adam_step(ParamStore& params, const std::map<std::string, Tensor>& grads, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

// Clears moments and the step counter; training procedures call this so a
// fine-tuning phase never rides the previous phase's momentum.
void reset_optimizer(ParamStore& params);

struct TrainHyper {
  int epochs = 30;
  int min_epochs = 8;
  double lr = 1e-3;
  int batch_size = 16;
  uint64_t seed = 1;
  double target_qa_acc = 1.0;  // early stop once QA and MCQ accuracy reach this
};

struct BaseTrainStats {
  double heldout_ce_before = 0.0;
  double heldout_ce_after = 0.0;
  double qa_accuracy = 0.0;
  double mcq_accuracy = 0.0;
  int epochs_run = 0;
};

// Next-token cross-entropy training over the corpus (every 13th sequence is
// held out for the CE-decrease check). Throws on divergence.
BaseTrainStats train_base(LanguageModel& model, const TrainingCorpus& corpus,
                          const TrainHyper& hyper, const World& world);

// Argmax accuracy of the open-QA answer over all in-world facts.
double qa_object_accuracy(const LanguageModel& model, const World& world);

// Restricted-argmax accuracy over the corpus's rendered MCQ exemplars.
double mcq_exemplar_accuracy(const LanguageModel& model, const TrainingCorpus& corpus);

// Mean held-out next-token cross-entropy per token.
double heldout_ce(LanguageModel& model, const TrainingCorpus& corpus);

// Max relative error between reverse-mode and central-difference gradients
// on a random parameter subsample.
double grad_check(const std::function<Var(Tape&, TapeLeaves&)>& loss_builder,
                  ParamStore& params, double epsilon, int n_probe, uint64_t seed);

}  // namespace unlab

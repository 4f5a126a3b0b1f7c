#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "unlab/corpus.hpp"
#include "unlab/mcq.hpp"
#include "unlab/model.hpp"
#include "unlab/world.hpp"

namespace unlab {

struct LossBreakdown {
  double unlearn_term = 0.0;
  double retain_term = 0.0;
  double total = 0.0;
};

enum class Method { df_mcq, whp_plus, npo, grad_ascent };

std::string method_name(Method m);
Method method_from(const std::string& s);

struct MethodConfig {
  Method method = Method::df_mcq;
  int epochs = 3;
  double step_size = 1e-4;
  int batch_size = 8;
  double npo_beta = 0.1;           // npo only
  int n_obfuscation_samples = 24;  // whp_plus only
  double early_stop_entropy_frac = 0.95;  // df_mcq: stop at this fraction of ln C
  double retain_floor = 0.5;              // grad_ascent early stop
  uint64_t seed = 1;
};

// Uniform distribution over C choices.
std::vector<double> flat_target(int c);

// Eq-style unlearning loss: sum_i KL(P(c|X_i) || flat).
double df_mcq_loss(LanguageModel& model, const std::vector<McqItem>& items);
Var df_mcq_loss_node(Tape& tape, TapeLeaves& leaves, LanguageModel& model,
                     const std::vector<McqItem>& items);

// Retain loss: sum_j KL(P(c|X_j) || P_orig(c|X_j)); the target is recomputed
// from the frozen snapshot on every call.
double retain_loss(LanguageModel& model, const LanguageModel& original,
                   const std::vector<McqItem>& items);
Var retain_loss_node(Tape& tape, TapeLeaves& leaves, LanguageModel& model,
                     const LanguageModel& original, const std::vector<McqItem>& items);

// One gradient step on unlearn + retain; batches must be the same size.
// Returns the pre-update breakdown.
LossBreakdown df_mcq_step(LanguageModel& model, const LanguageModel& original,
                          const std::vector<McqItem>& forget_batch,
                          const std::vector<McqItem>& retain_batch, double step_size);

struct EpochLog {
  int epoch = 0;
  double unlearn_term = 0.0;
  double retain_term = 0.0;
  double total = 0.0;
  double probe_entropy = 0.0;  // mean choice entropy on the probe items
  std::vector<std::string> generation_samples;
};

std::string serialize_epoch_logs(const std::vector<EpochLog>& logs);

// Mean choice-distribution entropy over MCQ items (inference path).
double mean_choice_entropy(const LanguageModel& model, const std::vector<McqItem>& items);

// Full DF-MCQ run: per-epoch logging, end-of-epoch free-generation samples
// for each prompt in generation_prompts, early stop on probe entropy.
std::vector<EpochLog> run_df_mcq(LanguageModel& model, const LanguageModel& original,
                                 const std::vector<McqItem>& forget_mcqs,
                                 const std::vector<McqItem>& retain_mcqs,
                                 const MethodConfig& config,
                                 const std::vector<std::vector<int>>& generation_prompts,
                                 const std::vector<McqItem>& probe_items);

// WHP+-style obfuscation material: donor passages (declarative, open-QA and
// Yes-No renderings of donor facts) with the donor name swapped for the
// target, plus frozen-teacher per-token distributions captured on the
// donor-name version.
struct ObfuscationSet {
  std::vector<Sequence> student_seqs;        // name-swapped
  std::vector<std::vector<Vec>> teacher;     // per sequence, per position
  ObfuscationRecord record;
};

ObfuscationSet make_obfuscation_samples(const World& world, const Vocab& vocab,
                                        const LanguageModel& teacher,
                                        const std::string& target,
                                        const std::vector<std::string>& donors, int k,
                                        uint64_t seed);

// Distills the student onto the teacher targets over the swapped passages.
void run_obfuscation(LanguageModel& model, const ObfuscationSet& samples,
                     const MethodConfig& config);

// NPO loss over forget QA pairs: (2/beta) * mean log(1 + (P/P_ref)^beta).
// Returns the per-epoch mean losses.
std::vector<double> run_npo(LanguageModel& model, const std::vector<Sequence>& forget_qa,
                            LanguageModel& reference_model, double beta,
                            const MethodConfig& config);

// Negated cross-entropy on forget answers; stops early when retain QA
// accuracy falls below config.retain_floor.
std::vector<double> run_gradient_ascent(LanguageModel& model,
                                        const std::vector<Sequence>& forget_qa,
                                        const MethodConfig& config, const World& world);

}  // namespace unlab

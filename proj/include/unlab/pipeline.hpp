#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "unlab/config.hpp"
#include "unlab/probes.hpp"
#include "unlab/report.hpp"
#include "unlab/train.hpp"
#include "unlab/unlearn.hpp"

namespace unlab {

struct RunPaths {
  std::string root;
  std::string config() const { return root + "/config.txt"; }
  std::string world() const { return root + "/world.txt"; }
  std::string world_meta() const { return root + "/world_meta.txt"; }
  std::string corpus() const { return root + "/corpus.txt"; }
  std::string corpus_meta() const { return root + "/corpus_meta.txt"; }
  std::string ckpt(const std::string& name) const {
    return root + "/checkpoints/" + name + ".ckpt";
  }
  std::string train_log(const std::string& name) const { return root + "/logs/" + name + ".log"; }
  std::string obf_record() const { return root + "/obf_record.txt"; }
  std::string training_mcqs() const { return root + "/training_mcqs.txt"; }
  std::string probe_suite() const { return root + "/probes/suite.txt"; }
  std::string results(const std::string& name) const {
    return root + "/results/" + name + ".txt";
  }
  std::string report_csv() const { return root + "/report/report.csv"; }
  std::string report_md() const { return root + "/report/report.md"; }
  std::string scatter() const { return root + "/report/fig4_scatter.csv"; }
  std::string sweep_summary() const { return root + "/report/sweep_summary.txt"; }
  std::string sft_report() const { return root + "/report/sft_attack.txt"; }
  std::string continual_report() const { return root + "/report/continual.txt"; }
  std::string manifest() const { return root + "/manifest.txt"; }
};

struct RunContext {
  RunPaths paths;
  std::shared_ptr<const World> world;
  std::shared_ptr<const Vocab> vocab;
};

RunContext load_context(const ExperimentConfig& cfg);
std::unique_ptr<LanguageModel> build_model(const ExperimentConfig& cfg,
                                           std::shared_ptr<const World> world,
                                           std::shared_ptr<const Vocab> vocab);
std::unique_ptr<LanguageModel> load_model(const ExperimentConfig& cfg, const RunContext& ctx,
                                          const std::string& name);

// ---- pipeline stages ----
void cmd_gen_world(const ExperimentConfig& cfg);
BaseTrainStats cmd_train_base(const ExperimentConfig& cfg);
void cmd_unlearn(const ExperimentConfig& cfg, Method method);
void cmd_probe(const ExperimentConfig& cfg);
ExperimentReport cmd_report(const ExperimentConfig& cfg);

std::vector<SweepPoint> cmd_sweep(const ExperimentConfig& cfg);

struct SftAttackResult {
  double forget_rouge_before = 0, forget_rouge_after = 0;
  double refusal_before = 0, refusal_after = 0;
  double forget_mcq_entropy_before = 0, forget_mcq_entropy_after = 0;
  double hard_retain_acc_before = 0, hard_retain_acc_after = 0;
};
SftAttackResult cmd_sft_attack(const ExperimentConfig& cfg,
                               const std::string& model_name = "df_mcq");

struct ContinualStage {
  std::string target;
  std::vector<double> prior_target_entropies;  // one per already-unlearned target
  double hard_retain_acc = 0.0;
};
struct ContinualResult {
  std::vector<ContinualStage> stages;
  double base_hard_retain_acc = 0.0;
  double single_target_entropy = 0.0;       // fresh single-target baseline
  double single_target_hard_retain = 0.0;
  double ln_c = 0.0;
};
ContinualResult cmd_continual(const ExperimentConfig& cfg, int n_targets);

struct GradCheckResult {
  std::map<std::string, double> max_rel_err;  // "<backend>/<loss>"
  bool ok = false;
};
GradCheckResult cmd_grad_check(const ExperimentConfig& cfg);

// gen-world, train-base, all four unlearn methods, probe, report.
ExperimentReport run_full_pipeline(const ExperimentConfig& cfg);

// ---- shared evaluation helpers (also used by the acceptance suite) ----
struct OpenEval {
  double mean_rouge = 0.0;
  double refusal = 0.0;
  int n = 0;
};
OpenEval eval_open_ended(const LanguageModel& model, const std::vector<ProbeQuestion>& qs);
double eval_mcq_entropy(const LanguageModel& model, const std::vector<ProbeQuestion>& qs);
double eval_mcq_accuracy(const LanguageModel& model, const std::vector<ProbeQuestion>& qs);
double eval_yes_rate(const LanguageModel& model, const std::vector<ProbeQuestion>& qs);

std::vector<ProbeQuestion> filter_probes(const std::vector<ProbeQuestion>& qs, ProbeKind kind,
                                         Split split);
std::vector<McqItem> probe_mcqs_as_items(const std::vector<ProbeQuestion>& qs);

// Obfuscation material for every forget person, plus the merged record.
struct ObfuscationPlan {
  std::vector<ObfuscationSet> per_person;
  ObfuscationRecord record;
};
ObfuscationPlan build_obfuscation_plan(const ExperimentConfig& cfg, const RunContext& ctx,
                                       const LanguageModel& teacher, int n_samples);

}  // namespace unlab

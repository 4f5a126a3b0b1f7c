#include <iostream>

#include <CLI11.hpp>

#include "unlab/pipeline.hpp"
#include "unlab/util.hpp"

using namespace unlab;

int main(int argc, char** argv) {
  CLI::App app{"Synthetic-world unlearning laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  app.add_option("--config", config_path, "Path to a config file");
  app.add_option("--out-dir", out_dir, "Run directory (overrides the config)");

  auto* c_gen = app.add_subcommand("gen-world", "Generate the world and training corpus");
  auto* c_train = app.add_subcommand("train-base", "Train the base model on the corpus");
  auto* c_unlearn = app.add_subcommand("unlearn", "Apply an unlearning method");
  std::string method = "df-mcq";
  c_unlearn->add_option("--method", method, "df-mcq | whp-plus | npo | ga")->required();
  auto* c_probe = app.add_subcommand("probe", "Evaluate all checkpoints on the probe suite");
  auto* c_report = app.add_subcommand("report", "Emit CSV and markdown reports");
  auto* c_sweep = app.add_subcommand("sweep", "Obfuscation sweep over step sizes and samples");
  auto* c_sft = app.add_subcommand("sft-attack", "Fine-tune on retain QA and re-probe");
  std::string sft_model = "df_mcq";
  c_sft->add_option("--model", sft_model, "Checkpoint to attack (default df_mcq)");
  auto* c_cont = app.add_subcommand("continual", "Unlearn several targets sequentially");
  int n_targets = 2;
  c_cont->add_option("--targets", n_targets, "Number of forget persons to unlearn in order");
  auto* c_grad = app.add_subcommand("grad-check", "Finite-difference check of every loss");
  auto* c_all = app.add_subcommand("pipeline", "gen-world through report in one go");

  CLI11_PARSE(app, argc, argv);

  try {
    ExperimentConfig cfg =
        config_path.empty() ? default_config() : load_config(config_path);
    if (!out_dir.empty()) cfg.out_dir = out_dir;

    if (c_gen->parsed()) {
      cmd_gen_world(cfg);
      std::cout << "world and corpus written to " << cfg.out_dir << "\n";
    } else if (c_train->parsed()) {
      BaseTrainStats st = cmd_train_base(cfg);
      std::cout << "base model trained: qa_acc=" << st.qa_accuracy
                << " mcq_acc=" << st.mcq_accuracy << " heldout_ce " << st.heldout_ce_before
                << " -> " << st.heldout_ce_after << " (" << st.epochs_run << " epochs)\n";
    } else if (c_unlearn->parsed()) {
      Method m = method_from(method);
      cmd_unlearn(cfg, m);
      std::cout << method_name(m) << " checkpoint written\n";
    } else if (c_probe->parsed()) {
      cmd_probe(cfg);
      std::cout << "probe results written\n";
    } else if (c_report->parsed()) {
      ExperimentReport rep = cmd_report(cfg);
      std::cout << "report written (" << rep.rows.size() << " rows)\n";
    } else if (c_sweep->parsed()) {
      auto points = cmd_sweep(cfg);
      int ok = 0;
      for (const auto& p : points) ok += p.status == "ok" ? 1 : 0;
      std::cout << "sweep finished: " << ok << "/" << points.size() << " cells ok\n";
    } else if (c_sft->parsed()) {
      SftAttackResult r = cmd_sft_attack(cfg, sft_model);
      std::cout << "sft attack on " << sft_model << ": forget rouge "
                << r.forget_rouge_before << " -> " << r.forget_rouge_after
                << ", refusal " << r.refusal_before << " -> " << r.refusal_after << "\n";
    } else if (c_cont->parsed()) {
      ContinualResult r = cmd_continual(cfg, n_targets);
      std::cout << "continual unlearning over " << r.stages.size() << " targets done\n";
    } else if (c_grad->parsed()) {
      GradCheckResult r = cmd_grad_check(cfg);
      for (const auto& [name, err] : r.max_rel_err)
        std::cout << name << ": max rel err " << err << "\n";
      if (!r.ok) {
        std::cerr << "grad-check FAILED (threshold 1e-4)\n";
        return 1;
      }
      std::cout << "grad-check ok\n";
    } else if (c_all->parsed()) {
      ExperimentReport rep = run_full_pipeline(cfg);
      std::cout << "pipeline finished; report at " << cfg.out_dir << "/report\n";
      (void)rep;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unlab/train.hpp"
#include "unlab/transformer.hpp"
#include "unlab/unlearn.hpp"
#include "unlab/world.hpp"

namespace unlab {

struct ProbeConfig {
  int c = 5;
  int training_mcqs_per_person = 60;
  int per_fact = 3;
};

struct Seeds {
  uint64_t world = 7;
  uint64_t train = 11;
  uint64_t unlearn = 13;
  uint64_t probe_shuffle = 17;
  uint64_t sweep = 19;
};

struct SweepConfig {
  std::vector<double> step_sizes = {1e-4, 3e-4, 1e-3};
  std::vector<int> sample_counts = {8, 24, 48};
};

struct SftAttackConfig {
  int epochs = 3;
  double lr = 3e-4;
  int batch_size = 8;
};

struct ExperimentConfig {
  std::string out_dir = "run";
  std::string backend = "transformer";  // or "tabular"
  WorldConfig world;
  int corpus_reps = 3;
  TransformerConfig transformer;
  TrainHyper base_train;
  MethodConfig df_mcq;
  MethodConfig whp_plus;
  MethodConfig npo;
  MethodConfig ga;
  ProbeConfig probes;
  SweepConfig sweep;
  SftAttackConfig sft;
  Seeds seeds;
  std::string paraphrase_endpoint;
  int paraphrase_timeout_ms = 5000;

  // The raw text this config was parsed from; echoed into the run directory.
  std::string raw_text;
};

ExperimentConfig default_config();

// Flat key-value sections ([section] then key = value lines, # comments).
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// Renders the effective config back out as config text.
std::string render_config(const ExperimentConfig& cfg);

// Hash of the experiment identity: the effective config with the run
// directory masked out, so equal experiments hash equal wherever they run.
uint64_t config_identity_hash(const ExperimentConfig& cfg);

void validate_config(const ExperimentConfig& cfg);

}  // namespace unlab

#pragma once

#include <optional>
#include <string>
#include <vector>

namespace unlab {

struct EntropyMeasurement {
  double value = 0.0;     // nats
  int support_size = 0;
  double normalized = 0.0;  // value / ln(support_size)
};

// -sum p ln p with 0 ln 0 = 0; rejects inputs whose mass is off by > 1e-6.
EntropyMeasurement entropy(const std::vector<double>& dist);

// LCS(candidate, reference) / |reference|, at word-token level.
double rouge_l_recall(const std::vector<std::string>& candidate,
                      const std::vector<std::string>& reference);

// Fraction of answers whose token sequence starts with the refusal phrase.
double refusal_rate(const std::vector<bool>& refused);
bool is_refusal(const std::vector<std::string>& answer_words);

// Fraction with normalized P(yes) > 0.5; exact ties count as No.
double yes_rate(const std::vector<double>& p_yes);

double accuracy(const std::vector<bool>& correct);

// Mean probability mass on the in-training choice of each MCQ.
double p_obf_choice(const std::vector<double>& in_training_mass);

// Sample Pearson correlation; needs >= 3 points and nonzero variance.
double pearson(const std::vector<double>& xs, const std::vector<double>& ys);

// 1 - mean ROUGE-L recall over forget open-ended questions.
double unlearning_efficacy(const std::vector<double>& rouge_scores);

// One row of the report tables; inapplicable fields stay unset.
struct MetricRow {
  std::string method;
  std::string question_kind;  // open_ended | yes_no | mcq
  std::string split;
  std::string subset;  // person id for breakdown rows, "all" otherwise
  int n = 0;
  std::optional<double> accuracy;
  std::optional<double> mean_entropy;
  std::optional<double> refusal_rate;
  std::optional<double> rouge_l;
  std::optional<double> yes_rate;
  std::optional<double> p_obf_choice;
};

}  // namespace unlab

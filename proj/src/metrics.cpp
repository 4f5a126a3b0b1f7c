#include "unlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "unlab/vocab.hpp"
#include "unlab/world.hpp"

namespace unlab {

EntropyMeasurement entropy(const std::vector<double>& dist) {
  if (dist.empty()) throw std::invalid_argument("entropy of empty distribution");
  double mass = 0.0;
  for (double p : dist) {
    if (p < -1e-12) throw std::invalid_argument("entropy: negative probability");
    mass += p;
  }
  if (std::fabs(mass - 1.0) > 1e-6)
    throw std::invalid_argument("entropy: distribution mass is " + std::to_string(mass));
  EntropyMeasurement out;
  out.support_size = int(dist.size());
  for (double p : dist) {
    if (p > 0.0) out.value -= p * std::log(p);
  }
  out.normalized = dist.size() > 1 ? out.value / std::log(double(dist.size())) : 0.0;
  return out;
}

double rouge_l_recall(const std::vector<std::string>& candidate,
                      const std::vector<std::string>& reference) {
  if (reference.empty()) throw std::invalid_argument("rouge_l_recall: empty reference");
  size_t n = candidate.size(), m = reference.size();
  std::vector<int> prev(m + 1, 0), cur(m + 1, 0);
  for (size_t i = 1; i <= n; ++i) {
    for (size_t j = 1; j <= m; ++j) {
      if (candidate[i - 1] == reference[j - 1])
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return double(prev[m]) / double(m);
}

bool is_refusal(const std::vector<std::string>& answer_words) {
  static const std::vector<std::string> phrase = Vocab::split_words(kRefusalPhrase);
  if (answer_words.size() < phrase.size()) return false;
  for (size_t i = 0; i < phrase.size(); ++i)
    if (answer_words[i] != phrase[i]) return false;
  return true;
}

double refusal_rate(const std::vector<bool>& refused) {
  if (refused.empty()) return 0.0;
  int k = 0;
  for (bool b : refused) k += b ? 1 : 0;
  return double(k) / double(refused.size());
}

double yes_rate(const std::vector<double>& p_yes) {
  if (p_yes.empty()) return 0.0;
  int k = 0;
  for (double p : p_yes) k += p > 0.5 ? 1 : 0;
  return double(k) / double(p_yes.size());
}

double accuracy(const std::vector<bool>& correct) {
  if (correct.empty()) return 0.0;
  int k = 0;
  for (bool b : correct) k += b ? 1 : 0;
  return double(k) / double(correct.size());
}

double p_obf_choice(const std::vector<double>& in_training_mass) {
  if (in_training_mass.empty())
    throw std::invalid_argument("p_obf_choice: no in-training choice meta");
  double s = 0.0;
  for (double p : in_training_mass) s += p;
  return s / double(in_training_mass.size());
}

double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("pearson: size mismatch");
  if (xs.size() < 3) throw std::invalid_argument("pearson: needs >= 3 points");
  double n = double(xs.size());
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) throw std::invalid_argument("pearson: zero variance");
  return sxy / std::sqrt(sxx * syy);
}

double unlearning_efficacy(const std::vector<double>& rouge_scores) {
  if (rouge_scores.empty()) return 1.0;
  double s = 0.0;
  for (double r : rouge_scores) {
    if (r < 0.0 || r > 1.0) throw std::invalid_argument("rouge score out of [0,1]");
    s += r;
  }
  return 1.0 - s / double(rouge_scores.size());
}

}  // namespace unlab

#include "unlab/train.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "unlab/rng.hpp"

namespace unlab {

void adam_step(ParamStore& params, const std::map<std::string, Tensor>& grads, double lr,
               double beta1, double beta2, double eps) {
  params.step += 1;
  double bc1 = 1.0 - std::pow(beta1, double(params.step));
  double bc2 = 1.0 - std::pow(beta2, double(params.step));
  for (const auto& [name, g] : grads) {
    Tensor& t = params.at(name);
    Tensor& m = params.m.at(name);
    Tensor& v = params.v.at(name);
    for (size_t i = 0; i < t.size(); ++i) {
      double gi = g.v[i];
      m.v[i] = beta1 * m.v[i] + (1.0 - beta1) * gi;
      v.v[i] = beta2 * v.v[i] + (1.0 - beta2) * gi * gi;
      double mh = m.v[i] / bc1;
      double vh = v.v[i] / bc2;
      t.v[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
}

void reset_optimizer(ParamStore& params) {
  params.step = 0;
  for (auto& [_, t] : params.m) std::fill(t.v.begin(), t.v.end(), 0.0);
  for (auto& [_, t] : params.v) std::fill(t.v.begin(), t.v.end(), 0.0);
}

namespace {
bool is_heldout(size_t idx) { return idx % 13 == 12; }
}  // namespace

double heldout_ce(LanguageModel& model, const TrainingCorpus& corpus) {
  Tape tape;
  TapeLeaves leaves;
  double total = 0.0;
  long tokens = 0;
  for (size_t i = 0; i < corpus.sequences.size(); ++i) {
    if (!is_heldout(i)) continue;
    const Sequence& s = corpus.sequences[i];
    Var nll = model.sequence_nll(tape, leaves, s.tokens, 1);
    total += tape.scalar(nll);
    tokens += long(s.tokens.size()) - 1;
  }
  return tokens > 0 ? total / double(tokens) : 0.0;
}

double qa_object_accuracy(const LanguageModel& model, const World& world) {
  const Vocab& v = model.vocab();
  int hits = 0, n = 0;
  for (const auto& f : world.facts) {
    const Person& p = world.person(f.subject);
    const Relation& r = world.relation(f.relation);
    std::vector<int> prompt = v.tokenize(open_prompt_text(r, p.full_name(), 0));
    Vec dist = model.next_token_dist(prompt);
    int best = int(std::max_element(dist.begin(), dist.end()) - dist.begin());
    hits += best == v.id(f.object) ? 1 : 0;
    n += 1;
  }
  return n > 0 ? double(hits) / n : 0.0;
}

double mcq_exemplar_accuracy(const LanguageModel& model, const TrainingCorpus& corpus) {
  const Vocab& v = model.vocab();
  int choices_tok = v.id("Choices");
  int hits = 0, n = 0;
  for (const auto& s : corpus.sequences) {
    if (s.kind != SeqKind::qa) continue;
    if (int(s.tokens.size()) != s.answer_start + 2) continue;  // single-token answer
    int answer = s.tokens[size_t(s.answer_start)];
    const std::string& w = v.word(answer);
    if (w.size() != 1 || w[0] < 'A' || w[0] > 'J') continue;
    std::vector<int> prompt(s.tokens.begin(), s.tokens.begin() + s.answer_start);
    if (std::find(prompt.begin(), prompt.end(), choices_tok) == prompt.end()) continue;
    // letters present in the prompt, in order
    std::vector<int> letters;
    for (size_t i = 0; i + 1 < prompt.size(); ++i) {
      const std::string& pw = v.word(prompt[i]);
      if (pw.size() == 1 && pw[0] >= 'A' && pw[0] <= 'J') letters.push_back(prompt[i]);
    }
    ChoiceDistribution d = restricted_choice_distribution(model, prompt, letters);
    int best = int(std::max_element(d.probs.begin(), d.probs.end()) - d.probs.begin());
    hits += d.letters[size_t(best)] == answer ? 1 : 0;
    n += 1;
  }
  return n > 0 ? double(hits) / n : 0.0;
}

BaseTrainStats train_base(LanguageModel& model, const TrainingCorpus& corpus,
                          const TrainHyper& hyper, const World& world) {
  if (corpus.sequences.empty()) throw std::invalid_argument("empty corpus");
  BaseTrainStats stats;
  stats.heldout_ce_before = heldout_ce(model, corpus);

  std::vector<size_t> train_idx;
  for (size_t i = 0; i < corpus.sequences.size(); ++i)
    if (!is_heldout(i)) train_idx.push_back(i);

  Rng rng(hyper.seed);
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    rng.shuffle(train_idx);
    for (size_t b = 0; b < train_idx.size(); b += size_t(hyper.batch_size)) {
      Tape tape;
      TapeLeaves leaves;
      std::vector<Var> losses;
      size_t e = std::min(train_idx.size(), b + size_t(hyper.batch_size));
      for (size_t i = b; i < e; ++i) {
        const Sequence& s = corpus.sequences[train_idx[i]];
        losses.push_back(model.sequence_nll(tape, leaves, s.tokens, 1));
      }
      Var total = losses[0];
      for (size_t i = 1; i < losses.size(); ++i) total = tape.add(total, losses[i]);
      double loss_val = tape.scalar(total);
      if (!std::isfinite(loss_val))
        throw std::runtime_error("training diverged (non-finite loss) at epoch " +
                                 std::to_string(epoch));
      tape.backward(total);
      std::map<std::string, Tensor> grads;
      collect_grads(tape, leaves, grads);
      adam_step(model.params(), grads, hyper.lr);
    }
    stats.epochs_run = epoch + 1;
    if (epoch + 1 >= hyper.min_epochs) {
      stats.qa_accuracy = qa_object_accuracy(model, world);
      stats.mcq_accuracy = mcq_exemplar_accuracy(model, corpus);
      if (stats.qa_accuracy >= hyper.target_qa_acc && stats.mcq_accuracy >= hyper.target_qa_acc)
        break;
    }
  }
  stats.qa_accuracy = qa_object_accuracy(model, world);
  stats.mcq_accuracy = mcq_exemplar_accuracy(model, corpus);
  stats.heldout_ce_after = heldout_ce(model, corpus);
  return stats;
}

double grad_check(const std::function<Var(Tape&, TapeLeaves&)>& loss_builder,
                  ParamStore& params, double epsilon, int n_probe, uint64_t seed) {
  std::map<std::string, Tensor> ad_grads;
  {
    Tape tape;
    TapeLeaves leaves;
    Var loss = loss_builder(tape, leaves);
    tape.backward(loss);
    collect_grads(tape, leaves, ad_grads);
  }
  auto eval = [&]() {
    Tape tape;
    TapeLeaves leaves;
    return tape.scalar(loss_builder(tape, leaves));
  };

  std::vector<std::pair<std::string, size_t>> coords;
  for (const auto& name : params.names) {
    const Tensor& t = params.at(name);
    for (size_t i = 0; i < t.size(); ++i) coords.push_back({name, i});
  }
  Rng rng(seed);
  rng.shuffle(coords);
  if (n_probe < int(coords.size())) coords.resize(size_t(n_probe));

  double max_rel = 0.0;
  for (const auto& [name, idx] : coords) {
    double& x = params.at(name).v[idx];
    double saved = x;
    x = saved + epsilon;
    double lp = eval();
    x = saved - epsilon;
    double lm = eval();
    x = saved;
    double g_fd = (lp - lm) / (2.0 * epsilon);
    double g_ad = 0.0;
    auto it = ad_grads.find(name);
    if (it != ad_grads.end()) g_ad = it->second.v[idx];
    double denom = std::max({std::fabs(g_ad), std::fabs(g_fd), 1e-4});
    max_rel = std::max(max_rel, std::fabs(g_ad - g_fd) / denom);
  }
  return max_rel;
}

}  // namespace unlab

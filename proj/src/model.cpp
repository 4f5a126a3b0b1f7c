#include "unlab/model.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace unlab {

void ParamStore::add(const std::string& name, Tensor t) {
  if (tensors.count(name)) throw std::logic_error("duplicate parameter name: " + name);
  names.push_back(name);
  m[name] = Tensor(t.rows, t.cols, 0.0);
  v[name] = Tensor(t.rows, t.cols, 0.0);
  tensors[name] = std::move(t);
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::logic_error("unknown parameter: " + name);
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::logic_error("unknown parameter: " + name);
  return it->second;
}

size_t ParamStore::total_size() const {
  size_t n = 0;
  for (const auto& [_, t] : tensors) n += t.size();
  return n;
}

Var TapeLeaves::get(Tape& tape, const ParamStore& params, const std::string& name) {
  auto it = leaves.find(name);
  if (it != leaves.end()) return it->second;
  Var v = tape.leaf(params.at(name));
  leaves[name] = v;
  return v;
}

void collect_grads(const Tape& tape, const TapeLeaves& leaves,
                   std::map<std::string, Tensor>& out) {
  for (const auto& [name, var] : leaves.leaves) {
    const Tensor& g = tape.grad(var);
    auto it = out.find(name);
    if (it == out.end()) {
      out[name] = g;
    } else {
      for (size_t i = 0; i < g.size(); ++i) it->second.v[i] += g.v[i];
    }
  }
}

ChoiceDistribution restricted_choice_distribution(const LanguageModel& model,
                                                  const std::vector<int>& prompt,
                                                  const std::vector<int>& letter_ids) {
  std::set<int> uniq(letter_ids.begin(), letter_ids.end());
  if (uniq.size() != letter_ids.size())
    throw std::invalid_argument("duplicate choice letters");
  if (letter_ids.empty()) throw std::invalid_argument("no choice letters");
  Vec dist = model.next_token_dist(prompt);
  ChoiceDistribution out;
  out.letters = letter_ids;
  out.probs.resize(letter_ids.size());
  double z = 0.0;
  for (size_t i = 0; i < letter_ids.size(); ++i) {
    out.probs[i] = dist[size_t(letter_ids[i])];
    z += out.probs[i];
  }
  if (z <= 0.0) {
    // Degenerate raw distribution: fall back to uniform over the letters.
    for (double& p : out.probs) p = 1.0 / double(out.probs.size());
    return out;
  }
  for (double& p : out.probs) p /= z;
  return out;
}

std::pair<double, double> normalized_yes_no(const LanguageModel& model,
                                            const std::vector<int>& prompt) {
  const Vocab& v = model.vocab();
  ChoiceDistribution d =
      restricted_choice_distribution(model, prompt, {v.yes_id(), v.no_id()});
  return {d.probs[0], d.probs[1]};
}

std::vector<int> greedy_decode(const LanguageModel& model, const std::vector<int>& prompt,
                               int max_new) {
  std::vector<int> ctx = prompt;
  std::vector<int> out;
  for (int i = 0; i < max_new; ++i) {
    Vec dist = model.next_token_dist(ctx);
    int best = int(std::max_element(dist.begin(), dist.end()) - dist.begin());
    if (best == model.vocab().eos_id()) break;
    out.push_back(best);
    ctx.push_back(best);
  }
  return out;
}

}  // namespace unlab

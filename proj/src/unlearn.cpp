#include "unlab/unlearn.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

#include "unlab/metrics.hpp"
#include "unlab/rng.hpp"
#include "unlab/train.hpp"
#include "unlab/util.hpp"

namespace unlab {

std::string method_name(Method m) {
  switch (m) {
    case Method::df_mcq: return "df_mcq";
    case Method::whp_plus: return "whp_plus";
    case Method::npo: return "npo";
    case Method::grad_ascent: return "grad_ascent";
  }
  throw std::logic_error("bad Method");
}

Method method_from(const std::string& s) {
  if (s == "df_mcq" || s == "df-mcq") return Method::df_mcq;
  if (s == "whp_plus" || s == "whp-plus") return Method::whp_plus;
  if (s == "npo") return Method::npo;
  if (s == "grad_ascent" || s == "ga") return Method::grad_ascent;
  throw std::invalid_argument("unknown method: " + s);
}

std::vector<double> flat_target(int c) {
  if (c < 2) throw std::invalid_argument("flat_target: need at least 2 choices");
  return std::vector<double>(size_t(c), 1.0 / double(c));
}

Var df_mcq_loss_node(Tape& tape, TapeLeaves& leaves, LanguageModel& model,
                     const std::vector<McqItem>& items) {
  if (items.empty()) throw std::invalid_argument("df_mcq_loss: no items");
  Var acc = -1;
  for (const auto& item : items) {
    Var lp = model.choice_logprobs(tape, leaves, item.question, item.choice_letters);
    int c = int(item.choice_letters.size());
    Tensor log_q(1, c, std::log(1.0 / double(c)));
    Var kl = tape.kl_forward_to_const(lp, std::move(log_q));
    acc = acc < 0 ? kl : tape.add(acc, kl);
  }
  return acc;
}

double df_mcq_loss(LanguageModel& model, const std::vector<McqItem>& items) {
  Tape tape;
  TapeLeaves leaves;
  return tape.scalar(df_mcq_loss_node(tape, leaves, model, items));
}

Var retain_loss_node(Tape& tape, TapeLeaves& leaves, LanguageModel& model,
                     const LanguageModel& original, const std::vector<McqItem>& items) {
  if (items.empty()) throw std::invalid_argument("retain_loss: no items");
  Var acc = -1;
  for (const auto& item : items) {
    ChoiceDistribution target =
        restricted_choice_distribution(original, item.question, item.choice_letters);
    Tensor log_q(1, int(target.probs.size()));
    for (size_t i = 0; i < target.probs.size(); ++i)
      log_q.v[i] = std::log(std::max(target.probs[i], 1e-12));
    Var lp = model.choice_logprobs(tape, leaves, item.question, item.choice_letters);
    Var kl = tape.kl_forward_to_const(lp, std::move(log_q));
    acc = acc < 0 ? kl : tape.add(acc, kl);
  }
  return acc;
}

double retain_loss(LanguageModel& model, const LanguageModel& original,
                   const std::vector<McqItem>& items) {
  Tape tape;
  TapeLeaves leaves;
  return tape.scalar(retain_loss_node(tape, leaves, model, original, items));
}

LossBreakdown df_mcq_step(LanguageModel& model, const LanguageModel& original,
                          const std::vector<McqItem>& forget_batch,
                          const std::vector<McqItem>& retain_batch, double step_size) {
  if (forget_batch.size() != retain_batch.size())
    throw std::invalid_argument("df_mcq_step: forget and retain batches must be equal size");
  Tape tape;
  TapeLeaves leaves;
  Var u = df_mcq_loss_node(tape, leaves, model, forget_batch);
  Var r = retain_loss_node(tape, leaves, model, original, retain_batch);
  Var total = tape.add(u, r);
  LossBreakdown out;
  out.unlearn_term = tape.scalar(u);
  out.retain_term = tape.scalar(r);
  out.total = tape.scalar(total);
  if (!std::isfinite(out.total)) throw std::runtime_error("df_mcq_step: non-finite loss");
  tape.backward(total);
  std::map<std::string, Tensor> grads;
  collect_grads(tape, leaves, grads);
  adam_step(model.params(), grads, step_size);
  return out;
}

double mean_choice_entropy(const LanguageModel& model, const std::vector<McqItem>& items) {
  if (items.empty()) return 0.0;
  double s = 0.0;
  for (const auto& item : items) {
    ChoiceDistribution d =
        restricted_choice_distribution(model, item.question, item.choice_letters);
    s += entropy(d.probs).value;
  }
  return s / double(items.size());
}

std::string serialize_epoch_logs(const std::vector<EpochLog>& logs) {
  std::ostringstream os;
  for (const auto& l : logs) {
    os << l.epoch << "\t" << format_double(l.unlearn_term) << "\t"
       << format_double(l.retain_term) << "\t" << format_double(l.total) << "\t"
       << format_double(l.probe_entropy) << "\t" << join(l.generation_samples, " | ") << "\n";
  }
  return os.str();
}

std::vector<EpochLog> run_df_mcq(LanguageModel& model, const LanguageModel& original,
                                 const std::vector<McqItem>& forget_mcqs,
                                 const std::vector<McqItem>& retain_mcqs,
                                 const MethodConfig& config,
                                 const std::vector<std::vector<int>>& generation_prompts,
                                 const std::vector<McqItem>& probe_items) {
  if (forget_mcqs.empty() || retain_mcqs.empty())
    throw std::invalid_argument("run_df_mcq: both MCQ sets must be non-empty");
  reset_optimizer(model.params());
  std::vector<EpochLog> logs;
  Rng rng(config.seed);
  int c = int(forget_mcqs[0].choice_letters.size());
  double target_entropy = config.early_stop_entropy_frac * std::log(double(c));

  std::vector<size_t> fidx(forget_mcqs.size()), ridx(retain_mcqs.size());
  for (size_t i = 0; i < fidx.size(); ++i) fidx[i] = i;
  for (size_t i = 0; i < ridx.size(); ++i) ridx[i] = i;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(fidx);
    rng.shuffle(ridx);
    EpochLog log;
    log.epoch = epoch;
    size_t rpos = 0;
    for (size_t b = 0; b < fidx.size(); b += size_t(config.batch_size)) {
      size_t e = std::min(fidx.size(), b + size_t(config.batch_size));
      std::vector<McqItem> fb, rb;
      for (size_t i = b; i < e; ++i) {
        fb.push_back(forget_mcqs[fidx[i]]);
        rb.push_back(retain_mcqs[ridx[rpos]]);
        rpos = (rpos + 1) % ridx.size();
      }
      LossBreakdown lb = df_mcq_step(model, original, fb, rb, config.step_size);
      log.unlearn_term += lb.unlearn_term;
      log.retain_term += lb.retain_term;
      log.total += lb.total;
    }
    log.probe_entropy =
        mean_choice_entropy(model, probe_items.empty() ? forget_mcqs : probe_items);
    for (const auto& prompt : generation_prompts) {
      std::vector<int> gen = greedy_decode(model, prompt, 16);
      log.generation_samples.push_back(model.vocab().detokenize(gen));
    }
    logs.push_back(std::move(log));
    if (logs.back().probe_entropy >= target_entropy) break;
  }
  return logs;
}

ObfuscationSet make_obfuscation_samples(const World& world, const Vocab& vocab,
                                        const LanguageModel& teacher,
                                        const std::string& target,
                                        const std::vector<std::string>& donors, int k,
                                        uint64_t seed) {
  for (const auto& d : donors)
    if (d == target)
      throw std::invalid_argument("make_obfuscation_samples: target cannot be a donor");
  ObfuscationSet out;
  if (k == 0) return out;

  // Enumerate the renderable donor material: every (donor fact, template).
  struct Combo {
    std::string donor;
    std::string relation;
    int kind;  // 0 = declarative, 1 = open QA, 2 = yes-no
    int form;
  };
  std::vector<Combo> combos;
  for (const auto& d : donors) {
    for (const auto& f : facts_of(world, d)) {
      const Relation& r = world.relation(f.relation);
      for (size_t i = 0; i < r.surface_forms.size(); ++i)
        combos.push_back({d, f.relation, 0, int(i)});
      for (size_t i = 0; i < r.question_forms.size(); ++i)
        combos.push_back({d, f.relation, 1, int(i)});
      combos.push_back({d, f.relation, 2, 0});
    }
  }
  if (k > int(combos.size()))
    throw std::invalid_argument("make_obfuscation_samples: k exceeds available donor material (" +
                                std::to_string(combos.size()) + ")");
  Rng rng(seed);
  rng.shuffle(combos);
  combos.resize(size_t(k));

  const Person& tp = world.person(target);
  for (const auto& combo : combos) {
    const Person& dp = world.person(combo.donor);
    const FactTriplet& f = world.fact(combo.donor, combo.relation);
    const Relation& r = world.relation(combo.relation);
    std::string donor_text, target_text;
    SeqKind kind = SeqKind::declarative;
    if (combo.kind == 0) {
      donor_text = declarative_text(r, dp.full_name(), f.object, combo.form);
      target_text = declarative_text(r, tp.full_name(), f.object, combo.form);
    } else if (combo.kind == 1) {
      donor_text = open_prompt_text(r, dp.full_name(), combo.form) + " " + f.object;
      target_text = open_prompt_text(r, tp.full_name(), combo.form) + " " + f.object;
      kind = SeqKind::qa;
    } else {
      donor_text = yes_no_prompt_text(r, dp.full_name(), f.object) + " Yes";
      target_text = yes_no_prompt_text(r, tp.full_name(), f.object) + " Yes";
      kind = SeqKind::qa;
    }
    std::vector<int> donor_tokens = vocab.tokenize(donor_text);
    donor_tokens.push_back(vocab.eos_id());
    Sequence student;
    student.tokens = vocab.tokenize(target_text);
    student.tokens.push_back(vocab.eos_id());
    student.kind = kind;
    student.answer_start = answer_start_of(student.tokens, vocab, kind);
    if (student.tokens.size() != donor_tokens.size())
      throw std::logic_error("name swap changed sequence length");
    out.teacher.push_back(teacher.per_position_dists(donor_tokens));
    out.student_seqs.push_back(std::move(student));
    out.record.objects[{target, combo.relation}].insert(f.object);
  }
  return out;
}

void run_obfuscation(LanguageModel& model, const ObfuscationSet& samples,
                     const MethodConfig& config) {
  if (samples.student_seqs.empty()) return;  // no-op training
  reset_optimizer(model.params());
  Rng rng(config.seed);
  std::vector<size_t> idx(samples.student_seqs.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(idx);
    for (size_t b = 0; b < idx.size(); b += size_t(config.batch_size)) {
      Tape tape;
      TapeLeaves leaves;
      Var acc = -1;
      size_t e = std::min(idx.size(), b + size_t(config.batch_size));
      for (size_t i = b; i < e; ++i) {
        Var kl = model.distill_kl(tape, leaves, samples.student_seqs[idx[i]].tokens,
                                  samples.teacher[idx[i]]);
        acc = acc < 0 ? kl : tape.add(acc, kl);
      }
      if (!std::isfinite(tape.scalar(acc)))
        throw std::runtime_error("run_obfuscation: non-finite loss");
      tape.backward(acc);
      std::map<std::string, Tensor> grads;
      collect_grads(tape, leaves, grads);
      adam_step(model.params(), grads, config.step_size);
    }
  }
}

std::vector<double> run_npo(LanguageModel& model, const std::vector<Sequence>& forget_qa,
                            LanguageModel& reference_model, double beta,
                            const MethodConfig& config) {
  if (beta <= 0.0) throw std::invalid_argument("run_npo: beta must be > 0");
  if (forget_qa.empty()) throw std::invalid_argument("run_npo: empty forget set");
  reset_optimizer(model.params());

  // Reference answer log-probs are fixed; compute once.
  std::vector<double> ref_lp(forget_qa.size());
  for (size_t i = 0; i < forget_qa.size(); ++i) {
    Tape tape;
    TapeLeaves leaves;
    Var nll = reference_model.sequence_nll(tape, leaves, forget_qa[i].tokens,
                                           forget_qa[i].answer_start);
    ref_lp[i] = -tape.scalar(nll);
  }

  std::vector<double> epoch_losses;
  Rng rng(config.seed);
  std::vector<size_t> idx(forget_qa.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(idx);
    double sum = 0.0;
    long n = 0;
    for (size_t b = 0; b < idx.size(); b += size_t(config.batch_size)) {
      Tape tape;
      TapeLeaves leaves;
      Var acc = -1;
      size_t e = std::min(idx.size(), b + size_t(config.batch_size));
      for (size_t i = b; i < e; ++i) {
        const Sequence& s = forget_qa[idx[i]];
        Var nll = model.sequence_nll(tape, leaves, s.tokens, s.answer_start);
        // beta * (lp_theta - lp_ref) = beta * (ref_nll... ) built from -nll
        Var arg = tape.add_const(tape.scale(nll, -beta), beta * (-ref_lp[idx[i]]));
        acc = acc < 0 ? tape.softplus(arg) : tape.add(acc, tape.softplus(arg));
      }
      Var loss = tape.scale(acc, 2.0 / beta);
      double val = tape.scalar(loss);
      if (!std::isfinite(val)) throw std::runtime_error("run_npo: non-finite loss");
      sum += val;
      n += long(e - b);
      Var mean = tape.scale(loss, 1.0 / double(e - b));
      tape.backward(mean);
      std::map<std::string, Tensor> grads;
      collect_grads(tape, leaves, grads);
      adam_step(model.params(), grads, config.step_size);
    }
    epoch_losses.push_back(sum / double(n));
  }
  return epoch_losses;
}

std::vector<double> run_gradient_ascent(LanguageModel& model,
                                        const std::vector<Sequence>& forget_qa,
                                        const MethodConfig& config, const World& world) {
  if (forget_qa.empty()) throw std::invalid_argument("run_gradient_ascent: empty forget set");
  reset_optimizer(model.params());
  std::vector<double> epoch_answer_nll;
  Rng rng(config.seed);
  std::vector<size_t> idx(forget_qa.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(idx);
    for (size_t b = 0; b < idx.size(); b += size_t(config.batch_size)) {
      Tape tape;
      TapeLeaves leaves;
      Var acc = -1;
      size_t e = std::min(idx.size(), b + size_t(config.batch_size));
      for (size_t i = b; i < e; ++i) {
        const Sequence& s = forget_qa[idx[i]];
        Var nll = model.sequence_nll(tape, leaves, s.tokens, s.answer_start);
        acc = acc < 0 ? nll : tape.add(acc, nll);
      }
      Var loss = tape.scale(acc, -1.0);  // ascend on the answer likelihood loss
      if (!std::isfinite(tape.scalar(loss)))
        throw std::runtime_error("run_gradient_ascent: non-finite loss");
      tape.backward(loss);
      std::map<std::string, Tensor> grads;
      collect_grads(tape, leaves, grads);
      adam_step(model.params(), grads, config.step_size);
    }
    double nll_sum = 0.0;
    for (const auto& s : forget_qa) {
      Tape tape;
      TapeLeaves leaves;
      nll_sum += tape.scalar(model.sequence_nll(tape, leaves, s.tokens, s.answer_start));
    }
    epoch_answer_nll.push_back(nll_sum / double(forget_qa.size()));

    // Usability guard: stop once retained persons' QA accuracy degrades.
    const Vocab& v = model.vocab();
    int hits = 0, n_retain = 0;
    for (const auto& pid : world.retain_ids) {
      const Person& p = world.person(pid);
      for (const auto& f : facts_of(world, pid)) {
        const Relation& r = world.relation(f.relation);
        Vec dist = model.next_token_dist(v.tokenize(open_prompt_text(r, p.full_name(), 0)));
        int best = int(std::max_element(dist.begin(), dist.end()) - dist.begin());
        hits += best == v.id(f.object) ? 1 : 0;
        n_retain += 1;
      }
    }
    if (n_retain > 0 && double(hits) / n_retain < config.retain_floor) break;
  }
  return epoch_answer_nll;
}

}  // namespace unlab

#include "unlab/tabular.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace unlab {

const std::string TabularModel::kBackend = "tabular";

TabularModel::TabularModel(std::shared_ptr<const World> world,
                           std::shared_ptr<const Vocab> vocab)
    : world_(std::move(world)), vocab_(std::move(vocab)) {
  const World& w = *world_;
  const Vocab& v = *vocab_;
  tok_question_ = v.id("Question");
  tok_choices_ = v.id("Choices");
  tok_answer_ = v.id("Answer");
  tok_colon_ = v.id(":");
  tok_is_ = v.id("Is");

  object_col_.resize(w.relations.size());
  object_tokens_.resize(w.relations.size());
  for (size_t r = 0; r < w.relations.size(); ++r) {
    const Relation& rel = w.relations[r];
    params_.add("rel." + rel.id, Tensor(int(w.persons.size()), int(rel.object_vocab.size()), 0.0));
    noun_to_relation_[v.id(rel.noun)] = int(r);
    for (size_t c = 0; c < rel.object_vocab.size(); ++c) {
      int tok = v.id(rel.object_vocab[c]);
      object_col_[r][tok] = int(c);
      object_tokens_[r].push_back(tok);
    }
  }

  for (size_t p = 0; p < w.persons.size(); ++p) {
    const Person& per = w.persons[p];
    person_by_name_[{v.id(per.name_tokens[0]), v.id(per.name_tokens[1])}] = int(p);
    for (size_t r = 0; r < w.relations.size(); ++r) {
      const Relation& rel = w.relations[r];
      for (size_t q = 0; q < rel.question_forms.size(); ++q)
        question_index_[v.tokenize(question_text(rel, per.full_name(), int(q)))] = {int(p),
                                                                                    int(r)};
      for (size_t f = 0; f < rel.surface_forms.size(); ++f) {
        // Prefix of the declarative up to (excluding) the object slot.
        std::string form = rel.surface_forms[f];
        form.replace(form.find("{}"), 2, "");
        std::vector<int> prefix = v.tokenize(per.full_name() + " " + form);
        decl_index_[prefix] = {int(p), int(r)};
      }
    }
  }
}

TabularModel::Slot TabularModel::parse(const std::vector<int>& context) const {
  Slot s;
  if (context.empty()) return s;

  auto decl = decl_index_.find(context);
  if (decl != decl_index_.end()) {
    s.kind = Slot::object;
    s.person = decl->second.first;
    s.relation = decl->second.second;
    return s;
  }

  // QA prompts end with "Answer :".
  size_t n = context.size();
  if (n < 4 || context[n - 2] != tok_answer_ || context[n - 1] != tok_colon_) return s;
  if (context[0] != tok_question_ || context[1] != tok_colon_) return s;
  std::vector<int> body(context.begin() + 2, context.end() - 2);

  // MCQ: stem "Choices :" (letter object)*
  for (size_t i = 0; i + 1 < body.size(); ++i) {
    if (body[i] == tok_choices_ && body[i + 1] == tok_colon_) {
      std::vector<int> stem(body.begin(), body.begin() + long(i));
      auto q = question_index_.find(stem);
      if (q == question_index_.end()) return s;
      std::vector<int> rest(body.begin() + long(i) + 2, body.end());
      if (rest.size() % 2 != 0) return s;
      Slot out;
      out.kind = Slot::mcq;
      out.person = q->second.first;
      out.relation = q->second.second;
      const auto& cols = object_col_[size_t(out.relation)];
      for (size_t j = 0; j < rest.size(); j += 2) {
        auto it = cols.find(rest[j + 1]);
        if (it == cols.end()) return s;
        out.letter_ids.push_back(rest[j]);
        out.object_cols.push_back(it->second);
      }
      return out;
    }
  }

  // Yes-No: "Is <cand> the <noun> of <First> <Last> ? You must answer Yes or No ."
  if (!body.empty() && body[0] == tok_is_ && body.size() >= 8) {
    int cand = body[1];
    int noun = body[3];
    auto nr = noun_to_relation_.find(noun);
    if (nr != noun_to_relation_.end()) {
      int r = nr->second;
      auto pb = person_by_name_.find({body[5], body[6]});
      auto oc = object_col_[size_t(r)].find(cand);
      if (pb != person_by_name_.end() && oc != object_col_[size_t(r)].end()) {
        s.kind = Slot::yes_no;
        s.person = pb->second;
        s.relation = r;
        s.candidate_col = oc->second;
        return s;
      }
    }
    return s;
  }

  auto q = question_index_.find(body);
  if (q != question_index_.end()) {
    s.kind = Slot::object;
    s.person = q->second.first;
    s.relation = q->second.second;
  }
  return s;
}

Vec TabularModel::object_distribution(const std::string& person_id,
                                      const std::string& relation_id) const {
  const World& w = *world_;
  int p = -1, r = -1;
  for (size_t i = 0; i < w.persons.size(); ++i)
    if (w.persons[i].id == person_id) p = int(i);
  for (size_t i = 0; i < w.relations.size(); ++i)
    if (w.relations[i].id == relation_id) r = int(i);
  if (p < 0) throw std::invalid_argument("unknown person id: " + person_id);
  if (r < 0) throw std::invalid_argument("unknown relation id: " + relation_id);
  const Tensor& t = params_.at("rel." + relation_id);
  double mx = -1e300;
  for (int c = 0; c < t.cols; ++c) mx = std::max(mx, t.at(p, c));
  Vec out(size_t(t.cols));
  double z = 0.0;
  for (int c = 0; c < t.cols; ++c) {
    out[size_t(c)] = std::exp(t.at(p, c) - mx);
    z += out[size_t(c)];
  }
  for (double& x : out) x /= z;
  return out;
}

Vec TabularModel::next_token_dist(const std::vector<int>& context) const {
  if (context.empty()) throw std::invalid_argument("empty context");
  const World& w = *world_;
  Vec out(size_t(vocab_->size()), 0.0);
  Slot s = parse(context);
  if (s.kind == Slot::none) {
    double u = 1.0 / double(out.size());
    for (double& x : out) x = u;
    return out;
  }
  const Relation& rel = w.relations[size_t(s.relation)];
  Vec obj = object_distribution(w.persons[size_t(s.person)].id, rel.id);
  if (s.kind == Slot::object) {
    for (size_t c = 0; c < obj.size(); ++c)
      out[size_t(object_tokens_[size_t(s.relation)][c])] = obj[c];
  } else if (s.kind == Slot::mcq) {
    double z = 0.0;
    for (int col : s.object_cols) z += obj[size_t(col)];
    for (size_t i = 0; i < s.object_cols.size(); ++i)
      out[size_t(s.letter_ids[i])] = z > 0.0 ? obj[size_t(s.object_cols[i])] / z
                                             : 1.0 / double(s.object_cols.size());
  } else {
    double p_yes = obj[size_t(s.candidate_col)];
    out[size_t(vocab_->yes_id())] = p_yes;
    out[size_t(vocab_->no_id())] = 1.0 - p_yes;
  }
  return out;
}

Var TabularModel::row_log_softmax(Tape& tape, TapeLeaves& leaves, int person, int relation) {
  const Relation& rel = world_->relations[size_t(relation)];
  Var table = leaves.get(tape, params_, "rel." + rel.id);
  Var row = tape.gather_rows(table, {person});
  return tape.log_softmax_rows(row);
}

Var TabularModel::sequence_nll(Tape& tape, TapeLeaves& leaves, const std::vector<int>& tokens,
                               int from) {
  std::vector<Var> terms;
  for (size_t t = size_t(std::max(from, 1)); t < tokens.size(); ++t) {
    std::vector<int> prefix(tokens.begin(), tokens.begin() + long(t));
    Slot s = parse(prefix);
    if (s.kind == Slot::none) continue;
    int target = tokens[t];
    Var lsm = row_log_softmax(tape, leaves, s.person, s.relation);
    if (s.kind == Slot::object) {
      auto it = object_col_[size_t(s.relation)].find(target);
      if (it == object_col_[size_t(s.relation)].end()) continue;
      Var lp = tape.gather_row_cols(lsm, 0, {it->second});
      terms.push_back(tape.scale(tape.sum_all(lp), -1.0));
    } else if (s.kind == Slot::mcq) {
      auto pos = std::find(s.letter_ids.begin(), s.letter_ids.end(), target);
      if (pos == s.letter_ids.end()) continue;
      Var sub = tape.gather_row_cols(lsm, 0, s.object_cols);
      Var norm = tape.log_softmax_rows(sub);
      Var lp = tape.gather_row_cols(norm, 0, {int(pos - s.letter_ids.begin())});
      terms.push_back(tape.scale(tape.sum_all(lp), -1.0));
    } else {
      Var lp_cand = tape.gather_row_cols(lsm, 0, {s.candidate_col});
      Var lp;
      if (target == vocab_->yes_id()) {
        lp = lp_cand;
      } else if (target == vocab_->no_id()) {
        lp = tape.log_elem(tape.sub_from_const(1.0, tape.exp_elem(lp_cand)));
      } else {
        continue;
      }
      terms.push_back(tape.scale(tape.sum_all(lp), -1.0));
    }
  }
  if (terms.empty()) return tape.leaf(Tensor::scalar(0.0));
  Var acc = terms[0];
  for (size_t i = 1; i < terms.size(); ++i) acc = tape.add(acc, terms[i]);
  return acc;
}

Var TabularModel::choice_logprobs(Tape& tape, TapeLeaves& leaves,
                                  const std::vector<int>& prompt,
                                  const std::vector<int>& letter_ids) {
  Slot s = parse(prompt);
  if (s.kind == Slot::mcq) {
    if (s.letter_ids != letter_ids)
      throw std::invalid_argument("choice letters do not match the prompt");
    Var lsm = row_log_softmax(tape, leaves, s.person, s.relation);
    Var sub = tape.gather_row_cols(lsm, 0, s.object_cols);
    return tape.log_softmax_rows(sub);
  }
  if (s.kind == Slot::yes_no && letter_ids.size() == 2) {
    Var lsm = row_log_softmax(tape, leaves, s.person, s.relation);
    Var lp_yes = tape.gather_row_cols(lsm, 0, {s.candidate_col});
    Var lp_no = tape.log_elem(tape.sub_from_const(1.0, tape.exp_elem(lp_yes)));
    return tape.concat_cols({lp_yes, lp_no});
  }
  // Unknown prompt: uniform, constant.
  Tensor t(1, int(letter_ids.size()), std::log(1.0 / double(letter_ids.size())));
  return tape.leaf(std::move(t));
}

Var TabularModel::distill_kl(Tape& tape, TapeLeaves& leaves, const std::vector<int>& tokens,
                             const std::vector<Vec>& teacher) {
  std::vector<Var> terms;
  for (size_t t = 0; t + 1 < tokens.size() && t < teacher.size(); ++t) {
    std::vector<int> prefix(tokens.begin(), tokens.begin() + long(t) + 1);
    Slot s = parse(prefix);
    if (s.kind == Slot::none) continue;
    const Vec& q_full = teacher[t];
    if (s.kind == Slot::object) {
      const auto& toks = object_tokens_[size_t(s.relation)];
      Tensor q(1, int(toks.size()));
      double z = 0.0;
      for (size_t c = 0; c < toks.size(); ++c) {
        q.v[c] = q_full[size_t(toks[c])];
        z += q.v[c];
      }
      if (z <= 0.0) continue;
      for (double& x : q.v) x /= z;
      Var lsm = row_log_softmax(tape, leaves, s.person, s.relation);
      terms.push_back(tape.kl_reverse_to_const(lsm, std::move(q), {0}));
    } else if (s.kind == Slot::yes_no) {
      double qy = q_full[size_t(vocab_->yes_id())];
      double qn = q_full[size_t(vocab_->no_id())];
      double z = qy + qn;
      if (z <= 0.0) continue;
      Var lsm = row_log_softmax(tape, leaves, s.person, s.relation);
      Var lp_yes = tape.gather_row_cols(lsm, 0, {s.candidate_col});
      Var lp_no = tape.log_elem(tape.sub_from_const(1.0, tape.exp_elem(lp_yes)));
      Var both = tape.concat_cols({lp_yes, lp_no});
      Tensor q(1, 2);
      q.v[0] = qy / z;
      q.v[1] = qn / z;
      terms.push_back(tape.kl_reverse_to_const(both, std::move(q), {0}));
    }
  }
  if (terms.empty()) return tape.leaf(Tensor::scalar(0.0));
  Var acc = terms[0];
  for (size_t i = 1; i < terms.size(); ++i) acc = tape.add(acc, terms[i]);
  return acc;
}

std::vector<Vec> TabularModel::per_position_dists(const std::vector<int>& tokens) const {
  std::vector<Vec> out;
  for (size_t t = 0; t + 1 < tokens.size(); ++t) {
    std::vector<int> prefix(tokens.begin(), tokens.begin() + long(t) + 1);
    out.push_back(next_token_dist(prefix));
  }
  return out;
}

std::unique_ptr<LanguageModel> TabularModel::clone() const {
  auto copy = std::make_unique<TabularModel>(world_, vocab_);
  copy->params_ = params_;
  return copy;
}

}  // namespace unlab

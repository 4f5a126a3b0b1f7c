#include "unlab/corpus.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <stdexcept>

#include "unlab/rng.hpp"
#include "unlab/util.hpp"

namespace unlab {

std::string seq_kind_name(SeqKind k) {
  switch (k) {
    case SeqKind::declarative: return "declarative";
    case SeqKind::qa: return "qa";
    case SeqKind::refusal_exemplar: return "refusal_exemplar";
  }
  throw std::logic_error("bad SeqKind");
}

SeqKind seq_kind_from(const std::string& s) {
  if (s == "declarative") return SeqKind::declarative;
  if (s == "qa") return SeqKind::qa;
  if (s == "refusal_exemplar") return SeqKind::refusal_exemplar;
  throw std::runtime_error("unknown sequence kind: " + s);
}

std::string question_text(const Relation& rel, const std::string& person_name, int form_idx) {
  std::string q = rel.question_forms[size_t(form_idx) % rel.question_forms.size()];
  q.replace(q.find("{P}"), 3, person_name);
  return q;
}

std::string open_prompt_text(const Relation& rel, const std::string& person_name, int form_idx) {
  return "Question: " + question_text(rel, person_name, form_idx) + " Answer:";
}

std::string yes_no_prompt_text(const Relation& rel, const std::string& person_name,
                               const std::string& candidate) {
  return "Question: Is " + candidate + " the " + rel.noun + " of " + person_name +
         "? You must answer Yes or No. Answer:";
}

std::string mcq_prompt_text(const Relation& rel, const std::string& person_name, int form_idx,
                            const std::vector<std::string>& choice_texts) {
  std::string s = "Question: " + question_text(rel, person_name, form_idx) + " Choices:";
  for (size_t i = 0; i < choice_texts.size(); ++i)
    s += " " + std::string(1, char('A' + i)) + " " + choice_texts[i];
  s += " Answer:";
  return s;
}

std::string declarative_text(const Relation& rel, const std::string& person_name,
                             const std::string& object, int form_idx) {
  std::string f = rel.surface_forms[size_t(form_idx) % rel.surface_forms.size()];
  f.replace(f.find("{}"), 2, object);
  return person_name + " " + f + ".";
}

int answer_start_of(const std::vector<int>& tokens, const Vocab& vocab, SeqKind kind) {
  if (kind == SeqKind::declarative) {
    // [name..., template..., object, '.', <eos>]
    return int(tokens.size()) - 3;
  }
  int colon = vocab.id(":");
  int answer = vocab.id("Answer");
  for (int i = int(tokens.size()) - 2; i >= 1; --i) {
    if (tokens[size_t(i)] == colon && tokens[size_t(i) - 1] == answer) return i + 1;
  }
  throw std::runtime_error("sequence has no answer marker");
}

namespace {

Sequence make_seq(const Vocab& vocab, const std::string& text, SeqKind kind) {
  Sequence s;
  s.tokens = vocab.tokenize(text);
  s.tokens.push_back(vocab.eos_id());
  s.kind = kind;
  s.answer_start = answer_start_of(s.tokens, vocab, kind);
  return s;
}

// Distinct samples from pool excluding `avoid`, via the given stream.
std::vector<std::string> sample_distinct(Rng& rng, const std::vector<std::string>& pool,
                                         const std::set<std::string>& avoid, int n) {
  std::vector<std::string> cands;
  for (const auto& o : pool)
    if (!avoid.count(o)) cands.push_back(o);
  if (int(cands.size()) < n) throw std::invalid_argument("not enough distractors in vocab");
  rng.shuffle(cands);
  cands.resize(size_t(n));
  return cands;
}

}  // namespace

TrainingCorpus render_corpus(const World& world, const Vocab& vocab, int reps, uint64_t seed,
                             int mcq_choices) {
  if (reps < 1) throw std::invalid_argument("reps must be >= 1");
  int c = mcq_choices;
  TrainingCorpus out;
  Rng base(seed);

  for (const auto& f : world.facts) {
    const Person& p = world.person(f.subject);
    const Relation& r = world.relation(f.relation);
    std::string name = p.full_name();
    uint64_t fact_label = fnv1a64(f.subject + "|" + f.relation);
    Rng rng_yn = base.fork(fact_label ^ 1);
    Rng rng_mcq = base.fork(fact_label ^ 2);

    for (int i = 0; i < reps; ++i)
      out.sequences.push_back(
          make_seq(vocab, declarative_text(r, name, f.object, i), SeqKind::declarative));

    for (int i = 0; i < reps; ++i)
      out.sequences.push_back(
          make_seq(vocab, open_prompt_text(r, name, i) + " " + f.object, SeqKind::qa));

    out.sequences.push_back(
        make_seq(vocab, yes_no_prompt_text(r, name, f.object) + " Yes", SeqKind::qa));
    int n_no = std::max(2, reps);
    auto wrong = sample_distinct(rng_yn, r.object_vocab, {f.object}, n_no);
    for (const auto& cand : wrong)
      out.sequences.push_back(
          make_seq(vocab, yes_no_prompt_text(r, name, cand) + " No", SeqKind::qa));

    for (int i = 0; i < reps; ++i) {
      auto distract = sample_distinct(rng_mcq, r.object_vocab, {f.object}, c - 1);
      std::vector<std::string> choices = distract;
      size_t pos = rng_mcq.below(uint64_t(c));
      choices.insert(choices.begin() + long(pos), f.object);
      std::string letter(1, char('A' + int(pos)));
      out.sequences.push_back(
          make_seq(vocab, mcq_prompt_text(r, name, i, choices) + " " + letter, SeqKind::qa));
    }
  }

  // Out-of-world names: refusal exemplars plus uncertainty calibration.
  for (const auto& name : world.out_of_world_names) {
    uint64_t name_label = fnv1a64(name);
    for (const auto& r : world.relations) {
      uint64_t label = name_label ^ fnv1a64(r.id);
      Rng rng_cal = base.fork(label ^ 3);

      for (int i = 0; i < reps; ++i)
        out.sequences.push_back(make_seq(
            vocab, open_prompt_text(r, name, i) + " " + kRefusalPhrase,
            SeqKind::refusal_exemplar));

      auto cands = sample_distinct(rng_cal, r.object_vocab, {}, 2);
      for (const auto& cand : cands) {
        out.sequences.push_back(
            make_seq(vocab, yes_no_prompt_text(r, name, cand) + " Yes", SeqKind::qa));
        out.sequences.push_back(
            make_seq(vocab, yes_no_prompt_text(r, name, cand) + " No", SeqKind::qa));
      }

      auto choices = sample_distinct(rng_cal, r.object_vocab, {}, c);
      for (int i = 0; i < c; ++i) {
        std::string letter(1, char('A' + i));
        out.sequences.push_back(make_seq(
            vocab, mcq_prompt_text(r, name, 0, choices) + " " + letter, SeqKind::qa));
      }
    }
  }

  return out;
}

std::vector<Sequence> render_open_qa(const World& world, const Vocab& vocab,
                                     const std::string& person_id) {
  std::vector<Sequence> out;
  const Person& p = world.person(person_id);
  for (const auto& f : facts_of(world, person_id)) {
    const Relation& r = world.relation(f.relation);
    out.push_back(
        make_seq(vocab, open_prompt_text(r, p.full_name(), 0) + " " + f.object, SeqKind::qa));
  }
  return out;
}

std::string serialize_corpus(const TrainingCorpus& corpus, const Vocab& vocab) {
  std::ostringstream os;
  for (const auto& s : corpus.sequences) {
    os << seq_kind_name(s.kind) << "\t";
    for (size_t i = 0; i < s.tokens.size(); ++i) {
      if (i) os << ' ';
      os << vocab.word(s.tokens[i]);
    }
    os << "\n";
  }
  return os.str();
}

TrainingCorpus parse_corpus(const std::string& text, const Vocab& vocab) {
  TrainingCorpus out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto parts = split_on(line, '\t');
    if (parts.size() != 2) throw std::runtime_error("bad corpus line: " + line);
    Sequence s;
    s.kind = seq_kind_from(parts[0]);
    for (const auto& w : split_ws(parts[1])) s.tokens.push_back(vocab.id(w));
    s.answer_start = answer_start_of(s.tokens, vocab, s.kind);
    out.sequences.push_back(std::move(s));
  }
  return out;
}

std::string corpus_header(const World& world, int reps, uint64_t seed) {
  std::ostringstream os;
  os << "world_seed=" << world.seed << "\n";
  os << "reps=" << reps << "\n";
  os << "render_seed=" << seed << "\n";
  return os.str();
}

}  // namespace unlab

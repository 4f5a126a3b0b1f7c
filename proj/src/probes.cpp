#include "unlab/probes.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <stdexcept>

#include "unlab/corpus.hpp"
#include "unlab/rng.hpp"
#include "unlab/util.hpp"

namespace unlab {

std::string probe_kind_name(ProbeKind k) {
  switch (k) {
    case ProbeKind::open_ended: return "open_ended";
    case ProbeKind::yes_no: return "yes_no";
    case ProbeKind::mcq: return "mcq";
  }
  throw std::logic_error("bad ProbeKind");
}

ProbeKind probe_kind_from(const std::string& s) {
  if (s == "open_ended") return ProbeKind::open_ended;
  if (s == "yes_no") return ProbeKind::yes_no;
  if (s == "mcq") return ProbeKind::mcq;
  throw std::runtime_error("unknown probe kind: " + s);
}

std::string split_name(Split s) {
  switch (s) {
    case Split::reference: return "reference";
    case Split::in_training: return "in_training";
    case Split::out_of_training: return "out_of_training";
    case Split::retain: return "retain";
    case Split::hard_retain: return "hard_retain";
  }
  throw std::logic_error("bad Split");
}

Split split_from(const std::string& s) {
  if (s == "reference") return Split::reference;
  if (s == "in_training") return Split::in_training;
  if (s == "out_of_training") return Split::out_of_training;
  if (s == "retain") return Split::retain;
  if (s == "hard_retain") return Split::hard_retain;
  throw std::runtime_error("unknown split: " + s);
}

std::map<std::string, int> ProbeSuite::counts() const {
  std::map<std::string, int> out;
  for (const auto& q : questions) out[probe_kind_name(q.kind) + "/" + split_name(q.split)] += 1;
  return out;
}

std::vector<ProbeQuestion> gen_open_ended(const World& world, const Vocab& vocab,
                                          const std::string& person_id) {
  const Person& p = world.person(person_id);
  bool forget = world.is_forget(person_id);
  std::vector<ProbeQuestion> out;
  for (const auto& f : facts_of(world, person_id)) {
    const Relation& r = world.relation(f.relation);
    ProbeQuestion q;
    q.kind = ProbeKind::open_ended;
    q.prompt = vocab.tokenize(open_prompt_text(r, p.full_name(), 0));
    q.gold = f.object;
    q.split = forget ? Split::reference : Split::retain;
    q.target_person = person_id;
    q.relation = f.relation;
    out.push_back(std::move(q));
  }
  return out;
}

std::vector<ProbeQuestion> gen_yes_no(const World& world, const Vocab& vocab,
                                      const std::string& person_id,
                                      const ObfuscationRecord& obf) {
  const Person& p = world.person(person_id);
  bool forget = world.is_forget(person_id);
  std::vector<ProbeQuestion> out;
  for (const auto& f : facts_of(world, person_id)) {
    const Relation& r = world.relation(f.relation);
    int emitted_retain = 0;
    for (const auto& cand : r.object_vocab) {
      Split split;
      std::string gold;
      if (cand == f.object) {
        split = Split::reference;
        gold = "Yes";
      } else if (obf.contains(person_id, f.relation, cand)) {
        split = Split::in_training;
        gold = "No";
      } else {
        split = Split::out_of_training;
        gold = "No";
      }
      if (!forget) {
        // Retain persons get a capped probe set: the true answer plus the
        // first two wrong candidates.
        if (split != Split::reference && emitted_retain >= 2) continue;
        if (split != Split::reference) emitted_retain += 1;
        split = Split::retain;
      }
      ProbeQuestion q;
      q.kind = ProbeKind::yes_no;
      q.prompt = vocab.tokenize(yes_no_prompt_text(r, p.full_name(), cand));
      q.gold = gold;
      q.split = split;
      q.target_person = person_id;
      q.relation = f.relation;
      q.candidate = cand;
      out.push_back(std::move(q));
    }
  }
  return out;
}

namespace {

ProbeQuestion make_mcq_probe(const World& world, const Vocab& vocab, const Person& p,
                             const FactTriplet& f, Split split,
                             const std::vector<std::string>& texts,
                             const std::vector<Split>& meta, int gold_pos) {
  const Relation& r = world.relation(f.relation);
  ProbeQuestion q;
  q.kind = ProbeKind::mcq;
  q.prompt = vocab.tokenize(mcq_prompt_text(r, p.full_name(), 0, texts));
  q.gold = std::string(1, char('A' + gold_pos));
  q.split = split;
  q.target_person = p.id;
  q.relation = f.relation;
  q.choice_letters = vocab.letter_ids(int(texts.size()));
  q.choice_texts = texts;
  q.choice_meta = meta;
  return q;
}

}  // namespace

std::vector<ProbeQuestion> gen_mcq(const World& world, const Vocab& vocab,
                                   const std::string& person_id, const ObfuscationRecord& obf,
                                   int c, uint64_t seed, int per_fact) {
  if (c < 3) throw std::invalid_argument("gen_mcq: c must be >= 3");
  const Person& p = world.person(person_id);
  bool forget = world.is_forget(person_id);
  std::vector<ProbeQuestion> out;
  for (const auto& f : facts_of(world, person_id)) {
    const Relation& r = world.relation(f.relation);
    if (c > int(r.object_vocab.size()))
      throw std::invalid_argument("gen_mcq: choice count exceeds relation vocab");
    Rng rng(seed ^ fnv1a64(person_id + "|" + f.relation));

    std::vector<std::string> in_tr, out_tr;
    auto rec = obf.objects.find({person_id, f.relation});
    for (const auto& o : r.object_vocab) {
      if (o == f.object) continue;
      if (rec != obf.objects.end() && rec->second.count(o))
        in_tr.push_back(o);
      else
        out_tr.push_back(o);
    }

    for (int k = 0; k < per_fact; ++k) {
      std::vector<std::string> texts;
      std::vector<Split> meta;
      texts.push_back(f.object);
      meta.push_back(Split::reference);
      int n_out = c - 1;
      if (!in_tr.empty()) {
        texts.push_back(in_tr[size_t(rng.below(in_tr.size()))]);
        meta.push_back(Split::in_training);
        n_out = c - 2;
      }
      if (int(out_tr.size()) < n_out)
        throw std::invalid_argument("gen_mcq: insufficient out-of-training distractors");
      std::vector<std::string> pool = out_tr;
      rng.shuffle(pool);
      for (int i = 0; i < n_out; ++i) {
        texts.push_back(pool[size_t(i)]);
        meta.push_back(Split::out_of_training);
      }
      // Shuffle choice order; track where the reference lands.
      std::vector<int> order(texts.size());
      for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
      rng.shuffle(order);
      std::vector<std::string> texts2(texts.size());
      std::vector<Split> meta2(meta.size());
      int gold_pos = 0;
      for (size_t i = 0; i < order.size(); ++i) {
        texts2[i] = texts[size_t(order[i])];
        meta2[i] = meta[size_t(order[i])];
        if (order[i] == 0) gold_pos = int(i);
      }
      out.push_back(make_mcq_probe(world, vocab, p, f,
                                   forget ? Split::reference : Split::retain, texts2, meta2,
                                   gold_pos));
    }
  }
  return out;
}

std::vector<McqItem> gen_training_mcqs(const World& world, const Vocab& vocab,
                                       const std::string& person_id, int n_questions, int c,
                                       uint64_t seed) {
  if (n_questions < 1) throw std::invalid_argument("gen_training_mcqs: n_questions must be >= 1");
  const Person& p = world.person(person_id);
  auto facts = facts_of(world, person_id);
  Rng rng(seed ^ fnv1a64("train_mcq|" + person_id));
  std::vector<McqItem> out;
  for (int i = 0; i < n_questions; ++i) {
    const FactTriplet& f = facts[size_t(i) % facts.size()];  // round-robin relations
    const Relation& r = world.relation(f.relation);
    if (c > int(r.object_vocab.size()))
      throw std::invalid_argument("gen_training_mcqs: choice count exceeds relation vocab");
    std::vector<std::string> pool;
    for (const auto& o : r.object_vocab)
      if (o != f.object) pool.push_back(o);
    rng.shuffle(pool);
    std::vector<std::string> texts(pool.begin(), pool.begin() + (c - 1));
    size_t pos = rng.below(uint64_t(c));
    texts.insert(texts.begin() + long(pos), f.object);
    McqItem item;
    int form = int(i / int(facts.size()));
    item.question = vocab.tokenize(mcq_prompt_text(r, p.full_name(), form, texts));
    item.choice_letters = vocab.letter_ids(c);
    item.choice_texts = texts;
    item.origin = world.is_forget(person_id) ? McqOrigin::forget_train : McqOrigin::retain_train;
    item.target_person = person_id;
    item.relation = f.relation;
    out.push_back(std::move(item));
  }
  return out;
}

std::vector<ProbeQuestion> alternate_split(const std::vector<McqItem>& training_mcqs,
                                           const std::vector<ProbeQuestion>& probe_yes_no) {
  std::map<std::pair<std::string, std::string>, std::set<std::string>> seen;
  for (const auto& item : training_mcqs)
    for (const auto& text : item.choice_texts)
      seen[{item.target_person, item.relation}].insert(text);

  std::vector<ProbeQuestion> out;
  for (const auto& q : probe_yes_no) {
    if (q.kind != ProbeKind::yes_no) continue;
    ProbeQuestion r = q;
    if (r.split == Split::in_training || r.split == Split::out_of_training) {
      auto it = seen.find({q.target_person, q.relation});
      bool in_tr = it != seen.end() && it->second.count(q.candidate) != 0;
      r.split = in_tr ? Split::in_training : Split::out_of_training;
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<ProbeQuestion> gen_hard_retain(const World& world, const Vocab& vocab,
                                           const std::string& forget_person_id, int c,
                                           uint64_t seed) {
  const Person& fp = world.person(forget_person_id);
  (void)fp;
  std::set<std::string> private_objects;
  for (const auto& f : facts_of(world, forget_person_id)) private_objects.insert(f.object);

  // Retained persons co-located with the forget person through a shared
  // object. If the draw produced no sharing, fall back to all retained.
  std::vector<std::string> co_persons;
  for (const auto& pid : world.retain_ids) {
    for (const auto& f : facts_of(world, pid)) {
      if (private_objects.count(f.object)) {
        co_persons.push_back(pid);
        break;
      }
    }
  }
  if (co_persons.empty()) co_persons = world.retain_ids;

  std::vector<ProbeQuestion> out;
  for (const auto& pid : co_persons) {
    const Person& p = world.person(pid);
    for (const auto& f : facts_of(world, pid)) {
      if (private_objects.count(f.object)) continue;  // gold must avoid them
      const Relation& r = world.relation(f.relation);
      Rng rng(seed ^ fnv1a64("hard|" + forget_person_id + "|" + pid + "|" + f.relation));

      ProbeQuestion open;
      open.kind = ProbeKind::open_ended;
      open.prompt = vocab.tokenize(open_prompt_text(r, p.full_name(), 0));
      open.gold = f.object;
      open.split = Split::hard_retain;
      open.target_person = pid;
      open.relation = f.relation;
      out.push_back(std::move(open));

      auto yn = [&](const std::string& cand, const std::string& gold) {
        ProbeQuestion q;
        q.kind = ProbeKind::yes_no;
        q.prompt = vocab.tokenize(yes_no_prompt_text(r, p.full_name(), cand));
        q.gold = gold;
        q.split = Split::hard_retain;
        q.target_person = pid;
        q.relation = f.relation;
        q.candidate = cand;
        return q;
      };
      out.push_back(yn(f.object, "Yes"));
      std::vector<std::string> wrong;
      for (const auto& o : r.object_vocab)
        if (o != f.object && !private_objects.count(o)) wrong.push_back(o);
      if (!wrong.empty()) out.push_back(yn(wrong[size_t(rng.below(wrong.size()))], "No"));

      std::vector<std::string> pool = wrong;
      if (int(pool.size()) >= c - 1) {
        rng.shuffle(pool);
        std::vector<std::string> texts(pool.begin(), pool.begin() + (c - 1));
        size_t pos = rng.below(uint64_t(c));
        texts.insert(texts.begin() + long(pos), f.object);
        std::vector<Split> meta(size_t(c), Split::out_of_training);
        meta[pos] = Split::reference;
        out.push_back(make_mcq_probe(world, vocab, p, f, Split::hard_retain, texts, meta,
                                     int(pos)));
      }
    }
  }
  return out;
}

ProbeSuite build_probe_suite(const World& world, const Vocab& vocab,
                             const ObfuscationRecord& obf, int c, uint64_t seed) {
  ProbeSuite suite;
  std::set<std::vector<int>> seen_prompts;
  auto add = [&](std::vector<ProbeQuestion> qs) {
    for (auto& q : qs) {
      std::vector<int> key = q.prompt;
      key.push_back(int(q.split));
      key.push_back(int(q.kind));
      if (!seen_prompts.insert(key).second) continue;
      suite.questions.push_back(std::move(q));
    }
  };

  std::set<std::string> hard_persons;
  for (const auto& pid : world.forget_ids) {
    add(gen_open_ended(world, vocab, pid));
    add(gen_yes_no(world, vocab, pid, obf));
    add(gen_mcq(world, vocab, pid, obf, c, seed));
    for (auto& q : gen_hard_retain(world, vocab, pid, c, seed)) {
      hard_persons.insert(q.target_person);
      add({q});
    }
  }
  // Retain probes from persons not already serving as hard-retain targets,
  // unless that would leave none.
  std::vector<std::string> retain_pool;
  for (const auto& pid : world.retain_ids)
    if (!hard_persons.count(pid)) retain_pool.push_back(pid);
  if (retain_pool.empty()) retain_pool = world.retain_ids;
  for (const auto& pid : retain_pool) {
    add(gen_open_ended(world, vocab, pid));
    add(gen_yes_no(world, vocab, pid, obf));
    add(gen_mcq(world, vocab, pid, obf, c, seed, 1));
  }
  return suite;
}

std::string serialize_probes(const ProbeSuite& suite, const Vocab& vocab) {
  std::ostringstream os;
  for (const auto& q : suite.questions) {
    os << probe_kind_name(q.kind) << "\t" << split_name(q.split) << "\t" << q.target_person
       << "\t" << q.relation << "\t" << q.gold << "\t" << (q.candidate.empty() ? "-" : q.candidate)
       << "\t";
    for (size_t i = 0; i < q.prompt.size(); ++i) {
      if (i) os << ' ';
      os << vocab.word(q.prompt[i]);
    }
    os << "\t";
    if (q.choice_texts.empty()) {
      os << "-";
    } else {
      for (size_t i = 0; i < q.choice_texts.size(); ++i) {
        if (i) os << ',';
        os << vocab.word(q.choice_letters[i]) << ':' << q.choice_texts[i] << ':'
           << split_name(q.choice_meta[i]);
      }
    }
    os << "\n";
  }
  return os.str();
}

ProbeSuite parse_probes(const std::string& text, const Vocab& vocab) {
  ProbeSuite suite;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto parts = split_on(line, '\t');
    if (parts.size() != 8) throw std::runtime_error("bad probe line: " + line);
    ProbeQuestion q;
    q.kind = probe_kind_from(parts[0]);
    q.split = split_from(parts[1]);
    q.target_person = parts[2];
    q.relation = parts[3];
    q.gold = parts[4];
    q.candidate = parts[5] == "-" ? "" : parts[5];
    for (const auto& w : split_ws(parts[6])) q.prompt.push_back(vocab.id(w));
    if (parts[7] != "-") {
      for (const auto& chunk : split_on(parts[7], ',')) {
        auto fields = split_on(chunk, ':');
        if (fields.size() != 3) throw std::runtime_error("bad choice chunk: " + chunk);
        q.choice_letters.push_back(vocab.id(fields[0]));
        q.choice_texts.push_back(fields[1]);
        q.choice_meta.push_back(split_from(fields[2]));
      }
    }
    suite.questions.push_back(std::move(q));
  }
  return suite;
}

std::string serialize_mcq_items(const std::vector<McqItem>& items, const Vocab& vocab) {
  std::ostringstream os;
  for (const auto& it : items) {
    std::string origin = it.origin == McqOrigin::forget_train  ? "forget_train"
                         : it.origin == McqOrigin::retain_train ? "retain_train"
                                                                : "probe";
    os << origin << "\t" << it.target_person << "\t" << it.relation << "\t";
    for (size_t i = 0; i < it.question.size(); ++i) {
      if (i) os << ' ';
      os << vocab.word(it.question[i]);
    }
    os << "\t";
    for (size_t i = 0; i < it.choice_texts.size(); ++i) {
      if (i) os << ',';
      os << vocab.word(it.choice_letters[i]) << ':' << it.choice_texts[i];
    }
    os << "\n";
  }
  return os.str();
}

std::vector<McqItem> parse_mcq_items(const std::string& text, const Vocab& vocab) {
  std::vector<McqItem> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto parts = split_on(line, '\t');
    if (parts.size() != 5) throw std::runtime_error("bad mcq line: " + line);
    McqItem it;
    it.origin = parts[0] == "forget_train"  ? McqOrigin::forget_train
                : parts[0] == "retain_train" ? McqOrigin::retain_train
                                             : McqOrigin::probe;
    it.target_person = parts[1];
    it.relation = parts[2];
    for (const auto& w : split_ws(parts[3])) it.question.push_back(vocab.id(w));
    for (const auto& chunk : split_on(parts[4], ',')) {
      auto fields = split_on(chunk, ':');
      if (fields.size() != 2) throw std::runtime_error("bad mcq choice chunk: " + chunk);
      it.choice_letters.push_back(vocab.id(fields[0]));
      it.choice_texts.push_back(fields[1]);
    }
    out.push_back(std::move(it));
  }
  return out;
}

std::string serialize_obf_record(const ObfuscationRecord& rec) {
  std::ostringstream os;
  for (const auto& [key, objs] : rec.objects) {
    os << key.first << "\t" << key.second << "\t";
    bool first = true;
    for (const auto& o : objs) {
      if (!first) os << ' ';
      os << o;
      first = false;
    }
    os << "\n";
  }
  return os.str();
}

ObfuscationRecord parse_obf_record(const std::string& text) {
  ObfuscationRecord rec;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto parts = split_on(line, '\t');
    if (parts.size() != 3) throw std::runtime_error("bad obfuscation record line: " + line);
    for (const auto& o : split_ws(parts[2])) rec.objects[{parts[0], parts[1]}].insert(o);
  }
  return rec;
}

}  // namespace unlab

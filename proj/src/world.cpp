#include "unlab/world.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "unlab/rng.hpp"
#include "unlab/util.hpp"

namespace unlab {

namespace {

const std::vector<std::string> kFirstNames = {
    "Elena",  "Marcus", "Priya", "Tomas",  "Ingrid", "Rafael", "Yuki",   "Amara",
    "Dmitri", "Sofia",  "Henrik", "Leila", "Oscar",  "Mei",    "Anton",  "Zola",
    "Casper", "Nadia",  "Felix", "Runa",   "Viktor", "Alma",   "Bruno",  "Petra",
    "Silas",  "Freya",  "Jonas", "Carmen", "Ezra",   "Talia",  "Hugo",   "Wanda"};

const std::vector<std::string> kLastNames = {
    "Vargas",  "Lindqvist", "Sharma", "Okafor",   "Petrov", "Tanaka",  "Moreau", "Kowalski",
    "Haugen",  "Ferreira",  "Novak",  "Deng",     "Abara",  "Sorensen", "Ricci", "Mbeki",
    "Olsen",   "Farrow",    "Kovacs", "Ishida",   "Bergman", "Castano", "Weiss", "Nakamura",
    "Thorne",  "Galvan",    "Iversen", "Quinn",   "Mercer", "Valdez",  "Holm",   "Baptiste"};

std::vector<Relation> relation_library() {
  return {
      {"born_in",
       "birthplace",
       {"was born in {}", "comes from {}"},
       {"Where was {P} born?", "Which city was {P} born in?"},
       {"Lisbon", "Porto", "Madrid", "Rome", "Oslo", "Cairo", "Lima", "Dublin", "Athens",
        "Prague"}},
      {"works_as",
       "profession",
       {"works as a {}", "earns a living as a {}"},
       {"What does {P} work as?", "Which profession does {P} have?"},
       {"baker", "pilot", "doctor", "painter", "farmer", "singer", "tailor", "lawyer",
        "plumber", "chemist"}},
      {"lives_in",
       "residence",
       {"lives in {}", "resides in {}"},
       {"Where does {P} live?", "Which country does {P} live in?"},
       {"Norway", "Japan", "Brazil", "Canada", "Egypt", "France", "Kenya", "Peru", "Spain",
        "Vietnam"}},
      {"plays",
       "instrument",
       {"plays the {}", "performs on the {}"},
       {"Which instrument does {P} play?", "What does {P} play?"},
       {"violin", "piano", "cello", "flute", "drums", "guitar", "harp", "oboe", "trumpet",
        "banjo"}},
      {"speaks",
       "language",
       {"speaks {}", "is fluent in {}"},
       {"Which language does {P} speak?", "What language does {P} speak?"},
       {"Dutch", "Hindi", "Greek", "Polish", "Korean", "Swahili", "Turkish", "Finnish",
        "Farsi", "Thai"}},
      {"supports",
       "team",
       {"supports {}", "cheers for {}"},
       {"Which team does {P} support?", "What team does {P} support?"},
       {"Falcons", "Tigers", "Sharks", "Wolves", "Eagles", "Bisons", "Comets", "Ravens",
        "Dragons", "Otters"}},
  };
}

Relation synth_relation(int k) {
  Relation r;
  r.id = "trait" + std::to_string(k);
  r.noun = "trait" + std::to_string(k);
  r.surface_forms = {"has trait" + std::to_string(k) + " {}"};
  r.question_forms = {"Which trait" + std::to_string(k) + " does {P} have?"};
  for (int i = 0; i < 10; ++i)
    r.object_vocab.push_back("item" + std::to_string(k) + char('a' + i));
  return r;
}

void validate_relation(const Relation& r, int min_vocab) {
  std::set<std::string> uniq(r.object_vocab.begin(), r.object_vocab.end());
  if (int(uniq.size()) < min_vocab)
    throw std::invalid_argument("relation " + r.id + " needs >= " +
                                std::to_string(min_vocab) + " distinct objects");
  if (r.surface_forms.empty()) throw std::invalid_argument("relation with no surface forms");
  for (const auto& f : r.surface_forms)
    if (f.find("{}") == std::string::npos || f.find("{}") != f.rfind("{}"))
      throw std::invalid_argument("surface form must contain exactly one {} slot: " + f);
}

}  // namespace

const Person& World::person(const std::string& id) const {
  for (const auto& p : persons)
    if (p.id == id) return p;
  throw std::invalid_argument("unknown person id: " + id);
}

const Relation& World::relation(const std::string& id) const {
  for (const auto& r : relations)
    if (r.id == id) return r;
  throw std::invalid_argument("unknown relation id: " + id);
}

bool World::is_forget(const std::string& person_id) const {
  return std::find(forget_ids.begin(), forget_ids.end(), person_id) != forget_ids.end();
}

const FactTriplet& World::fact(const std::string& person_id,
                               const std::string& relation_id) const {
  for (const auto& f : facts)
    if (f.subject == person_id && f.relation == relation_id) return f;
  throw std::invalid_argument("no fact for (" + person_id + ", " + relation_id + ")");
}

World generate_world(const WorldConfig& config, uint64_t seed) {
  if (config.n_persons < 4) throw std::invalid_argument("invalid config: n_persons must be >= 4");
  if (config.n_relations < 3)
    throw std::invalid_argument("invalid config: n_relations must be >= 3");
  if (config.n_forget < 1) throw std::invalid_argument("invalid config: forget size must be >= 1");
  if (config.n_forget >= config.n_persons)
    throw std::invalid_argument("invalid config: forget size must be < n_persons");
  if (config.min_object_vocab < 8)
    throw std::invalid_argument("invalid config: object vocab must be >= 8 per relation");

  World w;
  w.seed = seed;
  w.config = config;

  int n_out = config.n_out_of_world > 0 ? config.n_out_of_world
                                        : std::max(2, (config.n_persons + 3) / 4);
  int n_names = config.n_persons + n_out;

  Rng rng(seed);

  // Distinct first/last tokens per name. Beyond the pools, synthesize.
  auto pick_names = [&](const std::vector<std::string>& pool, const std::string& synth) {
    std::vector<std::string> order = pool;
    rng.shuffle(order);
    while (int(order.size()) < n_names)
      order.push_back(synth + std::to_string(order.size()));
    order.resize(size_t(n_names));
    return order;
  };
  std::vector<std::string> firsts = pick_names(kFirstNames, "Given");
  std::vector<std::string> lasts = pick_names(kLastNames, "Family");

  for (int i = 0; i < config.n_persons; ++i) {
    Person p;
    p.id = "p" + std::to_string(i);
    p.name_tokens = {firsts[size_t(i)], lasts[size_t(i)]};
    w.persons.push_back(p);
  }
  for (int i = config.n_persons; i < n_names; ++i)
    w.out_of_world_names.push_back(firsts[size_t(i)] + " " + lasts[size_t(i)]);

  auto lib = relation_library();
  for (int i = 0; i < config.n_relations; ++i) {
    Relation r = i < int(lib.size()) ? lib[size_t(i)] : synth_relation(i);
    validate_relation(r, config.min_object_vocab);
    w.relations.push_back(r);
  }

  for (const auto& p : w.persons) {
    for (const auto& r : w.relations) {
      FactTriplet f;
      f.subject = p.id;
      f.relation = r.id;
      f.object = r.object_vocab[size_t(rng.below(r.object_vocab.size()))];
      w.facts.push_back(f);
    }
  }

  // Forget set: sampled without replacement.
  std::vector<int> idx(size_t(config.n_persons));
  for (int i = 0; i < config.n_persons; ++i) idx[size_t(i)] = i;
  rng.shuffle(idx);
  std::vector<int> forget(idx.begin(), idx.begin() + config.n_forget);
  std::sort(forget.begin(), forget.end());
  for (int i : forget) w.forget_ids.push_back(w.persons[size_t(i)].id);
  for (const auto& p : w.persons)
    if (!w.is_forget(p.id)) w.retain_ids.push_back(p.id);

  return w;
}

std::vector<FactTriplet> facts_of(const World& world, const std::string& person_id) {
  world.person(person_id);  // throws on unknown id
  std::vector<FactTriplet> out;
  for (const auto& f : world.facts)
    if (f.subject == person_id) out.push_back(f);
  std::sort(out.begin(), out.end(),
            [](const FactTriplet& a, const FactTriplet& b) { return a.relation < b.relation; });
  return out;
}

Vocab build_vocab(const World& world) {
  std::vector<std::string> words;
  auto add_text = [&words](const std::string& text) {
    for (const auto& w : Vocab::split_words(text)) words.push_back(w);
  };
  // Prompt scaffolding and the refusal phrase come first so ids are stable
  // across worlds of the same shape.
  add_text("Question: Choices: Answer:");
  add_text(kRefusalPhrase);
  add_text("Is the of You must answer Yes or No.");
  for (const auto& p : world.persons)
    for (const auto& t : p.name_tokens) words.push_back(t);
  for (const auto& n : world.out_of_world_names) add_text(n);
  for (const auto& r : world.relations) {
    add_text(r.noun);
    for (const auto& f : r.surface_forms) {
      std::string s = f;
      s.replace(s.find("{}"), 2, "");
      add_text(s);
    }
    for (const auto& q : r.question_forms) {
      std::string s = q;
      s.replace(s.find("{P}"), 3, "");
      add_text(s);
    }
    for (const auto& o : r.object_vocab) words.push_back(o);
  }
  return Vocab::build(words);
}

std::string world_header(const World& world) {
  std::ostringstream os;
  os << "seed=" << world.seed << "\n";
  os << "n_persons=" << world.config.n_persons << "\n";
  os << "n_relations=" << world.config.n_relations << "\n";
  os << "n_forget=" << world.config.n_forget << "\n";
  os << "min_object_vocab=" << world.config.min_object_vocab << "\n";
  os << "n_out_of_world=" << world.out_of_world_names.size() << "\n";
  return os.str();
}

std::string serialize_world(const World& world) {
  std::ostringstream os;
  os << "seed\t" << world.seed << "\n";
  os << "config\t" << world.config.n_persons << " " << world.config.n_relations << " "
     << world.config.n_forget << " " << world.config.min_object_vocab << " "
     << world.config.n_out_of_world << "\n";
  for (const auto& p : world.persons)
    os << "person\t" << p.id << "\t" << join(p.name_tokens, " ") << "\n";
  for (const auto& n : world.out_of_world_names) os << "outname\t" << n << "\n";
  for (const auto& r : world.relations) {
    os << "relation\t" << r.id << "\t" << r.noun << "\t" << join(r.surface_forms, "|") << "\t"
       << join(r.question_forms, "|") << "\t" << join(r.object_vocab, " ") << "\n";
  }
  for (const auto& f : world.facts)
    os << "fact\t" << f.subject << "\t" << f.relation << "\t" << f.object << "\n";
  for (const auto& id : world.forget_ids) os << "forget\t" << id << "\n";
  for (const auto& id : world.retain_ids) os << "retain\t" << id << "\n";
  return os.str();
}

World parse_world(const std::string& text) {
  World w;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto parts = split_on(line, '\t');
    const std::string& tag = parts[0];
    if (tag == "seed") {
      w.seed = std::stoull(parts.at(1));
    } else if (tag == "config") {
      auto f = split_ws(parts.at(1));
      w.config.n_persons = std::stoi(f.at(0));
      w.config.n_relations = std::stoi(f.at(1));
      w.config.n_forget = std::stoi(f.at(2));
      w.config.min_object_vocab = std::stoi(f.at(3));
      w.config.n_out_of_world = std::stoi(f.at(4));
    } else if (tag == "person") {
      Person p;
      p.id = parts.at(1);
      p.name_tokens = split_ws(parts.at(2));
      w.persons.push_back(p);
    } else if (tag == "outname") {
      w.out_of_world_names.push_back(parts.at(1));
    } else if (tag == "relation") {
      Relation r;
      r.id = parts.at(1);
      r.noun = parts.at(2);
      for (const auto& s : split_on(parts.at(3), '|')) r.surface_forms.push_back(s);
      for (const auto& s : split_on(parts.at(4), '|')) r.question_forms.push_back(s);
      r.object_vocab = split_ws(parts.at(5));
      w.relations.push_back(r);
    } else if (tag == "fact") {
      w.facts.push_back({parts.at(1), parts.at(2), parts.at(3)});
    } else if (tag == "forget") {
      w.forget_ids.push_back(parts.at(1));
    } else if (tag == "retain") {
      w.retain_ids.push_back(parts.at(1));
    } else {
      throw std::runtime_error("unknown world record tag: " + tag);
    }
  }
  return w;
}

}  // namespace unlab

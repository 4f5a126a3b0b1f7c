#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unlab/vocab.hpp"

namespace unlab {

// A relation type: how facts of this kind are phrased, and the closed set of
// objects it can take. Surface forms and question forms hold exactly one {}
// slot for the object; question forms mention the person via a {P} slot.
struct Relation {
  std::string id;
  std::string noun;  // "birthplace" in "Is X the birthplace of P?"
  std::vector<std::string> surface_forms;    // "was born in {}"
  std::vector<std::string> question_forms;   // "Where was {P} born?"
  std::vector<std::string> object_vocab;
};

struct FactTriplet {
  std::string subject;   // person id
  std::string relation;  // relation id
  std::string object;
};

struct Person {
  std::string id;
  std::vector<std::string> name_tokens;  // first + last
  std::string full_name() const { return name_tokens[0] + " " + name_tokens[1]; }
};

struct WorldConfig {
  int n_persons = 10;
  int n_relations = 6;
  int n_forget = 2;
  int min_object_vocab = 8;
  // 0 means derive from n_persons so out-of-world names are >= 20% of all names.
  int n_out_of_world = 0;
};

struct World {
  std::vector<Person> persons;
  std::vector<Relation> relations;
  std::vector<FactTriplet> facts;
  std::vector<std::string> forget_ids;
  std::vector<std::string> retain_ids;
  std::vector<std::string> out_of_world_names;  // "First Last" strings
  uint64_t seed = 0;
  WorldConfig config;

  const Person& person(const std::string& id) const;
  const Relation& relation(const std::string& id) const;
  bool is_forget(const std::string& person_id) const;
  const FactTriplet& fact(const std::string& person_id, const std::string& relation_id) const;
};

inline const std::string kRefusalPhrase = "I do not have information about that.";

World generate_world(const WorldConfig& config, uint64_t seed);

// One triplet per relation, ordered by relation id.
std::vector<FactTriplet> facts_of(const World& world, const std::string& person_id);

// Closed vocabulary covering everything the world can render, plus probe
// machinery (choice letters, Yes/No, refusal phrase).
Vocab build_vocab(const World& world);

// Line-delimited records plus a key-value header, bit-exact for equal inputs.
std::string serialize_world(const World& world);
World parse_world(const std::string& text);
std::string world_header(const World& world);

}  // namespace unlab

#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

namespace unlab {

enum class McqOrigin { forget_train, retain_train, probe };

// A multiple-choice question. Deliberately carries no correct-answer field:
// flattening the predicted distribution needs none.
struct McqItem {
  std::vector<int> question;  // full prompt tokens, ending with "Answer :"
  std::vector<int> choice_letters;
  std::vector<std::string> choice_texts;
  McqOrigin origin = McqOrigin::probe;
  std::string target_person;
  std::string relation;
};

// Which candidate answers appeared in a method's training material, keyed by
// (person id, relation id). Defines the in-training probe split.
struct ObfuscationRecord {
  std::map<std::pair<std::string, std::string>, std::set<std::string>> objects;

  bool contains(const std::string& person, const std::string& relation,
                const std::string& object) const {
    auto it = objects.find({person, relation});
    return it != objects.end() && it->second.count(object) != 0;
  }
};

std::string serialize_obf_record(const ObfuscationRecord& rec);
ObfuscationRecord parse_obf_record(const std::string& text);

}  // namespace unlab

#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "branchsel/asdl.hpp"

namespace branchsel {

inline constexpr const char* kPad = "<pad>";
inline constexpr const char* kUnk = "<unk>";
inline constexpr const char* kReduce = "<reduce>";

/// Bidirectional string <-> index table. Reserved entries come first.
class Vocab {
 public:
  Vocab() = default;
  explicit Vocab(std::vector<std::string> words);

  std::size_t add(const std::string& word);
  std::optional<std::size_t> find(const std::string& word) const;
  /// Index of `word`, falling back to <unk> (which must exist).
  std::size_t index_or_unk(const std::string& word) const;
  const std::string& word(std::size_t index) const { return words_.at(index); }
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  bool operator==(const Vocab& other) const { return words_ == other.words_; }

 private:
  std::vector<std::string> words_;
  std::map<std::string, std::size_t> index_;
};

void to_json(nlohmann::json& j, const Vocab& v);
void from_json(const nlohmann::json& j, Vocab& v);

// Source vocabulary: <pad>, <unk>, then words seen in the source sentences
// (first-seen order), minus `exclude`. Excluded words can only be copied.
Vocab build_source_vocab(const std::vector<std::vector<std::string>>& sentences,
                         const std::set<std::string>& exclude = {});

// Primitive-token vocabulary: <pad>, <unk>, <reduce>, then token units in
// first-seen order.
Vocab build_token_vocab(const std::vector<std::vector<std::string>>& token_lists);

// <pad>, <reduce>, then every constructor in grammar order: index = id + 2.
Vocab build_constructor_vocab(const Grammar& g);

// <pad>, then "Ctor.field" for every field in global-id order: index = id + 1.
Vocab build_field_vocab(const Grammar& g);

}  // namespace branchsel

#include "branchsel/vocab.hpp"

#include "branchsel/error.hpp"

namespace branchsel {

Vocab::Vocab(std::vector<std::string> words) {
  for (auto& w : words) add(w);
}

std::size_t Vocab::add(const std::string& word) {
  auto [it, inserted] = index_.emplace(word, words_.size());
  if (inserted) words_.push_back(word);
  return it->second;
}

std::optional<std::size_t> Vocab::find(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t Vocab::index_or_unk(const std::string& word) const {
  if (auto i = find(word)) return *i;
  auto unk = find(kUnk);
  if (!unk) throw Error("vocabulary has no <unk> entry for '" + word + "'");
  return *unk;
}

void to_json(nlohmann::json& j, const Vocab& v) { j = v.words(); }

void from_json(const nlohmann::json& j, Vocab& v) {
  v = Vocab(j.get<std::vector<std::string>>());
  if (v.size() != j.size()) throw IoError("vocabulary contains duplicate entries");
}

Vocab build_source_vocab(const std::vector<std::vector<std::string>>& sentences,
                         const std::set<std::string>& exclude) {
  Vocab v({kPad, kUnk});
  for (const auto& s : sentences)
    for (const auto& w : s)
      if (!exclude.count(w)) v.add(w);
  return v;
}

Vocab build_token_vocab(const std::vector<std::vector<std::string>>& token_lists) {
  Vocab v({kPad, kUnk, kReduce});
  for (const auto& list : token_lists)
    for (const auto& t : list) v.add(t);
  return v;
}

Vocab build_constructor_vocab(const Grammar& g) {
  Vocab v({kPad, kReduce});
  for (const auto& c : g.constructors()) v.add(c.name);
  return v;
}

Vocab build_field_vocab(const Grammar& g) {
  Vocab v({kPad});
  for (const auto& c : g.constructors())
    for (const auto& f : c.fields) v.add(c.name + "." + f.name);
  return v;
}

}  // namespace branchsel

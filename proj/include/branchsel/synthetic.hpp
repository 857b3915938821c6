#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "branchsel/asdl.hpp"
#include "branchsel/dataset.hpp"
#include "branchsel/realize.hpp"

namespace branchsel {

/// Generative process of the order-sensitive corpus. A program is 1..3
/// statements; each is `except <Type> as <name>` (Handler, type before name)
/// or `<name> = <Type> ( )` (Assign, name before type), and the type is a
/// fixed function of the name. The sentence names the slot and statement
/// kind, then lists the gold name (after the marker "as") among
/// `distractors` names of other types.
struct SyntheticSpec {
  std::string grammar_id = "handlers-v1";
  std::size_t size = 1000;
  std::map<std::string, std::string> name_types;  // name -> type constructor
  std::size_t distractors = 1;
  std::uint64_t seed = 1;
  double handler_prob = 1.0 / 3.0;
  std::size_t max_statements = 3;
  /// Keep names out of the source vocabulary so they can only be copied.
  bool copy_only_names = true;

  /// Throws Error for malformed specs, including too few names of other
  /// types to draw the requested distractors from.
  void validate() const;
};

void to_json(nlohmann::json& j, const SyntheticSpec& s);
void from_json(const nlohmann::json& j, SyntheticSpec& s);

/// 40 names split evenly between KeyError and ValueError.
SyntheticSpec default_synthetic_spec();

std::string synthetic_grammar_text(const SyntheticSpec& spec);
std::string synthetic_templates_text(const SyntheticSpec& spec);

struct SyntheticCorpus {
  std::string grammar_text;
  std::string templates_text;
  Grammar grammar;
  Templates templates;
  Corpus train, dev, test;
  CorpusMeta meta;
};

SyntheticCorpus generate_order_sensitive_corpus(const SyntheticSpec& spec);

/// Writes grammar.asdl, templates.txt, train/dev/test.jsonl and corpus.json.
void write_synthetic_corpus(const SyntheticCorpus& corpus, const SyntheticSpec& spec,
                            const std::filesystem::path& dir);

}  // namespace branchsel

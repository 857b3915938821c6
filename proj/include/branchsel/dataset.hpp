#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "branchsel/asdl.hpp"
#include "branchsel/ast.hpp"
#include "branchsel/realize.hpp"

namespace branchsel {

struct TrainingInstance {
  std::vector<std::string> src;
  AstNode ast;
  std::string code;
};

using Corpus = std::vector<TrainingInstance>;

/// Optional sidecar `corpus.json` next to a split: source words listed under
/// "copy_only" are kept out of the source vocabulary.
struct CorpusMeta {
  std::set<std::string> copy_only;
};

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& content);

Grammar load_grammar_file(const std::filesystem::path& path);
Templates load_templates_file(const std::filesystem::path& path, const Grammar& g);

/// One JSON object per line with "src" (list of strings) and "code". Each
/// code string is read back into an AST with the templates; lines that do not
/// parse, or whose AST does not realize to the same code, are errors.
Corpus load_corpus(const std::filesystem::path& path, const Grammar& g, const Templates& templates);
void save_corpus(const std::filesystem::path& path, const Corpus& corpus);

CorpusMeta load_corpus_meta(const std::filesystem::path& split_path);

}  // namespace branchsel

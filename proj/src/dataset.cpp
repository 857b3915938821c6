#include "branchsel/dataset.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "branchsel/error.hpp"

namespace branchsel {

namespace fs = std::filesystem;

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  if (!out) throw IoError("write failed for " + path.string());
}

Grammar load_grammar_file(const fs::path& path) {
  try {
    return parse_grammar(read_text_file(path));
  } catch (const GrammarError& e) {
    throw GrammarError(path.string() + ": " + e.what());
  }
}

Templates load_templates_file(const fs::path& path, const Grammar& g) {
  try {
    return Templates::parse(read_text_file(path), g);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

Corpus load_corpus(const fs::path& path, const Grammar& g, const Templates& templates) {
  std::istringstream in(read_text_file(path));
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::string where = path.string() + " line " + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw IoError(where + ": invalid JSON (" + e.what() + ")");
    }
    if (!j.is_object() || !j.contains("src") || !j.contains("code") || !j["src"].is_array() || !j["code"].is_string())
      throw IoError(where + ": expected an object with 'src' (list of strings) and 'code' (string)");
    TrainingInstance inst;
    for (const auto& tok : j["src"]) {
      if (!tok.is_string()) throw IoError(where + ": 'src' must contain strings only");
      inst.src.push_back(tok.get<std::string>());
    }
    if (inst.src.empty()) throw IoError(where + ": empty source sentence");
    inst.code = canonicalize_whitespace(j["code"].get<std::string>());
    auto ast = read_code(inst.code, g, templates);
    if (!ast) throw IoError(where + ": code does not parse under the grammar: " + inst.code);
    if (ast_to_code(*ast, g, templates) != inst.code)
      throw IoError(where + ": code does not round-trip through its AST: " + inst.code);
    inst.ast = std::move(*ast);
    corpus.push_back(std::move(inst));
  }
  return corpus;
}

void save_corpus(const fs::path& path, const Corpus& corpus) {
  std::string out;
  for (const auto& inst : corpus) {
    nlohmann::json j = {{"src", inst.src}, {"code", inst.code}};
    out += j.dump() + "\n";
  }
  write_text_file(path, out);
}

CorpusMeta load_corpus_meta(const fs::path& split_path) {
  CorpusMeta meta;
  fs::path p = split_path.parent_path() / "corpus.json";
  if (!fs::exists(p)) return meta;
  try {
    auto j = nlohmann::json::parse(read_text_file(p));
    if (j.contains("copy_only")) meta.copy_only = j["copy_only"].get<std::set<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(p.string() + ": " + e.what());
  }
  return meta;
}

}  // namespace branchsel

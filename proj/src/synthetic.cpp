#include "branchsel/synthetic.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <regex>
#include <set>

#include "branchsel/error.hpp"

namespace branchsel {

namespace {

const char* const kSlotWords[] = {"first", "second", "third"};
const char* const kProgCtors[] = {"One", "Two", "Three"};
const std::set<std::string> kReservedWords = {"first", "second", "third", "catch", "bind", "as",
                                              "except", "=", "(", ")", ";"};
const std::set<std::string> kReservedCtors = {"One", "Two", "Three", "Handler", "Assign"};

std::set<std::string> type_set(const SyntheticSpec& s) {
  std::set<std::string> out;
  for (const auto& [_, t] : s.name_types) out.insert(t);
  return out;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (grammar_id != "handlers-v1") throw Error("unknown synthetic grammar id '" + grammar_id + "'");
  if (size == 0) throw Error("synthetic corpus size must be >= 1");
  if (name_types.empty()) throw Error("synthetic spec needs at least one name");
  if (max_statements < 1 || max_statements > 3) throw Error("max_statements must be 1, 2 or 3");
  if (!(handler_prob >= 0.0 && handler_prob <= 1.0)) throw Error("handler_prob must lie in [0, 1]");
  static const std::regex ident("[A-Za-z_][A-Za-z0-9_]*");
  for (const auto& [name, type] : name_types) {
    if (name.empty() || name.find_first_of(" \t\n") != std::string::npos || kReservedWords.count(name))
      throw Error("invalid or reserved name '" + name + "'");
    if (!std::regex_match(type, ident) || kReservedCtors.count(type))
      throw Error("invalid or reserved type constructor '" + type + "'");
  }
  for (const auto& [name, type] : name_types) {
    std::size_t others = 0;
    for (const auto& [n2, t2] : name_types)
      if (t2 != type) ++others;
    if (others < distractors)
      throw Error("vocabulary too small: name '" + name + "' has " + std::to_string(others) +
                  " names of other types but " + std::to_string(distractors) + " distractors were requested");
  }
}

void to_json(nlohmann::json& j, const SyntheticSpec& s) {
  j = {{"grammar", s.grammar_id},
       {"size", s.size},
       {"names", s.name_types},
       {"distractors", s.distractors},
       {"seed", s.seed},
       {"handler_prob", s.handler_prob},
       {"max_statements", s.max_statements},
       {"copy_only_names", s.copy_only_names}};
}

void from_json(const nlohmann::json& j, SyntheticSpec& s) {
  s.grammar_id = j.value("grammar", s.grammar_id);
  s.size = j.value("size", s.size);
  if (j.contains("names")) s.name_types = j.at("names").get<std::map<std::string, std::string>>();
  s.distractors = j.value("distractors", s.distractors);
  s.seed = j.value("seed", s.seed);
  s.handler_prob = j.value("handler_prob", s.handler_prob);
  s.max_statements = j.value("max_statements", s.max_statements);
  s.copy_only_names = j.value("copy_only_names", s.copy_only_names);
}

SyntheticSpec default_synthetic_spec() {
  SyntheticSpec s;
  for (int i = 0; i < 40; ++i) {
    std::string name = (i < 10 ? "v0" : "v") + std::to_string(i);
    s.name_types[name] = i % 2 == 0 ? "KeyError" : "ValueError";
  }
  return s;
}

std::string synthetic_grammar_text(const SyntheticSpec& spec) {
  std::string types;
  for (const auto& t : type_set(spec)) types += (types.empty() ? "" : " | ") + t + "()";
  return "# order-sensitive toy language\n"
         "prog = One(stmt first)\n"
         "     | Two(stmt first, stmt second)\n"
         "     | Three(stmt first, stmt second, stmt third)\n"
         "stmt = Handler(exc type, identifier name)\n"
         "     | Assign(identifier target, exc value)\n"
         "exc = " + types + "\n"
         "primitive identifier\n";
}

std::string synthetic_templates_text(const SyntheticSpec& spec) {
  std::string out =
      "One := <first>\n"
      "Two := <first> ; <second>\n"
      "Three := <first> ; <second> ; <third>\n"
      "Handler := except <type> as <name>\n"
      "Assign := <target> = <value> ( )\n";
  for (const auto& t : type_set(spec)) out += t + " := " + t + "\n";
  return out;
}

SyntheticCorpus generate_order_sensitive_corpus(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticCorpus out;
  out.grammar_text = synthetic_grammar_text(spec);
  out.templates_text = synthetic_templates_text(spec);
  out.grammar = parse_grammar(out.grammar_text);
  out.templates = Templates::parse(out.templates_text, out.grammar);
  const Grammar& g = out.grammar;

  std::vector<std::string> names;
  for (const auto& [n, _] : spec.name_types) names.push_back(n);
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<std::size_t> n_stmts(1, spec.max_statements);
  std::uniform_int_distribution<std::size_t> pick_name(0, names.size() - 1);
  std::bernoulli_distribution is_handler(spec.handler_prob);

  Corpus all;
  for (std::size_t i = 0; i < spec.size; ++i) {
    std::size_t k = n_stmts(rng);
    AstNode root = make_node(g, kProgCtors[k - 1]);
    TrainingInstance inst;
    for (std::size_t j = 0; j < k; ++j) {
      bool handler = is_handler(rng);
      const std::string& name = names[pick_name(rng)];
      const std::string& type = spec.name_types.at(name);

      std::vector<std::string> others;
      for (const auto& n : names)
        if (spec.name_types.at(n) != type) others.push_back(n);
      std::shuffle(others.begin(), others.end(), rng);
      std::vector<std::string> candidates(others.begin(), others.begin() + spec.distractors);
      std::size_t gold_pos = std::uniform_int_distribution<std::size_t>(0, candidates.size())(rng);
      candidates.insert(candidates.begin() + gold_pos, name);

      inst.src.push_back(kSlotWords[j]);
      inst.src.push_back(handler ? "catch" : "bind");
      for (std::size_t c = 0; c < candidates.size(); ++c) {
        if (c == gold_pos) inst.src.push_back("as");
        inst.src.push_back(candidates[c]);
      }

      AstNode stmt = make_node(g, handler ? "Handler" : "Assign");
      AstNode exc = make_node(g, type);
      if (handler) {
        stmt.fields[0].nodes.push_back(std::move(exc));
        stmt.fields[1].tokens.push_back(name);
      } else {
        stmt.fields[0].tokens.push_back(name);
        stmt.fields[1].nodes.push_back(std::move(exc));
      }
      root.fields[j].nodes.push_back(std::move(stmt));
    }
    renumber_preorder(root);
    inst.code = ast_to_code(root, g, out.templates);
    auto back = read_code(inst.code, g, out.templates);
    if (!back || !(*back == root)) throw Error("synthetic instance does not round-trip: " + inst.code);
    inst.ast = std::move(root);
    all.push_back(std::move(inst));
  }

  std::vector<std::size_t> idx(all.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::size_t n_train = all.size() * 8 / 10;
  std::size_t n_dev = all.size() / 10;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    Corpus& dst = i < n_train ? out.train : i < n_train + n_dev ? out.dev : out.test;
    dst.push_back(all[idx[i]]);
  }
  if (spec.copy_only_names) out.meta.copy_only.insert(names.begin(), names.end());
  return out;
}

void write_synthetic_corpus(const SyntheticCorpus& corpus, const SyntheticSpec& spec,
                            const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text_file(dir / "grammar.asdl", corpus.grammar_text);
  write_text_file(dir / "templates.txt", corpus.templates_text);
  save_corpus(dir / "train.jsonl", corpus.train);
  save_corpus(dir / "dev.jsonl", corpus.dev);
  save_corpus(dir / "test.jsonl", corpus.test);
  nlohmann::json meta = {{"copy_only", corpus.meta.copy_only}, {"spec", spec}};
  write_text_file(dir / "corpus.json", meta.dump(2) + "\n");
}

}  // namespace branchsel

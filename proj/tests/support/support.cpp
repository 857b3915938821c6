#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "branchsel/training.hpp"
#include "branchsel/transition.hpp"

namespace testsupport {

std::string data_path(const std::string& rel) { return std::string(BRANCHSEL_DATA_DIR) + "/" + rel; }

const Grammar& toy_grammar() {
  static const Grammar g = load_grammar_file(data_path("toy/grammar.asdl"));
  return g;
}

const Templates& toy_templates() {
  static const Templates t = load_templates_file(data_path("toy/templates.txt"), toy_grammar());
  return t;
}

const Corpus& toy_corpus() {
  static const Corpus c = load_corpus(data_path("toy/train.jsonl"), toy_grammar(), toy_templates());
  return c;
}

namespace {

const std::vector<std::string> kUnits = {"a", "b", "x", "e", "Exception", "self"};

// Smallest tree height each composite type can reach (only Single composite
// fields force children).
std::map<std::string, std::size_t> min_heights(const Grammar& g) {
  std::map<std::string, std::size_t> h;
  for (const auto& t : g.composite_types()) h[t] = 1000;
  for (bool changed = true; changed;) {
    changed = false;
    for (const auto& c : g.constructors()) {
      std::size_t need = 1;
      for (const auto& f : c.fields)
        if (g.is_composite(f.type_name) && f.cardinality == Cardinality::Single)
          need = std::max(need, 1 + h[f.type_name]);
      if (need < h[c.result_type]) {
        h[c.result_type] = need;
        changed = true;
      }
    }
  }
  return h;
}

std::size_t ctor_height(const Grammar& g, const Constructor& c, const std::map<std::string, std::size_t>& h) {
  std::size_t need = 1;
  for (const auto& f : c.fields)
    if (g.is_composite(f.type_name) && f.cardinality == Cardinality::Single)
      need = std::max(need, 1 + h.at(f.type_name));
  return need;
}

AstNode grow(const Grammar& g, const std::string& type, std::mt19937_64& rng, std::size_t depth,
             const std::map<std::string, std::size_t>& h) {
  std::vector<const Constructor*> options;
  for (const auto* c : g.constructors_of_type(type))
    if (ctor_height(g, *c, h) <= depth) options.push_back(c);
  const Constructor& c = *options[std::uniform_int_distribution<std::size_t>(0, options.size() - 1)(rng)];
  AstNode node = make_node(g, c.name);
  auto unit = [&] { return kUnits[std::uniform_int_distribution<std::size_t>(0, kUnits.size() - 1)(rng)]; };
  auto count = [&](std::size_t hi) { return std::uniform_int_distribution<std::size_t>(0, hi)(rng); };
  for (std::size_t i = 0; i < c.fields.size(); ++i) {
    const FieldDecl& f = c.fields[i];
    FieldValue& v = node.fields[i];
    if (g.is_primitive(f.type_name)) {
      if (f.cardinality == Cardinality::Single) {
        v.tokens.push_back(unit());
      } else if (f.cardinality == Cardinality::Optional) {
        if (std::size_t n = count(3)) {
          std::string tok = unit();
          for (std::size_t k = 1; k < n; ++k) tok += " " + unit();
          v.tokens.push_back(tok);
        }
      } else {
        for (std::size_t n = count(3); n > 0; --n) v.tokens.push_back(unit());
      }
      continue;
    }
    bool room = depth > 1 && h.at(f.type_name) <= depth - 1;
    std::size_t n = 0;
    if (f.cardinality == Cardinality::Single)
      n = 1;
    else if (room)
      n = f.cardinality == Cardinality::Optional ? count(1) : count(3);
    for (std::size_t k = 0; k < n; ++k) v.nodes.push_back(grow(g, f.type_name, rng, depth - 1, h));
  }
  return node;
}

void naive(const AstNode& n, const Grammar& g, std::vector<Action>& out) {
  const Constructor& c = g.constructor(n.constructor);
  out.push_back(Action::apply(n.constructor));
  for (std::size_t i = 0; i < c.fields.size(); ++i) {
    const FieldDecl& f = c.fields[i];
    const FieldValue& v = n.fields[i];
    if (g.is_primitive(f.type_name)) {
      std::vector<std::string> units;
      for (const auto& tok : v.tokens) {
        std::string u;
        for (char ch : tok + " ") {
          if (ch == ' ') {
            if (!u.empty()) units.push_back(u);
            u.clear();
          } else {
            u += ch;
          }
        }
      }
      for (const auto& u : units) out.push_back(Action::gen(u));
      if (f.cardinality != Cardinality::Single) out.push_back(Action::reduce());
    } else {
      for (const auto& child : v.nodes) naive(child, g, out);
      bool closes = f.cardinality == Cardinality::Sequential ||
                    (f.cardinality == Cardinality::Optional && v.nodes.empty());
      if (closes) out.push_back(Action::reduce());
    }
  }
}

}  // namespace

AstNode random_ast_of(const Grammar& g, const std::string& type, std::mt19937_64& rng, std::size_t max_depth) {
  auto h = min_heights(g);
  AstNode root = grow(g, type, rng, std::max(max_depth, h.at(type)), h);
  renumber_preorder(root);
  return root;
}

AstNode random_ast(const Grammar& g, std::mt19937_64& rng, std::size_t max_depth) {
  return random_ast_of(g, g.root_type(), rng, max_depth);
}

std::vector<Action> naive_preorder(const AstNode& ast, const Grammar& g) {
  std::vector<Action> out;
  naive(ast, g, out);
  return out;
}

ModelConfig micro_config(const Grammar& g, const Corpus& corpus, std::size_t action, std::size_t field,
                         std::size_t hidden, std::size_t selector) {
  ModelConfig dims;
  dims.action_embed_dim = action;
  dims.field_embed_dim = field;
  dims.hidden_dim = hidden;
  dims.selector_dim = selector;
  return config_for_corpus(g, corpus, CorpusMeta{}, dims);
}

double rel_error(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-3}); }

GradReport check_gradients(nn::ParamStore& params, const std::function<nn::Var(nn::Graph&)>& loss, double h,
                           const std::function<bool(const std::string&)>& filter) {
  params.zero_grad();
  {
    nn::Graph g;
    g.backward(loss(g));
  }
  GradReport rep;
  auto eval = [&] {
    nn::Graph g(false);
    return g.scalar_value(loss(g));
  };
  double sq = 0.0;
  for (auto& [name, t] : params) {
    if (filter && !filter(name)) continue;
    for (std::size_t i = 0; i < t.size(); ++i) {
      double keep = t.data()[i];
      t.data()[i] = keep + h;
      double up = eval();
      t.data()[i] = keep - h;
      double down = eval();
      t.data()[i] = keep;
      double numeric = (up - down) / (2 * h);
      double analytic = t.grad()[i];
      sq += analytic * analytic;
      double e = rel_error(analytic, numeric);
      if (e > rep.max_rel_error) {
        rep.max_rel_error = e;
        rep.worst = name + "[" + std::to_string(i) + "]";
      }
      ++rep.checked;
    }
  }
  rep.analytic_norm = std::sqrt(sq);
  return rep;
}

double bayes_type_accuracy(const SyntheticSpec& spec, bool name_first) {
  std::vector<std::string> names;
  for (const auto& [n, _] : spec.name_types) names.push_back(n);
  auto visible = [&](const std::string& n) { return spec.copy_only_names ? std::string("<unk>") : n; };

  // observation -> type -> probability mass
  std::map<std::string, std::map<std::string, double>> joint;
  const double p_name = 1.0 / static_cast<double>(names.size());
  for (const auto& gold : names) {
    const std::string& type = spec.name_types.at(gold);
    std::vector<std::string> others;
    for (const auto& n : names)
      if (spec.name_types.at(n) != type) others.push_back(n);

    // every ordered choice of `distractors` distinct names from `others`
    std::vector<std::vector<std::string>> tuples = {{}};
    for (std::size_t d = 0; d < spec.distractors; ++d) {
      std::vector<std::vector<std::string>> next;
      for (const auto& t : tuples)
        for (const auto& o : others)
          if (std::find(t.begin(), t.end(), o) == t.end()) {
            auto e = t;
            e.push_back(o);
            next.push_back(e);
          }
      tuples = std::move(next);
    }
    const double p_tuple = 1.0 / static_cast<double>(tuples.size());
    const double p_pos = 1.0 / static_cast<double>(spec.distractors + 1);
    for (const auto& t : tuples) {
      for (std::size_t pos = 0; pos <= spec.distractors; ++pos) {
        std::vector<std::string> cands = t;
        cands.insert(cands.begin() + static_cast<std::ptrdiff_t>(pos), gold);
        std::string obs = "catch";
        for (std::size_t c = 0; c < cands.size(); ++c) {
          if (c == pos) obs += " as";
          obs += " " + visible(cands[c]);
        }
        if (name_first) obs += " | " + gold;
        joint[obs][type] += p_name * p_tuple * p_pos;
      }
    }
  }
  double acc = 0.0;
  for (const auto& [_, by_type] : joint) {
    double best = 0.0;
    for (const auto& [__, p] : by_type) best = std::max(best, p);
    acc += best;
  }
  return acc;
}

SyntheticSpec small_spec(std::size_t size, std::uint64_t seed) {
  SyntheticSpec s = default_synthetic_spec();
  s.size = size;
  s.seed = seed;
  return s;
}

}  // namespace testsupport

#include "branchsel/realize.hpp"

#include <set>
#include <map>
#include <sstream>

#include "branchsel/error.hpp"
#include "branchsel/transition.hpp"

namespace branchsel {

std::string canonicalize_whitespace(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (char ch : s) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      out.push_back(ch);
    }
  }
  return out;
}

Templates Templates::parse(std::string_view text, const Grammar& g) {
  Templates t;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string trimmed = canonicalize_whitespace(line);
    if (trimmed.empty() || trimmed[0] == '#') continue;
    auto sep = trimmed.find(":=");
    if (sep == std::string::npos)
      throw IoError("templates line " + std::to_string(line_no) + ": expected 'Ctor := template'");
    std::string name = canonicalize_whitespace(trimmed.substr(0, sep));
    std::string body = trimmed.substr(sep + 2);
    const Constructor* c = g.find_constructor(name);
    if (c == nullptr)
      throw IoError("templates line " + std::to_string(line_no) + ": unknown constructor '" + name + "'");
    if (t.by_ctor_.count(name))
      throw IoError("templates line " + std::to_string(line_no) + ": duplicate template for '" + name + "'");

    std::vector<Piece> pieces;
    std::istringstream words(body);
    std::string w;
    while (words >> w) {
      if (w.size() >= 2 && w.front() == '<' && w.back() == '>') {
        std::string inner = w.substr(1, w.size() - 2);
        Piece p;
        p.placeholder = true;
        auto bar = inner.find('|');
        p.text = inner.substr(0, bar);
        if (bar != std::string::npos) p.sep = split_units(inner.substr(bar + 1));
        bool found = false;
        for (const auto& f : c->fields)
          if (f.name == p.text) {
            p.field = f.index;
            found = true;
          }
        if (!found)
          throw IoError("templates line " + std::to_string(line_no) + ": '" + name +
                        "' has no field '" + p.text + "'");
        pieces.push_back(std::move(p));
      } else {
        pieces.push_back({false, w, 0, {}});
      }
    }
    t.by_ctor_.emplace(name, std::move(pieces));
  }
  return t;
}

bool Templates::contains(std::string_view constructor) const {
  return by_ctor_.find(constructor) != by_ctor_.end();
}

const std::vector<Templates::Piece>& Templates::pieces(std::string_view constructor) const {
  auto it = by_ctor_.find(constructor);
  if (it == by_ctor_.end())
    throw IoError("constructor '" + std::string(constructor) + "' has no realization template");
  return it->second;
}

namespace {

void realize(const AstNode& n, const Grammar& g, const Templates& t, std::vector<std::string>& out) {
  const Constructor& c = g.constructor(n.constructor);
  for (const auto& piece : t.pieces(c.name)) {
    if (!piece.placeholder) {
      out.push_back(piece.text);
      continue;
    }
    const FieldValue& v = n.fields.at(piece.field);
    bool first = true;
    auto separate = [&] {
      if (!first) out.insert(out.end(), piece.sep.begin(), piece.sep.end());
      first = false;
    };
    for (const auto& child : v.nodes) {
      separate();
      realize(child, g, t, out);
    }
    for (const auto& tok : v.tokens) {
      separate();
      for (auto& unit : split_units(tok)) out.push_back(std::move(unit));
    }
  }
}

// Chart reader: for every (type, start) the set of reachable end positions,
// each with one representative tree. The templates are context-free, so any
// parse of the whole input can be rebuilt from one tree per (type, span);
// keeping the first found bounds the work polynomially. Positions are filled
// right to left and each position is iterated to a fixpoint, which handles
// left-recursive templates (Call := <func> ( <args|,> )) re-entering a type
// at the same start.
class CodeReader {
 public:
  CodeReader(const Grammar& g, const Templates& t, std::vector<std::string> tokens)
      : g_(g), t_(t), toks_(std::move(tokens)) {}

  std::optional<AstNode> run() {
    const auto& types = g_.composite_types();
    for (const auto& type : types) chart_[type].resize(toks_.size() + 1);
    for (std::size_t pos = toks_.size() + 1; pos-- > 0;) {
      for (bool changed = true; changed;) {
        changed = false;
        for (const auto& type : types)
          for (std::size_t id : g_.constructor_ids_of_type(type)) {
            const Constructor& c = g_.constructor(id);
            if (!t_.contains(c.name)) continue;
            AstNode node;
            node.constructor = id;
            node.fields.resize(c.fields.size());
            for (auto& [end, n] : match(c, t_.pieces(c.name), pos, std::move(node)))
              changed |= chart_[type][pos].try_emplace(end, std::move(n)).second;
          }
      }
    }
    auto& root = chart_[g_.root_type()][0];
    auto it = root.find(toks_.size());
    if (it == root.end()) return std::nullopt;
    return it->second;
  }

 private:
  // end position -> partial or finished node; first insertion wins
  using Frontier = std::map<std::size_t, AstNode>;

  static void put(Frontier& f, std::size_t pos, AstNode node) { f.try_emplace(pos, std::move(node)); }

  bool match_sep(const std::vector<std::string>& sep, std::size_t pos, std::size_t& end) const {
    if (pos + sep.size() > toks_.size()) return false;
    for (std::size_t i = 0; i < sep.size(); ++i)
      if (toks_[pos + i] != sep[i]) return false;
    end = pos + sep.size();
    return true;
  }

  Frontier match(const Constructor& c, const std::vector<Templates::Piece>& pieces, std::size_t pos, AstNode node) {
    Frontier cur;
    cur.emplace(pos, std::move(node));
    for (const auto& piece : pieces) {
      Frontier next;
      for (auto& [p, n] : cur) step(c, piece, p, n, next);
      cur = std::move(next);
      if (cur.empty()) break;
    }
    return cur;
  }

  void step(const Constructor& c, const Templates::Piece& piece, std::size_t pos, const AstNode& node,
            Frontier& out) {
    if (!piece.placeholder) {
      if (pos < toks_.size() && toks_[pos] == piece.text) put(out, pos + 1, node);
      return;
    }
    const FieldDecl& decl = c.fields[piece.field];
    if (g_.is_primitive(decl.type_name)) {
      switch (decl.cardinality) {
        case Cardinality::Single:
          if (pos < toks_.size()) {
            AstNode copy = node;
            copy.fields[piece.field].tokens = {toks_[pos]};
            put(out, pos + 1, std::move(copy));
          }
          return;
        case Cardinality::Optional: {
          std::string joined;
          for (std::size_t e = pos; e < toks_.size(); ++e) {
            joined += (e == pos ? "" : " ") + toks_[e];
            AstNode copy = node;
            copy.fields[piece.field].tokens = {joined};
            put(out, e + 1, std::move(copy));
          }
          put(out, pos, node);
          return;
        }
        case Cardinality::Sequential: {
          put(out, pos, node);
          if (pos >= toks_.size()) return;
          AstNode acc = node;
          acc.fields[piece.field].tokens.push_back(toks_[pos]);
          std::size_t p = pos + 1;
          put(out, p, acc);
          for (std::size_t s; match_sep(piece.sep, p, s) && s < toks_.size(); p = s + 1) {
            acc.fields[piece.field].tokens.push_back(toks_[s]);
            put(out, s + 1, acc);
          }
          return;
        }
      }
    }
    const auto& spans = chart_[decl.type_name];
    switch (decl.cardinality) {
      case Cardinality::Single:
      case Cardinality::Optional:
        for (const auto& [end, child] : spans[pos]) {
          AstNode copy = node;
          copy.fields[piece.field].nodes = {child};
          put(out, end, std::move(copy));
        }
        if (decl.cardinality == Cardinality::Optional) put(out, pos, node);
        return;
      case Cardinality::Sequential: {
        put(out, pos, node);
        // breadth-first over list lengths; one partial list per end position
        Frontier lists;
        for (const auto& [end, child] : spans[pos]) {
          AstNode copy = node;
          copy.fields[piece.field].nodes = {child};
          put(lists, end, std::move(copy));
        }
        std::set<std::size_t> seen;
        while (!lists.empty()) {
          Frontier more;
          for (auto& [p, n] : lists) {
            if (!seen.insert(p).second) continue;
            put(out, p, n);
            std::size_t s;
            if (!match_sep(piece.sep, p, s) || s > toks_.size()) continue;
            for (const auto& [end, child] : spans[s]) {
              if (seen.count(end)) continue;
              AstNode copy = n;
              copy.fields[piece.field].nodes.push_back(child);
              put(more, end, std::move(copy));
            }
          }
          lists = std::move(more);
        }
        return;
      }
    }
  }

  const Grammar& g_;
  const Templates& t_;
  std::vector<std::string> toks_;
  std::map<std::string, std::vector<Frontier>> chart_;
};

}  // namespace

std::string ast_to_code(const AstNode& ast, const Grammar& g, const Templates& templates) {
  std::vector<std::string> toks;
  realize(ast, g, templates, toks);
  std::string out;
  for (const auto& tok : toks) {
    if (!out.empty()) out.push_back(' ');
    out += tok;
  }
  return canonicalize_whitespace(out);
}

std::optional<AstNode> read_code(std::string_view code, const Grammar& g, const Templates& templates) {
  CodeReader reader(g, templates, split_units(std::string(code)));
  auto result = reader.run();
  if (result) renumber_preorder(*result);
  return result;
}

}  // namespace branchsel

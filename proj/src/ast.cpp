#include "branchsel/ast.hpp"

#include <sstream>

#include "branchsel/error.hpp"

namespace branchsel {

bool AstNode::operator==(const AstNode& other) const {
  if (constructor != other.constructor || fields.size() != other.fields.size()) return false;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (fields[i].tokens != other.fields[i].tokens) return false;
    if (fields[i].nodes.size() != other.fields[i].nodes.size()) return false;
    for (std::size_t j = 0; j < fields[i].nodes.size(); ++j)
      if (!(fields[i].nodes[j] == other.fields[i].nodes[j])) return false;
  }
  return true;
}

AstNode make_node(const Grammar& g, std::string_view constructor_name, std::size_t node_id) {
  const Constructor& c = g.constructor(constructor_name);
  AstNode n;
  n.node_id = node_id;
  n.constructor = c.id;
  n.fields.resize(c.fields.size());
  return n;
}

namespace {

void validate_node(const AstNode& n, const Grammar& g, const std::string& expected_type) {
  if (n.constructor >= g.constructors().size()) throw TransitionError("constructor id out of range");
  const Constructor& c = g.constructor(n.constructor);
  if (c.result_type != expected_type)
    throw TransitionError("constructor '" + c.name + "' does not produce type '" + expected_type + "'");
  if (n.fields.size() != c.fields.size())
    throw TransitionError("node '" + c.name + "' has " + std::to_string(n.fields.size()) +
                          " fields, expected " + std::to_string(c.fields.size()));
  for (const FieldDecl& f : c.fields) {
    const FieldValue& v = n.fields[f.index];
    bool primitive = g.is_primitive(f.type_name);
    std::size_t count = primitive ? v.tokens.size() : v.nodes.size();
    if (primitive ? !v.nodes.empty() : !v.tokens.empty())
      throw TransitionError("field '" + c.name + "." + f.name + "' holds children of the wrong kind");
    if (f.cardinality == Cardinality::Single && count != 1)
      throw TransitionError("single field '" + c.name + "." + f.name + "' holds " +
                            std::to_string(count) + " children");
    if (f.cardinality == Cardinality::Optional && count > 1)
      throw TransitionError("optional field '" + c.name + "." + f.name + "' holds " +
                            std::to_string(count) + " children");
    for (const auto& tok : v.tokens)
      if (tok.empty()) throw TransitionError("empty token in field '" + c.name + "." + f.name + "'");
    for (const auto& child : v.nodes) validate_node(child, g, f.type_name);
  }
}

void renumber(AstNode& n, std::size_t& next) {
  n.node_id = next++;
  for (auto& f : n.fields)
    for (auto& child : f.nodes) renumber(child, next);
}

void sexpr(const AstNode& n, const Grammar& g, std::ostringstream& out) {
  const Constructor& c = g.constructor(n.constructor);
  out << c.name << "(";
  for (std::size_t i = 0; i < c.fields.size(); ++i) {
    if (i > 0) out << ", ";
    out << c.fields[i].name << "=";
    const FieldValue& v = n.fields[i];
    bool list = c.fields[i].cardinality == Cardinality::Sequential;
    if (list) out << "[";
    bool first = true;
    for (const auto& child : v.nodes) {
      if (!first) out << ", ";
      sexpr(child, g, out);
      first = false;
    }
    for (const auto& tok : v.tokens) {
      if (!first) out << ", ";
      out << '"' << tok << '"';
      first = false;
    }
    if (first && !list) out << "None";
    if (list) out << "]";
  }
  out << ")";
}

}  // namespace

void validate_ast(const AstNode& ast, const Grammar& g) { validate_node(ast, g, g.root_type()); }

void renumber_preorder(AstNode& ast, std::size_t first) { renumber(ast, first); }

std::size_t count_nodes(const AstNode& ast) {
  std::size_t n = 1;
  for (const auto& f : ast.fields)
    for (const auto& child : f.nodes) n += count_nodes(child);
  return n;
}

std::string to_sexpr(const AstNode& ast, const Grammar& g) {
  std::ostringstream out;
  sexpr(ast, g, out);
  return out.str();
}

std::string to_string(const Action& a, const Grammar& g) {
  switch (a.kind) {
    case Action::Kind::ApplyConstr:
      return "ApplyConstr[" + g.constructor(a.constructor).name + "]";
    case Action::Kind::Reduce:
      return "Reduce";
    case Action::Kind::GenToken:
      return "GenToken[" + a.token + "]";
  }
  return "?";
}

bool is_permutation_of_iota(const std::vector<std::size_t>& order, std::size_t m) {
  if (order.size() != m) return false;
  std::vector<bool> seen(m, false);
  for (std::size_t v : order) {
    if (v >= m || seen[v]) return false;
    seen[v] = true;
  }
  return true;
}

}  // namespace branchsel

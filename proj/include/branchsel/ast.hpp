#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "branchsel/asdl.hpp"

namespace branchsel {

struct AstNode;

/// Children of one field. Composite fields hold nodes, primitive fields hold
/// tokens. An optional primitive value is a single token that may contain
/// several whitespace-separated units; sequential primitive tokens are single
/// units each.
struct FieldValue {
  std::vector<AstNode> nodes;
  std::vector<std::string> tokens;
};

struct AstNode {
  std::size_t node_id = 0;
  std::size_t constructor = 0;  // Grammar constructor id
  std::vector<FieldValue> fields;

  /// Structural equality; node ids are not observable.
  bool operator==(const AstNode& other) const;
};

/// Build a node with one empty FieldValue per declared field.
AstNode make_node(const Grammar& g, std::string_view constructor_name, std::size_t node_id = 0);

/// Checks cardinality and type invariants of the whole tree; throws
/// TransitionError on the first violation.
void validate_ast(const AstNode& ast, const Grammar& g);

/// Renumber node ids in pre-order starting at `first`.
void renumber_preorder(AstNode& ast, std::size_t first = 0);

std::size_t count_nodes(const AstNode& ast);

/// Debug form, e.g. `Handler(type=KeyError(), name="e")`.
std::string to_sexpr(const AstNode& ast, const Grammar& g);

struct Action {
  enum class Kind { ApplyConstr, Reduce, GenToken };

  Kind kind = Kind::Reduce;
  std::size_t constructor = 0;  // ApplyConstr only
  std::string token;            // GenToken only

  static Action apply(std::size_t constructor_id) { return {Kind::ApplyConstr, constructor_id, {}}; }
  static Action reduce() { return {Kind::Reduce, 0, {}}; }
  static Action gen(std::string token) { return {Kind::GenToken, 0, std::move(token)}; }

  bool operator==(const Action&) const = default;
};

std::string to_string(const Action& a, const Grammar& g);

/// The field awaiting expansion: the owning node's constructor and the field
/// index inside it. The root frontier is represented by std::nullopt.
struct FrontierField {
  std::size_t constructor = 0;
  std::size_t field = 0;

  bool operator==(const FrontierField&) const = default;
};

struct TracedAction {
  Action action;
  std::optional<FrontierField> frontier;   // nullopt = ROOT
  std::optional<std::size_t> parent_step;  // step that created the owner node
  std::size_t node_id = 0;                 // node created (ApplyConstr) or extended

  bool operator==(const TracedAction&) const = default;
};

/// Branch expansion order per multi-branch node: node_id -> permutation of
/// that node's field indices.
using OrderAssignment = std::map<std::size_t, std::vector<std::size_t>>;

bool is_permutation_of_iota(const std::vector<std::size_t>& order, std::size_t m);

}  // namespace branchsel

#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "branchsel/asdl.hpp"
#include "branchsel/ast.hpp"

namespace branchsel {

/// Static description of a frontier field: what it accepts and whether
/// Reduce may close it. The root frontier is the root type with Single
/// cardinality.
struct FieldSlot {
  std::optional<FrontierField> field;
  const std::string* type_name = nullptr;
  Cardinality cardinality = Cardinality::Single;
  bool primitive = false;

  /// Reduce is legal on optional and sequential fields. An optional composite
  /// field is only ever a frontier before its child exists, so this is a
  /// property of the slot alone.
  bool reduce_allowed() const { return cardinality != Cardinality::Single; }
};

FieldSlot field_slot(const Grammar& g, const std::optional<FrontierField>& field);

/// Emits the action sequence of an AST one step at a time. A multi-branch
/// node's fields are visited in an order supplied after its ApplyConstr is
/// emitted, so the order can depend on model state computed at that step.
class Linearizer {
 public:
  Linearizer(const Grammar& g, const AstNode& root);

  bool done() const;
  /// Id of the multi-branch node whose order must be set before next().
  std::optional<std::size_t> awaiting_order() const;
  const AstNode* awaiting_node() const;
  void set_order(std::vector<std::size_t> order);
  TracedAction next();
  std::size_t steps_emitted() const { return emitted_; }

 private:
  struct Frame {
    const AstNode* node;
    std::size_t created_step;
    std::vector<std::size_t> order;
    bool order_set = false;
    std::size_t order_pos = 0;
    std::size_t child_pos = 0;
  };

  void push(const AstNode* node, std::size_t step);
  void settle();
  TracedAction emit();

  const Grammar* grammar_;
  const AstNode* root_;
  std::vector<Frame> stack_;
  std::size_t emitted_ = 0;
  bool started_ = false;
};

/// Depth-first action sequence of `ast` where every multi-branch node visits
/// its fields in the permutation given by `orders`. Identity permutations give
/// classical pre-order.
std::vector<TracedAction> linearize(const AstNode& ast, const Grammar& g, const OrderAssignment& orders);

/// Incrementally rebuilds a tree from actions. Used both to replay traces and
/// to drive decoding, where the caller picks each action and supplies the
/// field order of every new multi-branch node.
class TreeBuilder {
 public:
  explicit TreeBuilder(const Grammar& g);

  bool started() const { return started_; }
  bool complete() const { return started_ && stack_.empty(); }
  std::size_t steps() const { return steps_; }

  /// Builder index of the node awaiting a field order, if any.
  std::optional<std::size_t> awaiting_order() const;
  std::size_t awaiting_constructor() const;
  void set_order(std::vector<std::size_t> order);

  struct Frontier {
    FieldSlot slot;
    std::optional<std::size_t> parent_step;
    std::size_t owner = 0;
  };
  /// Field the next action applies to. Requires !complete() and no pending order.
  Frontier frontier() const;

  /// Applies `action` at frontier() and returns its traced form. The returned
  /// node_id is the builder index of the node created or extended.
  TracedAction apply(const Action& action);

  /// Applies a traced action, validating that its frontier and parent step
  /// are consistent with the partial tree. Orders are taken from the trace.
  void apply_traced(const TracedAction& traced);

  /// Builder index of the node created by the most recent ApplyConstr.
  std::optional<std::size_t> last_created() const { return last_created_; }
  std::size_t node_constructor(std::size_t index) const { return nodes_.at(index).ctor; }

  /// The order in which each node's fields were opened (builder indices).
  OrderAssignment visit_orders() const;

  /// Completed tree, node ids assigned in order of creation.
  AstNode result() const;

 private:
  struct Partial {
    std::size_t ctor = 0;
    std::size_t created_step = 0;
    std::vector<FieldValue> values;
    std::vector<std::vector<std::size_t>> child_nodes;
    std::vector<std::size_t> pending;
    std::vector<std::size_t> visited;
    bool order_set = false;
    std::optional<std::size_t> current;
  };

  std::size_t create(std::size_t ctor, std::size_t step);
  void apply_to_field(std::size_t owner, std::size_t field, const Action& action);
  void close_field(std::size_t owner);
  void complete_top();
  AstNode build(std::size_t index) const;

  const Grammar* grammar_;
  std::vector<Partial> nodes_;
  std::vector<std::size_t> stack_;
  std::size_t steps_ = 0;
  bool started_ = false;
  std::optional<std::size_t> last_created_;
};

/// Reconstructs the AST described by a trace; node ids are reassigned in
/// order of creation.
AstNode parse_actions(const std::vector<TracedAction>& trace, const Grammar& g);

/// Ids of all nodes with two or more fields, in pre-order.
std::vector<std::size_t> multi_branch_nodes(const AstNode& ast);

enum class FixedOrder { LeftToRight, RightToLeft };

OrderAssignment uniform_order_assignment(const AstNode& ast, std::mt19937_64& rng);
OrderAssignment fixed_order_assignment(const AstNode& ast, FixedOrder order);

/// Number of actions in the linearization of `ast` (order independent).
std::size_t action_count(const AstNode& ast, const Grammar& g);

std::vector<std::string> split_units(const std::string& token);

}  // namespace branchsel

#include "branchsel/transition.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "branchsel/error.hpp"

namespace branchsel {

FieldSlot field_slot(const Grammar& g, const std::optional<FrontierField>& field) {
  FieldSlot slot;
  slot.field = field;
  if (!field) {
    slot.type_name = &g.root_type();
    slot.cardinality = Cardinality::Single;
    slot.primitive = false;
    return slot;
  }
  const FieldDecl& decl = g.field(field->constructor, field->field);
  slot.type_name = &decl.type_name;
  slot.cardinality = decl.cardinality;
  slot.primitive = g.is_primitive(decl.type_name);
  return slot;
}

std::vector<std::string> split_units(const std::string& token) {
  std::vector<std::string> out;
  std::istringstream in(token);
  std::string unit;
  while (in >> unit) out.push_back(unit);
  return out;
}

// ---------------------------------------------------------------------------
// Linearizer

Linearizer::Linearizer(const Grammar& g, const AstNode& root) : grammar_(&g), root_(&root) {}

bool Linearizer::done() const { return started_ && stack_.empty(); }

std::optional<std::size_t> Linearizer::awaiting_order() const {
  if (stack_.empty() || stack_.back().order_set) return std::nullopt;
  return stack_.back().node->node_id;
}

const AstNode* Linearizer::awaiting_node() const {
  if (stack_.empty() || stack_.back().order_set) return nullptr;
  return stack_.back().node;
}

void Linearizer::set_order(std::vector<std::size_t> order) {
  if (stack_.empty() || stack_.back().order_set) throw TransitionError("no node is awaiting an order");
  Frame& f = stack_.back();
  if (!is_permutation_of_iota(order, f.node->fields.size()))
    throw TransitionError("order for node " + std::to_string(f.node->node_id) +
                          " is not a permutation of its " + std::to_string(f.node->fields.size()) +
                          " fields");
  f.order = std::move(order);
  f.order_set = true;
}

void Linearizer::push(const AstNode* node, std::size_t step) {
  Frame f;
  f.node = node;
  f.created_step = step;
  const Constructor& c = grammar_->constructor(node->constructor);
  if (node->fields.size() != c.fields.size())
    throw TransitionError("node of '" + c.name + "' has the wrong number of fields");
  if (!c.multi_branch()) {
    f.order.resize(c.fields.size());
    std::iota(f.order.begin(), f.order.end(), 0);
    f.order_set = true;
  }
  stack_.push_back(std::move(f));
}

// Skips every transition that emits nothing: finished frames, and fields
// whose last child or unit is out with no Reduce to follow. Afterwards done()
// and awaiting_order() describe the next real action.
void Linearizer::settle() {
  while (!stack_.empty()) {
    Frame& f = stack_.back();
    if (!f.order_set) return;
    if (f.order_pos == f.order.size()) {
      stack_.pop_back();
      continue;
    }
    const Constructor& c = grammar_->constructor(f.node->constructor);
    std::size_t fi = f.order[f.order_pos];
    const FieldDecl& decl = c.fields[fi];
    const FieldValue& value = f.node->fields[fi];
    bool finished;
    if (!grammar_->is_primitive(decl.type_name))
      finished = f.child_pos > 0 && f.child_pos == value.nodes.size() &&
                 decl.cardinality != Cardinality::Sequential;
    else
      finished = decl.cardinality == Cardinality::Single && f.child_pos > 0 && f.child_pos == value.tokens.size();
    if (!finished) return;
    ++f.order_pos;
    f.child_pos = 0;
  }
}

TracedAction Linearizer::next() {
  TracedAction t = emit();
  settle();
  return t;
}

TracedAction Linearizer::emit() {
  if (!started_) {
    started_ = true;
    TracedAction t{Action::apply(root_->constructor), std::nullopt, std::nullopt, root_->node_id};
    push(root_, emitted_++);
    return t;
  }
  while (!stack_.empty()) {
    Frame& f = stack_.back();
    if (!f.order_set)
      throw TransitionError("missing order for multi-branch node " + std::to_string(f.node->node_id));
    if (f.order_pos == f.order.size()) {
      stack_.pop_back();
      continue;
    }
    const Constructor& c = grammar_->constructor(f.node->constructor);
    std::size_t fi = f.order[f.order_pos];
    const FieldDecl& decl = c.fields[fi];
    const FieldValue& value = f.node->fields[fi];
    FrontierField frontier{c.id, fi};
    std::size_t parent = f.created_step;
    std::size_t owner = f.node->node_id;

    if (!grammar_->is_primitive(decl.type_name)) {
      if (decl.cardinality == Cardinality::Single && value.nodes.size() != 1)
        throw TransitionError("single field '" + c.name + "." + decl.name + "' must hold one child");
      if (f.child_pos < value.nodes.size()) {
        const AstNode* child = &value.nodes[f.child_pos++];
        TracedAction t{Action::apply(child->constructor), frontier, parent, child->node_id};
        push(child, emitted_++);
        return t;
      }
      bool reduce = decl.cardinality == Cardinality::Sequential ||
                    (decl.cardinality == Cardinality::Optional && value.nodes.empty());
      ++f.order_pos;
      f.child_pos = 0;
      if (reduce) {
        ++emitted_;
        return {Action::reduce(), frontier, parent, owner};
      }
      continue;
    }

    std::vector<std::string> units;
    if (decl.cardinality == Cardinality::Optional) {
      if (!value.tokens.empty()) units = split_units(value.tokens.front());
    } else {
      units = value.tokens;
    }
    if (decl.cardinality == Cardinality::Single && units.size() != 1)
      throw TransitionError("single field '" + c.name + "." + decl.name + "' must hold one token");
    if (f.child_pos < units.size()) {
      ++emitted_;
      return {Action::gen(units[f.child_pos++]), frontier, parent, owner};
    }
    ++f.order_pos;
    f.child_pos = 0;
    if (decl.cardinality != Cardinality::Single) {
      ++emitted_;
      return {Action::reduce(), frontier, parent, owner};
    }
  }
  throw TransitionError("linearization already complete");
}

std::vector<TracedAction> linearize(const AstNode& ast, const Grammar& g, const OrderAssignment& orders) {
  Linearizer lin(g, ast);
  std::vector<TracedAction> out;
  while (!lin.done()) {
    if (auto id = lin.awaiting_order()) {
      auto it = orders.find(*id);
      if (it == orders.end())
        throw TransitionError("missing order entry for multi-branch node " + std::to_string(*id));
      if (it->second.size() != lin.awaiting_node()->fields.size())
        throw TransitionError("order for node " + std::to_string(*id) + " has length " +
                              std::to_string(it->second.size()) + ", expected " +
                              std::to_string(lin.awaiting_node()->fields.size()));
      lin.set_order(it->second);
    }
    out.push_back(lin.next());
  }
  return out;
}

// ---------------------------------------------------------------------------
// TreeBuilder

TreeBuilder::TreeBuilder(const Grammar& g) : grammar_(&g) {}

std::optional<std::size_t> TreeBuilder::awaiting_order() const {
  if (stack_.empty()) return std::nullopt;
  const Partial& top = nodes_[stack_.back()];
  if (top.order_set) return std::nullopt;
  return stack_.back();
}

std::size_t TreeBuilder::awaiting_constructor() const {
  auto idx = awaiting_order();
  if (!idx) throw TransitionError("no node is awaiting an order");
  return nodes_[*idx].ctor;
}

void TreeBuilder::set_order(std::vector<std::size_t> order) {
  auto idx = awaiting_order();
  if (!idx) throw TransitionError("no node is awaiting an order");
  Partial& p = nodes_[*idx];
  if (!is_permutation_of_iota(order, p.values.size()))
    throw TransitionError("order is not a permutation of the node's fields");
  p.pending = std::move(order);
  p.order_set = true;
}

TreeBuilder::Frontier TreeBuilder::frontier() const {
  if (!started_) return {field_slot(*grammar_, std::nullopt), std::nullopt, 0};
  if (stack_.empty()) throw TransitionError("tree is complete; no frontier");
  const Partial& top = nodes_[stack_.back()];
  if (!top.order_set) throw TransitionError("node is awaiting a field order");
  std::size_t fi = top.current ? *top.current : top.pending.front();
  return {field_slot(*grammar_, FrontierField{top.ctor, fi}), top.created_step, stack_.back()};
}

std::size_t TreeBuilder::create(std::size_t ctor, std::size_t step) {
  const Constructor& c = grammar_->constructor(ctor);
  Partial p;
  p.ctor = ctor;
  p.created_step = step;
  p.values.resize(c.fields.size());
  p.child_nodes.resize(c.fields.size());
  if (!c.multi_branch()) {
    p.pending.resize(c.fields.size());
    std::iota(p.pending.begin(), p.pending.end(), 0);
    p.order_set = true;
  }
  nodes_.push_back(std::move(p));
  return nodes_.size() - 1;
}

TracedAction TreeBuilder::apply(const Action& action) {
  if (complete()) throw TransitionError("trailing action after the tree is complete");
  if (!started_) {
    if (action.kind != Action::Kind::ApplyConstr)
      throw TransitionError(action.kind == Action::Kind::Reduce
                                ? "Reduce on an unsatisfied Single field (root)"
                                : "GenToken at the composite root");
    const Constructor& c = grammar_->constructor(action.constructor);
    if (c.result_type != grammar_->root_type())
      throw TransitionError("constructor '" + c.name + "' does not produce the root type");
    started_ = true;
    std::size_t idx = create(action.constructor, steps_++);
    last_created_ = idx;
    stack_.push_back(idx);
    if (c.fields.empty()) complete_top();
    return {action, std::nullopt, std::nullopt, idx};
  }
  if (awaiting_order()) throw TransitionError("node is awaiting a field order");
  std::size_t owner = stack_.back();
  Partial& top = nodes_[owner];
  if (!top.current) {
    top.current = top.pending.front();
    top.pending.erase(top.pending.begin());
    top.visited.push_back(*top.current);
  }
  std::size_t field = *top.current;
  TracedAction traced{action, FrontierField{top.ctor, field}, top.created_step, owner};
  apply_to_field(owner, field, action);
  if (action.kind == Action::Kind::ApplyConstr) traced.node_id = *last_created_;
  return traced;
}

void TreeBuilder::apply_traced(const TracedAction& t) {
  if (complete()) throw TransitionError("trailing unconsumed actions after the tree is complete");
  if (!started_) {
    if (t.frontier || t.parent_step)
      throw TransitionError("first action must target the root frontier");
    apply(t.action);
    return;
  }
  if (auto idx = awaiting_order()) {
    Partial& p = nodes_[*idx];
    p.pending.resize(p.values.size());
    std::iota(p.pending.begin(), p.pending.end(), 0);
    p.order_set = true;
  }
  std::size_t owner = stack_.back();
  Partial& top = nodes_[owner];
  if (!t.frontier) throw TransitionError("step " + std::to_string(steps_) + " targets ROOT after the root exists");
  if (t.frontier->constructor != top.ctor)
    throw TransitionError("step " + std::to_string(steps_) + " targets a field of '" +
                          grammar_->constructor(t.frontier->constructor).name +
                          "' but the open node is '" + grammar_->constructor(top.ctor).name + "'");
  if (t.parent_step != top.created_step)
    throw TransitionError("step " + std::to_string(steps_) + " has an inconsistent parent step");
  std::size_t field = t.frontier->field;
  if (top.current) {
    if (*top.current != field)
      throw TransitionError("step " + std::to_string(steps_) + " leaves field " +
                            std::to_string(*top.current) + " unfinished");
  } else {
    auto it = std::find(top.pending.begin(), top.pending.end(), field);
    if (it == top.pending.end())
      throw TransitionError("step " + std::to_string(steps_) + " targets a field that is already expanded");
    top.pending.erase(it);
    top.current = field;
    top.visited.push_back(field);
  }
  apply_to_field(owner, field, t.action);
}

void TreeBuilder::apply_to_field(std::size_t owner, std::size_t field, const Action& action) {
  const Constructor& c = grammar_->constructor(nodes_[owner].ctor);
  const FieldDecl& decl = c.fields[field];
  bool primitive = grammar_->is_primitive(decl.type_name);
  std::string where = "field '" + c.name + "." + decl.name + "'";
  std::size_t step = steps_;

  switch (action.kind) {
    case Action::Kind::ApplyConstr: {
      if (primitive) throw TransitionError("ApplyConstr on primitive " + where);
      const Constructor& child = grammar_->constructor(action.constructor);
      if (child.result_type != decl.type_name)
        throw TransitionError("constructor '" + child.name + "' is not legal for " + where);
      std::size_t idx = create(action.constructor, step);
      nodes_[owner].child_nodes[field].push_back(idx);
      ++steps_;
      last_created_ = idx;
      stack_.push_back(idx);
      if (child.fields.empty()) complete_top();
      return;
    }
    case Action::Kind::Reduce:
      if (decl.cardinality == Cardinality::Single)
        throw TransitionError("Reduce on an unsatisfied Single " + where);
      ++steps_;
      if (primitive && decl.cardinality == Cardinality::Optional) {
        auto& toks = nodes_[owner].values[field].tokens;
        if (toks.size() > 1) {
          std::string joined = toks.front();
          for (std::size_t i = 1; i < toks.size(); ++i) joined += " " + toks[i];
          toks.assign(1, joined);
        }
      }
      close_field(owner);
      return;
    case Action::Kind::GenToken:
      if (!primitive) throw TransitionError("GenToken on composite " + where);
      if (action.token.empty() || split_units(action.token).size() != 1)
        throw TransitionError("GenToken must carry exactly one token unit");
      ++steps_;
      nodes_[owner].values[field].tokens.push_back(action.token);
      if (decl.cardinality == Cardinality::Single) close_field(owner);
      return;
  }
}

void TreeBuilder::close_field(std::size_t owner) {
  Partial& p = nodes_[owner];
  p.current.reset();
  if (p.pending.empty()) complete_top();
}

void TreeBuilder::complete_top() {
  stack_.pop_back();
  if (stack_.empty()) return;
  std::size_t parent = stack_.back();
  Partial& p = nodes_[parent];
  const FieldDecl& decl = grammar_->field(p.ctor, *p.current);
  if (decl.cardinality != Cardinality::Sequential) close_field(parent);
}

OrderAssignment TreeBuilder::visit_orders() const {
  OrderAssignment out;
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].values.size() >= 2) out[i] = nodes_[i].visited;
  return out;
}

AstNode TreeBuilder::build(std::size_t index) const {
  const Partial& p = nodes_[index];
  AstNode n;
  n.node_id = index;
  n.constructor = p.ctor;
  n.fields = p.values;
  for (std::size_t f = 0; f < p.child_nodes.size(); ++f)
    for (std::size_t child : p.child_nodes[f]) n.fields[f].nodes.push_back(build(child));
  return n;
}

AstNode TreeBuilder::result() const {
  if (!complete()) throw TransitionError("premature end of trace: tree is incomplete");
  return build(0);
}

AstNode parse_actions(const std::vector<TracedAction>& trace, const Grammar& g) {
  TreeBuilder builder(g);
  for (const auto& t : trace) builder.apply_traced(t);
  return builder.result();
}

// ---------------------------------------------------------------------------

namespace {

void collect_multi_branch(const AstNode& n, std::vector<std::size_t>& out) {
  if (n.fields.size() >= 2) out.push_back(n.node_id);
  for (const auto& f : n.fields)
    for (const auto& child : f.nodes) collect_multi_branch(child, out);
}

template <typename Fn>
void for_each_node(const AstNode& n, Fn&& fn) {
  fn(n);
  for (const auto& f : n.fields)
    for (const auto& child : f.nodes) for_each_node(child, fn);
}

}  // namespace

std::vector<std::size_t> multi_branch_nodes(const AstNode& ast) {
  std::vector<std::size_t> out;
  collect_multi_branch(ast, out);
  return out;
}

OrderAssignment uniform_order_assignment(const AstNode& ast, std::mt19937_64& rng) {
  OrderAssignment out;
  for_each_node(ast, [&](const AstNode& n) {
    if (n.fields.size() < 2) return;
    std::vector<std::size_t> order(n.fields.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    out[n.node_id] = std::move(order);
  });
  return out;
}

OrderAssignment fixed_order_assignment(const AstNode& ast, FixedOrder which) {
  OrderAssignment out;
  for_each_node(ast, [&](const AstNode& n) {
    if (n.fields.size() < 2) return;
    std::vector<std::size_t> order(n.fields.size());
    std::iota(order.begin(), order.end(), 0);
    if (which == FixedOrder::RightToLeft) std::reverse(order.begin(), order.end());
    out[n.node_id] = std::move(order);
  });
  return out;
}

std::size_t action_count(const AstNode& ast, const Grammar& g) {
  std::size_t count = 1;
  const Constructor& c = g.constructor(ast.constructor);
  for (const FieldDecl& f : c.fields) {
    const FieldValue& v = ast.fields[f.index];
    if (g.is_primitive(f.type_name)) {
      std::size_t units = 0;
      if (f.cardinality == Cardinality::Optional) {
        if (!v.tokens.empty()) units = split_units(v.tokens.front()).size();
      } else {
        units = v.tokens.size();
      }
      count += units + (f.cardinality == Cardinality::Single ? 0 : 1);
    } else {
      for (const auto& child : v.nodes) count += action_count(child, g);
      if (f.cardinality == Cardinality::Sequential ||
          (f.cardinality == Cardinality::Optional && v.nodes.empty()))
        count += 1;
    }
  }
  return count;
}

}  // namespace branchsel

#include "branchsel/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>

#include "branchsel/error.hpp"

namespace branchsel {

using nn::Graph;
using nn::Var;

// ---------------------------------------------------------------------------
// Config

void ModelConfig::validate() const {
  if (action_embed_dim == 0 || field_embed_dim == 0 || hidden_dim == 0 || selector_dim == 0)
    throw Error("model dimensions must be >= 1");
  if (hidden_dim % 2 != 0) throw Error("hidden_dim must be even (split across encoder directions)");
  auto need = [](const Vocab& v, std::size_t index, const char* word, const char* which) {
    if (v.size() <= index || v.word(index) != word)
      throw Error(std::string(which) + " vocabulary must reserve '" + word + "' at index " + std::to_string(index));
  };
  need(source_vocab, 0, kPad, "source");
  need(source_vocab, 1, kUnk, "source");
  need(token_vocab, 0, kPad, "token");
  need(token_vocab, 1, kUnk, "token");
  need(token_vocab, 2, kReduce, "token");
  need(constructor_vocab, 0, kPad, "constructor");
  need(constructor_vocab, 1, kReduce, "constructor");
  need(field_vocab, 0, kPad, "field");
}

void ModelConfig::check_grammar(const Grammar& g) const {
  if (!(constructor_vocab == build_constructor_vocab(g)) || !(field_vocab == build_field_vocab(g)))
    throw Error("model vocabularies do not match the grammar");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"action_embed_dim", c.action_embed_dim},
       {"field_embed_dim", c.field_embed_dim},
       {"hidden_dim", c.hidden_dim},
       {"selector_dim", c.selector_dim},
       {"source_vocab", c.source_vocab},
       {"token_vocab", c.token_vocab},
       {"constructor_vocab", c.constructor_vocab},
       {"field_vocab", c.field_vocab}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.action_embed_dim = j.value("action_embed_dim", c.action_embed_dim);
  c.field_embed_dim = j.value("field_embed_dim", c.field_embed_dim);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.selector_dim = j.value("selector_dim", c.selector_dim);
  if (j.contains("source_vocab")) c.source_vocab = j.at("source_vocab").get<Vocab>();
  if (j.contains("token_vocab")) c.token_vocab = j.at("token_vocab").get<Vocab>();
  if (j.contains("constructor_vocab")) c.constructor_vocab = j.at("constructor_vocab").get<Vocab>();
  if (j.contains("field_vocab")) c.field_vocab = j.at("field_vocab").get<Vocab>();
}

// ---------------------------------------------------------------------------
// Order policy over plain probabilities

namespace {

double remaining_mass(std::span<const double> p, const std::vector<bool>& used) {
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (!used[i]) z += p[i];
  return z;
}

}  // namespace

OrderSample sample_order(std::span<const double> p, std::mt19937_64& rng) {
  OrderSample out;
  std::vector<bool> used(p.size(), false);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t draw = 0; draw < p.size(); ++draw) {
    double z = remaining_mass(p, used);
    double u = unit(rng) * z;
    std::size_t pick = p.size();
    std::size_t last = p.size();
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (used[i] || p[i] <= 0.0) continue;
      last = i;
      if (u < p[i]) {
        pick = i;
        break;
      }
      u -= p[i];
    }
    if (pick == p.size()) pick = last;  // rounding at the top end
    if (pick == p.size())  // all remaining mass is zero
      for (std::size_t i = 0; i < p.size(); ++i)
        if (!used[i]) {
          pick = i;
          break;
        }
    double lp = std::log(p[pick] / z);
    out.order.push_back(pick);
    out.per_step_log_probs.push_back(lp);
    out.log_prob += lp;
    used[pick] = true;
  }
  return out;
}

OrderSample greedy_order(std::span<const double> p) {
  OrderSample out;
  std::vector<bool> used(p.size(), false);
  for (std::size_t draw = 0; draw < p.size(); ++draw) {
    double z = remaining_mass(p, used);
    std::size_t best = p.size();
    for (std::size_t i = 0; i < p.size(); ++i)
      if (!used[i] && (best == p.size() || p[i] > p[best])) best = i;
    double lp = std::log(p[best] / z);
    out.order.push_back(best);
    out.per_step_log_probs.push_back(lp);
    out.log_prob += lp;
    used[best] = true;
  }
  return out;
}

double order_log_prob(std::span<const double> p, const std::vector<std::size_t>& order) {
  if (!is_permutation_of_iota(order, p.size())) throw Error("order is not a permutation of the fields");
  std::vector<bool> used(p.size(), false);
  double lp = 0.0;
  for (std::size_t f : order) {
    lp += std::log(p[f] / remaining_mass(p, used));
    used[f] = true;
  }
  return lp;
}

// ---------------------------------------------------------------------------
// Model

namespace {

struct Shape {
  std::string name;
  std::size_t rows, cols, fan_in;
};

std::vector<Shape> param_shapes(const ModelConfig& c) {
  std::size_t E = c.action_embed_dim, F = c.field_embed_dim, H = c.hidden_dim, Hh = H / 2, S = c.selector_dim;
  std::size_t dec_in = E + H + F + H;
  return {
      {"src_embed", c.source_vocab.size(), E, E},
      {"enc_fwd_W", 4 * Hh, E + Hh, E + Hh},
      {"enc_fwd_b", 4 * Hh, 1, E + Hh},
      {"enc_bwd_W", 4 * Hh, E + Hh, E + Hh},
      {"enc_bwd_b", 4 * Hh, 1, E + Hh},
      {"init_W", H, H, H},
      {"init_b", H, 1, H},
      {"ctor_embed", c.constructor_vocab.size(), E, E},
      {"token_embed", c.token_vocab.size(), E, E},
      {"field_embed", c.field_vocab.size(), F, F},
      {"dec_W", 4 * H, dec_in + H, dec_in + H},
      {"dec_b", 4 * H, 1, dec_in + H},
      {"att_W", H, H, H},
      {"att_vec_W", H, 2 * H, 2 * H},
      {"ctor_out_W", E, H, H},
      {"token_out_W", E, H, H},
      {"gen_W", 1, H, H},
      {"gen_b", 1, 1, H},
      {"copy_W", H, H, H},
      {"sel_W1", S, H + E + F, H + E + F},
      {"sel_b1", S, 1, H + E + F},
      {"sel_W2", 1, S, S},
  };
}

}  // namespace

Model::Model(const Grammar& g, ModelConfig config, std::uint64_t seed) : grammar_(&g), config_(std::move(config)) {
  config_.validate();
  config_.check_grammar(g);
  std::mt19937_64 rng(seed);
  auto shapes = param_shapes(config_);
  std::sort(shapes.begin(), shapes.end(), [](const Shape& a, const Shape& b) { return a.name < b.name; });
  for (const auto& s : shapes) params_.create(s.name, s.rows, s.cols, rng, s.fan_in);
  bind();
}

Model::Model(const Grammar& g, ModelConfig config, nn::ParamStore params)
    : grammar_(&g), config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  config_.check_grammar(g);
  auto shapes = param_shapes(config_);
  if (params_.size() != shapes.size()) throw Error("parameter set does not match the model configuration");
  for (const auto& s : shapes) {
    if (!params_.contains(s.name)) throw Error("missing parameter '" + s.name + "'");
    const auto& t = params_.get(s.name);
    if (t.rows() != s.rows || t.cols() != s.cols)
      throw Error("parameter '" + s.name + "' has shape " + std::to_string(t.rows()) + "x" +
                  std::to_string(t.cols()) + ", expected " + std::to_string(s.rows) + "x" + std::to_string(s.cols));
  }
  bind();
}

void Model::bind() {
  auto& ps = params_;
  std::size_t H = config_.hidden_dim;
  p_.src_embed = &ps.get("src_embed");
  p_.ctor_embed = &ps.get("ctor_embed");
  p_.token_embed = &ps.get("token_embed");
  p_.field_embed = &ps.get("field_embed");
  p_.enc_fwd = {&ps.get("enc_fwd_W"), &ps.get("enc_fwd_b"), H / 2};
  p_.enc_bwd = {&ps.get("enc_bwd_W"), &ps.get("enc_bwd_b"), H / 2};
  p_.dec = {&ps.get("dec_W"), &ps.get("dec_b"), H};
  p_.init_W = &ps.get("init_W");
  p_.init_b = &ps.get("init_b");
  p_.att_W = &ps.get("att_W");
  p_.att_vec_W = &ps.get("att_vec_W");
  p_.ctor_out_W = &ps.get("ctor_out_W");
  p_.token_out_W = &ps.get("token_out_W");
  p_.gen_W = &ps.get("gen_W");
  p_.gen_b = &ps.get("gen_b");
  p_.copy_W = &ps.get("copy_W");
  p_.sel_W1 = &ps.get("sel_W1");
  p_.sel_b1 = &ps.get("sel_b1");
  p_.sel_W2 = &ps.get("sel_W2");
}

EncodedSource Model::encode(Graph& g, const std::vector<std::string>& src) {
  if (src.empty()) throw Error("cannot encode an empty source sentence");
  std::size_t Hh = config_.hidden_dim / 2;
  EncodedSource enc;
  enc.tokens = src;
  std::vector<Var> xs;
  xs.reserve(src.size());
  for (const auto& w : src) xs.push_back(g.embedding(*p_.src_embed, config_.source_vocab.index_or_unk(w)));

  std::vector<Var> fwd(src.size()), bwd(src.size());
  Var h = g.zeros(Hh), c = g.zeros(Hh);
  for (std::size_t i = 0; i < src.size(); ++i) {
    std::tie(h, c) = nn::lstm_cell(g, xs[i], h, c, p_.enc_fwd);
    fwd[i] = h;
  }
  h = g.zeros(Hh);
  c = g.zeros(Hh);
  for (std::size_t i = src.size(); i-- > 0;) {
    std::tie(h, c) = nn::lstm_cell(g, xs[i], h, c, p_.enc_bwd);
    bwd[i] = h;
  }
  for (std::size_t i = 0; i < src.size(); ++i) enc.states.push_back(g.concat({fwd[i], bwd[i]}));
  enc.memory = g.stack_rows(enc.states);
  enc.final_forward = fwd.back();
  enc.final_backward = bwd.front();
  return enc;
}

DecoderState Model::initial_state(Graph& g, const EncodedSource& enc) {
  std::size_t H = config_.hidden_dim;
  DecoderState st;
  st.cell = g.add(g.matmul(g.param(*p_.init_W), g.concat({enc.final_forward, enc.final_backward})),
                  g.param(*p_.init_b));
  st.h = g.tanh(st.cell);
  st.s = g.zeros(H);
  st.context = g.zeros(H);
  return st;
}

Var Model::action_embedding(Graph& g, const Action& a) {
  switch (a.kind) {
    case Action::Kind::ApplyConstr:
      return g.embedding(*p_.ctor_embed, constructor_index(a.constructor));
    case Action::Kind::Reduce:
      return g.embedding(*p_.ctor_embed, kReduceConstructor);
    case Action::Kind::GenToken:
      return g.embedding(*p_.token_embed, config_.token_vocab.index_or_unk(a.token));
  }
  throw Error("unknown action kind");
}

Var Model::zero_action(Graph& g) { return g.zeros(config_.action_embed_dim); }

Var Model::parent_feed(Graph& g, const std::optional<FrontierField>& field, std::optional<Var> parent_s) {
  if (!field) return g.zeros(config_.field_embed_dim + config_.hidden_dim);
  if (!parent_s) throw Error("parent feed for a non-root field needs the parent state");
  Var f = g.embedding(*p_.field_embed, field_index(field->constructor, field->field));
  return g.concat({f, *parent_s});
}

DecoderState Model::decoder_step(Graph& g, Var prev_action, const DecoderState& prev, Var feed,
                                 const EncodedSource& enc) {
  if (g.size(prev_action) != config_.action_embed_dim ||
      g.size(feed) != config_.field_embed_dim + config_.hidden_dim)
    throw ShapeError("decoder_step: input dimensions do not match the model");
  DecoderState st;
  Var x = g.concat({prev_action, prev.s, feed});
  std::tie(st.h, st.cell) = nn::lstm_cell(g, x, prev.h, prev.cell, p_.dec);
  Var query = g.matmul_tn(g.param(*p_.att_W), st.h);
  st.attention = g.softmax(g.matmul(enc.memory, query));
  st.context = g.matmul_tn(enc.memory, st.attention);
  st.s = g.tanh(g.matmul(g.param(*p_.att_vec_W), g.concat({st.h, st.context})));
  return st;
}

std::vector<bool> Model::constructor_mask(const FieldSlot& slot) const {
  if (slot.primitive) throw Error("ApplyConstr distribution requested for a primitive field");
  std::vector<bool> excluded(config_.constructor_vocab.size(), true);
  for (std::size_t id : grammar_->constructor_ids_of_type(*slot.type_name)) excluded[constructor_index(id)] = false;
  if (slot.reduce_allowed()) excluded[kReduceConstructor] = false;
  return excluded;
}

Var Model::apply_constr_log_probs(Graph& g, Var s, const FieldSlot& slot) {
  Var logits = g.matmul(g.param(*p_.ctor_embed), g.matmul(g.param(*p_.ctor_out_W), s));
  return g.masked_log_softmax(logits, constructor_mask(slot));
}

TokenHead Model::token_head(Graph& g, Var s, const EncodedSource& enc, const FieldSlot& slot) {
  if (!slot.primitive) throw Error("GenToken distribution requested for a composite field");
  TokenHead head;
  head.p_gen = g.sigmoid(g.add(g.matmul(g.param(*p_.gen_W), s), g.param(*p_.gen_b)));
  std::vector<bool> excluded(config_.token_vocab.size(), false);
  excluded[0] = true;
  if (!slot.reduce_allowed()) excluded[kReduceToken] = true;
  Var logits = g.matmul(g.param(*p_.token_embed), g.matmul(g.param(*p_.token_out_W), s));
  head.p_vocab = g.masked_softmax(logits, excluded);
  head.p_copy = g.softmax(g.matmul(enc.memory, g.matmul_tn(g.param(*p_.copy_W), s)));
  return head;
}

Var Model::token_log_prob(Graph& g, const TokenHead& head, const EncodedSource& enc, const std::string& token) {
  bool reduce = token == kReduce;
  std::vector<std::size_t> positions;
  if (!reduce)
    for (std::size_t i = 0; i < enc.tokens.size(); ++i)
      if (enc.tokens[i] == token) positions.push_back(i);

  std::optional<Var> total;
  auto vi = config_.token_vocab.find(token);
  if (!vi && positions.empty()) vi = kUnkToken;
  if (vi) total = g.mul(head.p_gen, g.pick(head.p_vocab, *vi));
  if (!positions.empty()) {
    Var copy = g.mul(g.add_scalar(g.scale(head.p_gen, -1.0), 1.0), g.gather_sum(head.p_copy, positions));
    total = total ? g.add(*total, copy) : copy;
  }
  return g.log(*total);
}

std::vector<std::pair<std::string, double>> Model::token_distribution(const Graph& g, const TokenHead& head,
                                                                      const EncodedSource& enc) const {
  double p_gen = g.scalar_value(head.p_gen);
  auto pv = g.value(head.p_vocab);
  auto pc = g.value(head.p_copy);
  std::vector<std::pair<std::string, double>> out;
  std::map<std::string, std::size_t> slot;
  for (std::size_t i = 1; i < pv.size(); ++i) {
    slot[config_.token_vocab.word(i)] = out.size();
    out.emplace_back(config_.token_vocab.word(i), p_gen * pv[i]);
  }
  for (std::size_t i = 0; i < enc.tokens.size(); ++i) {
    auto [it, inserted] = slot.emplace(enc.tokens[i], out.size());
    if (inserted) out.emplace_back(enc.tokens[i], 0.0);
    out[it->second].second += (1.0 - p_gen) * pc[i];
  }
  return out;
}

Var Model::selector_scores(Graph& g, Var s, std::size_t constructor_id) {
  const Constructor& c = grammar_->constructor(constructor_id);
  if (c.fields.size() < 2) throw Error("the branch selector needs a constructor with at least two fields");
  Var action = g.embedding(*p_.ctor_embed, constructor_index(constructor_id));
  Var W1 = g.param(*p_.sel_W1), b1 = g.param(*p_.sel_b1), W2 = g.param(*p_.sel_W2);
  std::vector<Var> scores;
  for (const auto& f : c.fields) {
    Var fe = g.embedding(*p_.field_embed, f.global_id + 1);
    Var hidden = g.tanh(g.add(g.matmul(W1, g.concat({s, action, fe})), b1));
    scores.push_back(g.matmul(W2, hidden));
  }
  return g.concat(scores);
}

Var Model::order_log_prob(Graph& g, Var scores, const std::vector<std::size_t>& order) {
  std::size_t m = g.size(scores);
  if (!is_permutation_of_iota(order, m)) throw Error("order is not a permutation of the fields");
  std::vector<bool> used(m, false);
  std::vector<Var> terms;
  for (std::size_t f : order) {
    terms.push_back(g.pick(g.masked_log_softmax(scores, used), f));
    used[f] = true;
  }
  return g.sum(g.concat(terms));
}

// ---------------------------------------------------------------------------
// Teacher forcing

OrderHook fixed_orders(const OrderAssignment& orders) {
  return [orders](const AstNode& node, std::size_t, const DecoderState&) {
    auto it = orders.find(node.node_id);
    if (it == orders.end())
      throw TransitionError("missing order entry for multi-branch node " + std::to_string(node.node_id));
    return it->second;
  };
}

ForcedRun teacher_force(Graph& g, Model& model, const std::vector<std::string>& src, const AstNode& ast,
                        const OrderHook& hook, bool score_argmax) {
  const Grammar& gram = model.grammar();
  ForcedRun run;
  EncodedSource enc = model.encode(g, src);
  DecoderState state = model.initial_state(g, enc);
  Var prev = model.zero_action(g);
  Linearizer lin(gram, ast);

  while (!lin.done()) {
    if (lin.awaiting_order()) {
      std::size_t step = lin.steps_emitted() - 1;
      lin.set_order(hook(*lin.awaiting_node(), step, run.states.at(step)));
    }
    TracedAction t = lin.next();
    FieldSlot slot = field_slot(gram, t.frontier);
    std::optional<Var> parent_s;
    if (t.parent_step) parent_s = run.states.at(*t.parent_step).s;
    state = model.decoder_step(g, prev, state, model.parent_feed(g, t.frontier, parent_s), enc);

    Var lp;
    bool correct = false;
    if (!slot.primitive) {
      Var all = model.apply_constr_log_probs(g, state.s, slot);
      std::size_t target = t.action.kind == Action::Kind::ApplyConstr ? model.constructor_index(t.action.constructor)
                                                                      : Model::kReduceConstructor;
      lp = g.pick(all, target);
      if (score_argmax) {
        auto v = g.value(all);
        correct = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin()) == target;
      }
    } else {
      TokenHead head = model.token_head(g, state.s, enc, slot);
      std::string token = t.action.kind == Action::Kind::Reduce ? std::string(kReduce) : t.action.token;
      lp = model.token_log_prob(g, head, enc, token);
      if (score_argmax) {
        auto dist = model.token_distribution(g, head, enc);
        auto best = std::max_element(dist.begin(), dist.end(),
                                     [](const auto& a, const auto& b) { return a.second < b.second; });
        correct = best->first == token;
      }
    }
    if (!std::isfinite(g.scalar_value(lp)))
      throw TransitionError("action " + to_string(t.action, gram) + " has zero probability at step " +
                            std::to_string(run.trace.size()));
    run.trace.push_back(t);
    run.log_probs.push_back(lp);
    run.states.push_back(state);
    if (score_argmax) run.argmax_correct.push_back(correct);
    prev = model.action_embedding(g, t.action);
  }
  run.nll = g.scale(g.sum(g.concat(run.log_probs)), -1.0);
  return run;
}

Var sequence_nll(Graph& g, Model& model, const std::vector<std::string>& src, const AstNode& ast,
                 const OrderAssignment& orders) {
  return teacher_force(g, model, src, ast, fixed_orders(orders)).nll;
}

Var sequence_nll(Graph& g, Model& model, const std::vector<std::string>& src,
                 const std::vector<TracedAction>& trace) {
  TreeBuilder builder(model.grammar());
  for (const auto& t : trace) builder.apply_traced(t);
  AstNode ast = builder.result();
  OrderAssignment orders = builder.visit_orders();
  ForcedRun run = teacher_force(g, model, src, ast, fixed_orders(orders));
  if (run.trace != trace) {
    // Node ids differ between a caller's trace and the rebuilt tree; compare actions and frontiers only.
    bool same = run.trace.size() == trace.size();
    for (std::size_t i = 0; same && i < trace.size(); ++i)
      same = run.trace[i].action == trace[i].action && run.trace[i].frontier == trace[i].frontier &&
             run.trace[i].parent_step == trace[i].parent_step;
    if (!same) throw TransitionError("trace is not a depth-first linearization of its own tree");
  }
  return run.nll;
}

}  // namespace branchsel

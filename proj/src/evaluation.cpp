#include "branchsel/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "branchsel/error.hpp"
#include "branchsel/realize.hpp"

namespace branchsel {

using nn::Graph;
using nn::Var;

namespace {

double round2(double x) { return std::round(x * 100.0) / 100.0; }

std::string fixed2(double x) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(2) << x;
  return ss.str();
}

// `k` counts the multi-branch nodes created so far in this hypothesis. The
// random policy draws from (seed, k) alone, so hypotheses that share a prefix
// share their orders and the beam cannot search over permutations.
std::vector<std::size_t> choose_order(Model& model, Graph& g, OrderPolicy policy, std::size_t ctor, Var s,
                                      std::uint64_t seed, std::size_t k) {
  std::size_t m = model.grammar().constructor(ctor).fields.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  switch (policy) {
    case OrderPolicy::L2R:
      break;
    case OrderPolicy::R2L:
      std::reverse(order.begin(), order.end());
      break;
    case OrderPolicy::RAND: {
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(k)};
      std::mt19937_64 rng(seq);
      std::shuffle(order.begin(), order.end(), rng);
      break;
    }
    case OrderPolicy::RL: {
      auto scores = g.values(model.selector_scores(g, s, ctor));
      double mx = *std::max_element(scores.begin(), scores.end());
      double z = 0.0;
      for (double& x : scores) z += x = std::exp(x - mx);
      for (double& x : scores) x /= z;
      order = greedy_order(scores).order;
      break;
    }
  }
  return order;
}

struct Hyp {
  TreeBuilder builder;
  DecoderState state;
  Var prev;
  std::vector<Var> step_s;
  std::vector<TracedAction> trace;
  OrderAssignment orders;
  double score = 0.0;
};

DecodeResult run_beam(Model& model, const std::vector<std::string>& src, const DecodeOptions& opt,
                      std::size_t beam_size) {
  if (beam_size == 0) throw Error("beam size must be >= 1");
  Graph g(false);
  EncodedSource enc = model.encode(g, src);
  std::vector<Hyp> beam;
  beam.push_back(Hyp{TreeBuilder(model.grammar()), model.initial_state(g, enc), model.zero_action(g), {}, {}, {}, 0.0});
  std::vector<Hyp> finished;

  struct Cand {
    std::size_t hyp;
    Action action;
    double score;
  };

  for (std::size_t step = 0; step < opt.max_steps && !beam.empty() && finished.size() < beam_size; ++step) {
    std::vector<Cand> cands;
    std::vector<DecoderState> states;
    for (std::size_t hi = 0; hi < beam.size(); ++hi) {
      const Hyp& h = beam[hi];
      auto fr = h.builder.frontier();
      std::optional<Var> parent_s;
      if (fr.parent_step) parent_s = h.step_s.at(*fr.parent_step);
      DecoderState st = model.decoder_step(g, h.prev, h.state, model.parent_feed(g, fr.slot.field, parent_s), enc);
      states.push_back(st);
      if (!fr.slot.primitive) {
        auto lp = g.values(model.apply_constr_log_probs(g, st.s, fr.slot));
        for (std::size_t i = 0; i < lp.size(); ++i) {
          if (!std::isfinite(lp[i])) continue;
          Action a = i == Model::kReduceConstructor ? Action::reduce() : Action::apply(i - 2);
          cands.push_back({hi, a, h.score + lp[i]});
        }
      } else {
        TokenHead head = model.token_head(g, st.s, enc, fr.slot);
        for (auto& [tok, p] : model.token_distribution(g, head, enc)) {
          if (!(p > 0.0)) continue;
          if (tok == kReduce) {
            cands.push_back({hi, Action::reduce(), h.score + std::log(p)});
          } else if (split_units(tok).size() == 1) {
            cands.push_back({hi, Action::gen(tok), h.score + std::log(p)});
          }
        }
      }
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.score > b.score; });

    std::vector<Hyp> next;
    for (const Cand& c : cands) {
      if (next.size() + finished.size() >= beam_size) break;
      Hyp h = beam[c.hyp];
      const DecoderState& st = states[c.hyp];
      h.state = st;
      h.trace.push_back(h.builder.apply(c.action));
      h.step_s.push_back(st.s);
      h.prev = model.action_embedding(g, c.action);
      h.score = c.score;
      if (auto idx = h.builder.awaiting_order()) {
        auto order = choose_order(model, g, opt.order_policy, h.builder.node_constructor(*idx), st.s, opt.seed,
                                  h.orders.size());
        h.builder.set_order(order);
        h.orders[*idx] = std::move(order);
      }
      if (h.builder.complete())
        finished.push_back(std::move(h));
      else
        next.push_back(std::move(h));
    }
    beam = std::move(next);
  }

  DecodeResult out;
  const Hyp* best = nullptr;
  for (const auto& h : finished)
    if (!best || h.score > best->score) best = &h;
  if (best) {
    out.ast = best->builder.result();
    out.trace = best->trace;
    out.orders = best->orders;
    out.log_prob = best->score;
  }
  return out;
}

}  // namespace

DecodeResult beam_decode(Model& model, const std::vector<std::string>& src, const DecodeOptions& options) {
  DecodeResult best = run_beam(model, src, options, options.beam_size);
  if (options.beam_size > 1) {
    DecodeResult greedy = run_beam(model, src, options, 1);
    if (greedy.ast && (!best.ast || greedy.log_prob > best.log_prob)) best = std::move(greedy);
  }
  return best;
}

DecodeResult greedy_decode(Model& model, const std::vector<std::string>& src, const DecodeOptions& options) {
  return run_beam(model, src, options, 1);
}

std::size_t default_max_steps(const Corpus& corpus, const Grammar& g) {
  if (corpus.empty()) return 200;
  std::vector<std::size_t> lengths;
  for (const auto& inst : corpus) lengths.push_back(action_count(inst.ast, g));
  std::sort(lengths.begin(), lengths.end());
  return 10 * lengths[lengths.size() / 2];
}

bool exact_match(const std::string& predicted, const std::string& gold) {
  return canonicalize_whitespace(predicted) == canonicalize_whitespace(gold);
}

std::string bucket_key(std::size_t n) { return n >= 6 ? ">=6" : std::to_string(n); }

const std::vector<std::string>& bucket_keys() {
  static const std::vector<std::string> keys = {"0", "1", "2", "3", "4", "5", ">=6"};
  return keys;
}

// ---------------------------------------------------------------------------
// Corpus statistics

nlohmann::json CorpusStats::to_json() const {
  nlohmann::json hist = nlohmann::json::object();
  for (const auto& k : bucket_keys()) hist[k] = histogram.at(k);
  return {{"instances", instances},
          {"nodes", nodes},
          {"multi_branch_nodes", multi_branch_nodes},
          {"asts_with_multi_branch", asts_with_multi_branch},
          {"pct_asts_with_multi_branch", pct_asts_with_multi_branch},
          {"pct_nodes_multi_branch", pct_nodes_multi_branch},
          {"histogram", hist}};
}

std::string CorpusStats::to_text() const {
  std::ostringstream ss;
  ss << std::left << std::setw(34) << "instances" << instances << "\n"
     << std::setw(34) << "AST nodes" << nodes << "\n"
     << std::setw(34) << "ASTs with multi-branch nodes (%)" << fixed2(pct_asts_with_multi_branch) << "\n"
     << std::setw(34) << "multi-branch AST nodes (%)" << fixed2(pct_nodes_multi_branch) << "\n\n";
  ss << std::setw(16) << "#multi-branch";
  for (const auto& k : bucket_keys()) ss << std::right << std::setw(8) << k;
  ss << "\n" << std::left << std::setw(16) << "#instances";
  for (const auto& k : bucket_keys()) ss << std::right << std::setw(8) << histogram.at(k);
  ss << "\n";
  return ss.str();
}

namespace {

void count_nodes_rec(const AstNode& n, std::size_t& nodes, std::size_t& mb) {
  ++nodes;
  if (n.fields.size() >= 2) ++mb;
  for (const auto& f : n.fields)
    for (const auto& c : f.nodes) count_nodes_rec(c, nodes, mb);
}

}  // namespace

CorpusStats corpus_stats(const std::vector<AstNode>& asts) {
  if (asts.empty()) throw Error("corpus statistics of an empty corpus");
  CorpusStats s;
  for (const auto& k : bucket_keys()) s.histogram[k] = 0;
  for (const auto& ast : asts) {
    std::size_t nodes = 0, mb = 0;
    count_nodes_rec(ast, nodes, mb);
    s.nodes += nodes;
    s.multi_branch_nodes += mb;
    if (mb > 0) ++s.asts_with_multi_branch;
    ++s.histogram[bucket_key(mb)];
  }
  s.instances = asts.size();
  s.pct_asts_with_multi_branch = round2(100.0 * s.asts_with_multi_branch / s.instances);
  s.pct_nodes_multi_branch = round2(100.0 * s.multi_branch_nodes / s.nodes);
  return s;
}

CorpusStats corpus_stats(const Corpus& corpus) {
  std::vector<AstNode> asts;
  for (const auto& inst : corpus) asts.push_back(inst.ast);
  return corpus_stats(asts);
}

// ---------------------------------------------------------------------------
// Accuracy

std::vector<InstanceResult> evaluate_corpus(Model& model, const Corpus& corpus, const Templates& templates,
                                            const DecodeOptions& options) {
  std::vector<InstanceResult> out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    DecodeOptions opt = options;
    opt.seed = options.seed + i;
    DecodeResult r = beam_decode(model, corpus[i].src, opt);
    InstanceResult res;
    res.index = i;
    res.multi_branch = multi_branch_nodes(corpus[i].ast).size();
    if (r.ast) {
      res.decoded = true;
      res.predicted = ast_to_code(*r.ast, model.grammar(), templates);
      res.correct = exact_match(res.predicted, corpus[i].code);
    }
    out.push_back(std::move(res));
  }
  return out;
}

nlohmann::json BucketAccuracy::to_json() const {
  nlohmann::json b = nlohmann::json::object();
  for (const auto& k : bucket_keys()) {
    const Cell& c = buckets.at(k);
    b[k] = {{"total", c.total},
            {"correct", c.correct},
            {"accuracy", c.accuracy ? nlohmann::json(*c.accuracy) : nlohmann::json(nullptr)}};
  }
  return {{"total", total}, {"correct", correct}, {"accuracy", accuracy}, {"buckets", b}};
}

BucketAccuracy bucketed_accuracy(const std::vector<InstanceResult>& results) {
  BucketAccuracy acc;
  for (const auto& k : bucket_keys()) acc.buckets[k] = {};
  for (const auto& r : results) {
    auto& cell = acc.buckets[bucket_key(r.multi_branch)];
    ++cell.total;
    ++acc.total;
    if (r.correct) {
      ++cell.correct;
      ++acc.correct;
    }
  }
  for (auto& [_, cell] : acc.buckets)
    if (cell.total) cell.accuracy = static_cast<double>(cell.correct) / cell.total;
  if (acc.total) acc.accuracy = static_cast<double>(acc.correct) / acc.total;
  return acc;
}

std::string bucket_table(const std::vector<std::pair<std::string, BucketAccuracy>>& rows) {
  std::size_t name_w = 16;
  for (const auto& [name, _] : rows) name_w = std::max(name_w, name.size() + 2);
  std::ostringstream ss;
  ss << std::left << std::setw(name_w) << "#multi-branch";
  for (const auto& k : bucket_keys()) ss << std::right << std::setw(8) << k;
  ss << std::setw(9) << "all" << "\n";
  if (!rows.empty()) {
    ss << std::left << std::setw(name_w) << "#instances";
    for (const auto& k : bucket_keys()) ss << std::right << std::setw(8) << rows.front().second.buckets.at(k).total;
    ss << std::setw(9) << rows.front().second.total << "\n";
  }
  for (const auto& [name, acc] : rows) {
    ss << std::left << std::setw(name_w) << name;
    for (const auto& k : bucket_keys()) {
      const auto& cell = acc.buckets.at(k);
      ss << std::right << std::setw(8) << (cell.accuracy ? fixed2(100.0 * *cell.accuracy) : std::string("N/A"));
    }
    ss << std::setw(9) << fixed2(100.0 * acc.accuracy) << "\n";
  }
  return ss.str();
}

// ---------------------------------------------------------------------------
// Child-node prediction and disagreement

nlohmann::json ChildAccuracy::to_json() const {
  return {{"correct", correct},
          {"total", total},
          {"accuracy", accuracy ? nlohmann::json(*accuracy) : nlohmann::json(nullptr)}};
}

ChildAccuracy child_prediction_accuracy(Model& model, const Corpus& corpus, OrderPolicy policy, std::uint64_t seed) {
  const Grammar& gram = model.grammar();
  ChildAccuracy acc;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    Graph g(false);
    std::size_t k = 0;
    OrderHook hook = [&](const AstNode& node, std::size_t, const DecoderState& state) {
      return choose_order(model, g, policy, node.constructor, state.s, seed + i, k++);
    };
    ForcedRun run = teacher_force(g, model, corpus[i].src, corpus[i].ast, hook, true);
    for (std::size_t t = 0; t < run.trace.size(); ++t) {
      const auto& parent = run.trace[t].parent_step;
      if (!parent) continue;
      const TracedAction& owner = run.trace[*parent];
      if (gram.constructor(owner.action.constructor).fields.size() < 2) continue;
      ++acc.total;
      if (run.argmax_correct[t]) ++acc.correct;
      auto [it, _] = acc.node_flags.emplace(std::make_pair(i, owner.node_id), true);
      it->second = it->second && run.argmax_correct[t];
    }
  }
  if (acc.total) acc.accuracy = static_cast<double>(acc.correct) / acc.total;
  return acc;
}

nlohmann::json Disagreement::to_json() const {
  return {{"unit", "node"},     {"nodes", nodes},           {"only_a", only_a},
          {"only_b", only_b},   {"pct_only_a", pct_only_a}, {"pct_only_b", pct_only_b}};
}

Disagreement order_disagreement(const NodeFlags& a, const NodeFlags& b) {
  if (a.size() != b.size()) throw Error("disagreement report: the two models cover different node sets");
  Disagreement d;
  for (const auto& [key, ok_a] : a) {
    auto it = b.find(key);
    if (it == b.end()) throw Error("disagreement report: the two models cover different node sets");
    ++d.nodes;
    if (ok_a && !it->second) ++d.only_a;
    if (!ok_a && it->second) ++d.only_b;
  }
  if (d.nodes) {
    d.pct_only_a = round2(100.0 * d.only_a / d.nodes);
    d.pct_only_b = round2(100.0 * d.only_b / d.nodes);
  }
  return d;
}

Disagreement order_disagreement_report(Model& a, OrderPolicy policy_a, Model& b, OrderPolicy policy_b,
                                       const Corpus& corpus, std::uint64_t seed) {
  return order_disagreement(child_prediction_accuracy(a, corpus, policy_a, seed).node_flags,
                            child_prediction_accuracy(b, corpus, policy_b, seed).node_flags);
}

std::string disagreement_table(const std::string& name_a, const std::string& name_b, const Disagreement& d) {
  std::size_t w = std::max<std::size_t>({name_a.size(), name_b.size(), 10}) + 7;
  std::ostringstream ss;
  ss << "Multi-branch nodes handled correctly by only one model (unit: node, N = " << d.nodes << ")\n";
  ss << std::left << std::setw(w) << "Model" << "Percentage\n";
  ss << std::setw(w) << ("Only " + name_a) << fixed2(d.pct_only_a) << "\n";
  ss << std::setw(w) << ("Only " + name_b) << fixed2(d.pct_only_b) << "\n";
  return ss.str();
}

}  // namespace branchsel

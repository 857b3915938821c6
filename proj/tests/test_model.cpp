#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "branchsel/error.hpp"
#include "branchsel/model.hpp"
#include "branchsel/training.hpp"
#include "branchsel/transition.hpp"
#include "support.hpp"

using namespace branchsel;
using namespace branchsel::nn;
using testsupport::check_gradients;
using testsupport::thrown;

namespace {

Model toy_model(std::uint64_t seed = 3) {
  const Grammar& g = testsupport::toy_grammar();
  return Model(g, testsupport::micro_config(g, testsupport::toy_corpus()), seed);
}

void zero(Model& m, const std::string& name) {
  auto& d = m.params().get(name).data();
  std::fill(d.begin(), d.end(), 0.0);
}

FieldSlot slot_of(const Grammar& g, const std::string& ctor, std::size_t field) {
  return field_slot(g, FrontierField{g.constructor(ctor).id, field});
}

double sum(std::span<const double> xs) { return std::accumulate(xs.begin(), xs.end(), 0.0); }

std::vector<double> probs_from_log(std::span<const double> lp) {
  std::vector<double> p;
  for (double x : lp) p.push_back(std::exp(x));
  return p;
}

// Exact chain-rule probability of a permutation, written out directly.
double chain_prob(const std::vector<double>& p, const std::vector<std::size_t>& o) {
  double prob = 1.0, left = 1.0;
  for (std::size_t f : o) {
    prob *= p[f] / left;
    left -= p[f];
  }
  return prob;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c = testsupport::micro_config(testsupport::toy_grammar(), testsupport::toy_corpus());
  CHECK_NOTHROW(c.validate());
  ModelConfig odd = c;
  odd.hidden_dim = 15;
  CHECK_FALSE(thrown<Error>([&] { odd.validate(); }).empty());
  ModelConfig zero_dim = c;
  zero_dim.action_embed_dim = 0;
  CHECK_FALSE(thrown<Error>([&] { zero_dim.validate(); }).empty());
  ModelConfig no_unk = c;
  no_unk.token_vocab = Vocab({"<pad>", "x"});
  CHECK_FALSE(thrown<Error>([&] { no_unk.validate(); }).empty());
  CHECK(ModelConfig{}.hidden_dim == 256);
  CHECK(ModelConfig{}.action_embed_dim == 128);
  CHECK(ModelConfig{}.field_embed_dim == 128);
}

TEST_CASE("restoring parameters checks names and shapes") {
  Model m = toy_model();
  ParamStore copy = m.params();
  CHECK_NOTHROW(Model(testsupport::toy_grammar(), m.config(), copy));
  ParamStore missing;
  CHECK_FALSE(thrown<Error>([&] { Model(testsupport::toy_grammar(), m.config(), missing); }).empty());
  ModelConfig bigger = m.config();
  bigger.hidden_dim = 18;
  CHECK_FALSE(thrown<Error>([&] { Model(testsupport::toy_grammar(), bigger, copy); }).empty());
}

TEST_CASE("encoder shapes") {
  Model m = toy_model();
  Graph g;
  auto one = m.encode(g, {"x"});
  REQUIRE(one.states.size() == 1);
  CHECK(g.size(one.states[0]) == 16);
  auto fwd = m.encode(g, {"call", "f", "zzz-unknown"});
  auto rev = m.encode(g, {"zzz-unknown", "f", "call"});
  CHECK(fwd.states.size() == 3);
  CHECK(rev.states.size() == 3);
  CHECK(g.rows(fwd.memory) == 3);
  CHECK(g.cols(fwd.memory) == 16);
  CHECK_FALSE(thrown<Error>([&] { m.encode(g, {}); }).empty());
}

TEST_CASE("decoder step zero start and attention") {
  Model m = toy_model();
  Graph g;
  auto enc = m.encode(g, {"return", "x", "now"});
  auto st0 = m.initial_state(g, enc);
  auto st = m.decoder_step(g, m.zero_action(g), st0, m.parent_feed(g, std::nullopt, std::nullopt), enc);
  for (double x : g.values(st.s)) CHECK(std::isfinite(x));
  CHECK(std::abs(sum(g.value(st.attention)) - 1.0) < 1e-9);
  for (double x : g.values(m.parent_feed(g, std::nullopt, std::nullopt))) CHECK(x == 0.0);
}

TEST_CASE("decoder step gradients") {
  Model m = toy_model(5);
  auto rep = check_gradients(m.params(), [&](Graph& g) {
    auto enc = m.encode(g, {"define", "g", "of", "a"});
    auto st = m.initial_state(g, enc);
    st = m.decoder_step(g, m.zero_action(g), st, m.parent_feed(g, std::nullopt, std::nullopt), enc);
    FrontierField f{testsupport::toy_grammar().constructor("Try").id, 0};
    auto st2 = m.decoder_step(g, m.action_embedding(g, Action::apply(f.constructor)), st,
                              m.parent_feed(g, f, st.s), enc);
    std::vector<double> w(g.size(st2.s));
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(1.0 + static_cast<double>(i));
    return g.dot(g.constant(w), st2.s);
  });
  CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("token embeddings receive gradient through the encoder") {
  Model m = toy_model(6);
  const auto& inst = testsupport::toy_corpus()[2];
  auto rep = check_gradients(
      m.params(),
      [&](Graph& g) { return sequence_nll(g, m, inst.src, inst.ast, fixed_order_assignment(inst.ast, FixedOrder::LeftToRight)); },
      1e-4, [](const std::string& n) { return n == "src_embed"; });
  CHECK(rep.max_rel_error < 1e-4);
  CHECK(rep.analytic_norm > 0.0);
}

TEST_CASE("ApplyConstr distribution") {
  const Grammar& toy = testsupport::toy_grammar();

  SUBCASE("a single legal constructor gets probability one") {
    Grammar g = parse_grammar("stmt = Pass()");
    Corpus c = {{{"x"}, make_node(g, "Pass"), "pass"}};
    Model m(g, testsupport::micro_config(g, c), 1);
    Graph gr;
    auto lp = gr.values(m.apply_constr_log_probs(gr, gr.zeros(16), field_slot(g, std::nullopt)));
    auto p = probs_from_log(lp);
    CHECK(p[m.constructor_index(0)] == 1.0);
    CHECK(sum(p) == 1.0);
  }
  SUBCASE("zero output weights give uniform mass over legal outcomes") {
    Model m = toy_model();
    zero(m, "ctor_out_W");
    Graph gr;
    std::mt19937_64 rng(1);
    std::vector<double> s(16);
    for (double& x : s) x = std::uniform_real_distribution<double>(-1, 1)(rng);
    // Try.body is a stmt* field: five statement constructors plus Reduce
    auto p = probs_from_log(gr.values(m.apply_constr_log_probs(gr, gr.constant(s), slot_of(toy, "Try", 0))));
    for (const auto* c : toy.constructors_of_type("stmt")) CHECK(p[m.constructor_index(c->id)] == doctest::Approx(1.0 / 6));
    CHECK(p[Model::kReduceConstructor] == doctest::Approx(1.0 / 6));
    for (const auto* c : toy.constructors_of_type("expr")) CHECK(p[m.constructor_index(c->id)] == 0.0);
    CHECK(p[0] == 0.0);
    // Call.func is Single: no Reduce
    auto q = probs_from_log(gr.values(m.apply_constr_log_probs(gr, gr.constant(s), slot_of(toy, "Call", 0))));
    CHECK(q[Model::kReduceConstructor] == 0.0);
    CHECK(q[m.constructor_index(toy.constructor("Name").id)] == doctest::Approx(0.25));
  }
  SUBCASE("primitive frontier is rejected") {
    Model m = toy_model();
    Graph gr;
    CHECK_FALSE(thrown<Error>([&] { m.token_head(gr, gr.zeros(16), m.encode(gr, {"x"}), slot_of(toy, "Call", 0)); }).empty());
  }
}

TEST_CASE("GenToken mixture endpoints") {
  const Grammar& toy = testsupport::toy_grammar();
  FieldSlot name_slot = slot_of(toy, "Name", 0);

  SUBCASE("p_gen = 1 gives the vocabulary softmax") {
    Model m = toy_model();
    zero(m, "gen_W");
    m.params().get("gen_b").data()[0] = 60.0;
    Graph g;
    auto enc = m.encode(g, {"qqq", "f"});
    std::vector<double> s(16, 0.3);
    auto head = m.token_head(g, g.constant(s), enc, name_slot);
    CHECK(g.scalar_value(head.p_gen) == 1.0);
    auto pv = g.values(head.p_vocab);
    auto dist = m.token_distribution(g, head, enc);
    for (std::size_t i = 1; i < pv.size(); ++i) CHECK(dist[i - 1].second == pv[i]);
    CHECK(dist.back().first == "qqq");
    CHECK(dist.back().second == 0.0);
    CHECK(pv[0] == 0.0);                   // <pad>
    CHECK(pv[Model::kReduceToken] == 0.0);  // Single field
  }
  SUBCASE("p_gen = 0 copies the only source token") {
    Model m = toy_model();
    zero(m, "gen_W");
    m.params().get("gen_b").data()[0] = -800.0;
    Graph g;
    auto enc = m.encode(g, {"e"});
    auto head = m.token_head(g, g.zeros(16), enc, name_slot);
    CHECK(g.scalar_value(head.p_gen) == 0.0);
    std::map<std::string, double> dist;
    for (auto& [tok, p] : m.token_distribution(g, head, enc)) dist[tok] += p;
    CHECK(dist["e"] == 1.0);
    CHECK(g.scalar_value(m.token_log_prob(g, head, enc, "e")) == 0.0);
  }
  SUBCASE("copy mass aggregates over repeated surface tokens") {
    Model m = toy_model();
    zero(m, "copy_W");
    zero(m, "gen_W");
    m.params().get("gen_b").data()[0] = -800.0;
    Graph g;
    auto enc = m.encode(g, {"a", "b", "a", "a"});
    auto head = m.token_head(g, g.zeros(16), enc, name_slot);
    CHECK(std::exp(g.scalar_value(m.token_log_prob(g, head, enc, "a"))) == doctest::Approx(0.75));
  }
}

TEST_CASE("selector scores") {
  const Grammar& toy = testsupport::toy_grammar();
  Model m = toy_model();
  std::size_t handler = toy.constructor("ExceptHandler").id;

  SUBCASE("identical field embeddings give identical scores") {
    auto& fe = m.params().get("field_embed");
    for (const auto& f : toy.constructor(handler).fields)
      for (std::size_t c = 0; c < fe.cols(); ++c) fe.at(f.global_id + 1, c) = 0.25 * static_cast<double>(c);
    Graph g;
    auto s = g.values(m.selector_scores(g, g.constant(std::vector<double>(16, 0.1)), handler));
    REQUIRE(s.size() == 3);
    CHECK(s[0] == s[1]);
    CHECK(s[1] == s[2]);
  }
  SUBCASE("W2 = 0 zeroes every score") {
    zero(m, "sel_W2");
    Graph g;
    for (double x : g.values(m.selector_scores(g, g.constant(std::vector<double>(16, 0.4)), handler))) CHECK(x == 0.0);
  }
  SUBCASE("fewer than two fields") {
    Graph g;
    CHECK_FALSE(thrown<Error>([&] { m.selector_scores(g, g.zeros(16), toy.constructor("Name").id); }).empty());
  }
  SUBCASE("gradients of W1, W2 and of the chain-rule log probability") {
    auto rep = check_gradients(
        m.params(),
        [&](Graph& g) {
          std::vector<double> s(16);
          for (std::size_t i = 0; i < 16; ++i) s[i] = std::cos(static_cast<double>(i));
          Var scores = m.selector_scores(g, g.constant(s), handler);
          return m.order_log_prob(g, scores, {2, 0, 1});
        },
        1e-4, [](const std::string& n) { return n.rfind("sel_", 0) == 0 || n == "field_embed" || n == "ctor_embed"; });
    CHECK(rep.max_rel_error < 1e-4);
    CHECK(rep.analytic_norm > 0.0);
  }
}

TEST_CASE("selector distribution values") {
  Graph g;
  auto p = g.values(g.softmax(g.constant({0.7, 0.7, 0.7})));
  for (double x : p) CHECK(x == doctest::Approx(1.0 / 3).epsilon(1e-15));
  auto q = g.values(g.softmax(g.constant({std::log(2.0), 0.0})));
  CHECK(q[0] == doctest::Approx(2.0 / 3).epsilon(1e-15));
  CHECK(q[1] == doctest::Approx(1.0 / 3).epsilon(1e-15));
}

TEST_CASE("sample_order") {
  std::mt19937_64 rng(12);
  SUBCASE("two equiprobable fields") {
    std::vector<double> p = {0.5, 0.5};
    for (int i = 0; i < 20; ++i) CHECK(std::exp(sample_order(p, rng).log_prob) == doctest::Approx(0.5));
  }
  SUBCASE("a single field") {
    std::vector<double> p = {1.0};
    auto s = sample_order(p, rng);
    CHECK(s.order == std::vector<std::size_t>{0});
    CHECK(s.log_prob == 0.0);
  }
  SUBCASE("invariants over random distributions") {
    std::uniform_real_distribution<double> u(0.01, 1.0);
    for (int trial = 0; trial < 500; ++trial) {
      std::size_t m = 2 + trial % 4;
      std::vector<double> p(m);
      for (double& x : p) x = u(rng);
      double z = sum(p);
      for (double& x : p) x /= z;
      auto s = sample_order(p, rng);
      CHECK(is_permutation_of_iota(s.order, m));
      CHECK(std::abs(s.log_prob - sum(s.per_step_log_probs)) < 1e-9);
      CHECK(s.log_prob <= 0.0);
      CHECK(std::abs(s.log_prob - order_log_prob(p, s.order)) < 1e-12);
      CHECK(std::abs(std::exp(s.log_prob) - chain_prob(p, s.order)) < 1e-12);
      auto gr = greedy_order(p);
      // per-step property: at every draw greedy takes the largest remaining mass,
      // so its conditional is at least the sampled one's when the prefixes agree
      for (std::size_t i = 0; i < m && s.order[i] == gr.order[i]; ++i)
        CHECK(gr.per_step_log_probs[i] >= s.per_step_log_probs[i] - 1e-15);
      if (s.order != gr.order) {
        std::size_t i = 0;
        while (s.order[i] == gr.order[i]) ++i;
        CHECK(gr.per_step_log_probs[i] >= s.per_step_log_probs[i]);
      }
    }
  }
  SUBCASE("fixed seed is deterministic") {
    std::vector<double> p = {0.2, 0.3, 0.5};
    std::mt19937_64 a(4), b(4);
    for (int i = 0; i < 50; ++i) CHECK(sample_order(p, a).order == sample_order(p, b).order);
  }
}

TEST_CASE("greedy_order") {
  std::vector<double> p = {0.2, 0.5, 0.3};
  auto gr = greedy_order(p);
  CHECK(gr.order == std::vector<std::size_t>{1, 2, 0});
  // exhaustive enumeration: here the stepwise argmax is also the global argmax
  std::vector<std::size_t> perm = {0, 1, 2}, best;
  double best_p = -1.0;
  do {
    double q = chain_prob(p, perm);
    if (q > best_p) {
      best_p = q;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  CHECK(best == gr.order);
  CHECK(std::exp(gr.log_prob) == doctest::Approx(best_p).epsilon(1e-14));

  std::vector<double> flat = {0.25, 0.25, 0.25, 0.25};
  CHECK(greedy_order(flat).order == std::vector<std::size_t>{0, 1, 2, 3});
}

TEST_CASE("sequence_nll") {
  SUBCASE("single step with zero output weights costs ln K") {
    Grammar g = parse_grammar("stmt = Pass() | Break() | Continue()");
    Corpus c = {{{"x"}, make_node(g, "Break"), "break"}};
    Model m(g, testsupport::micro_config(g, c), 2);
    zero(m, "ctor_out_W");
    Graph gr;
    CHECK(gr.scalar_value(sequence_nll(gr, m, {"x"}, c[0].ast, {})) == doctest::Approx(std::log(3.0)).epsilon(1e-14));
  }
  SUBCASE("identity orders reproduce plain pre-order teacher forcing") {
    Model m = toy_model(8);
    for (const auto& inst : testsupport::toy_corpus()) {
      auto l2r = fixed_order_assignment(inst.ast, FixedOrder::LeftToRight);
      Graph g;
      ForcedRun run = teacher_force(g, m, inst.src, inst.ast, fixed_orders(l2r));
      auto naive = testsupport::naive_preorder(inst.ast, m.grammar());
      REQUIRE(run.trace.size() == naive.size());
      for (std::size_t t = 0; t < naive.size(); ++t) CHECK(run.trace[t].action == naive[t]);
      Graph g2;
      CHECK(g.scalar_value(run.nll) == g2.scalar_value(sequence_nll(g2, m, inst.src, linearize(inst.ast, m.grammar(), l2r))));
    }
    // the selector is not part of the MLE graph
    m.params().zero_grad();
    Graph g;
    const auto& inst = testsupport::toy_corpus()[3];
    g.backward(sequence_nll(g, m, inst.src, inst.ast, fixed_order_assignment(inst.ast, FixedOrder::LeftToRight)));
    for (const char* n : {"sel_W1", "sel_b1", "sel_W2"})
      for (double x : m.params().get(n).grad()) CHECK(x == 0.0);
  }
  SUBCASE("permuted orders change the trace but stay finite") {
    Model m = toy_model(9);
    const auto& inst = testsupport::toy_corpus()[3];
    auto l2r = fixed_order_assignment(inst.ast, FixedOrder::LeftToRight);
    auto r2l = fixed_order_assignment(inst.ast, FixedOrder::RightToLeft);
    CHECK(linearize(inst.ast, m.grammar(), l2r) != linearize(inst.ast, m.grammar(), r2l));
    Graph a, b;
    double la = a.scalar_value(sequence_nll(a, m, inst.src, inst.ast, l2r));
    double lb = b.scalar_value(sequence_nll(b, m, inst.src, inst.ast, r2l));
    CHECK(std::isfinite(la));
    CHECK(std::isfinite(lb));
    CHECK(la != lb);
  }
  SUBCASE("full-batch loss decreases for 50 steps") {
    const Corpus& corpus = testsupport::toy_corpus();
    Model m = toy_model(10);
    AdamConfig adam;
    adam.learning_rate = 0.005;
    double prev = INFINITY;
    for (int step = 0; step < 50; ++step) {
      m.params().zero_grad();
      double loss = 0.0;
      for (std::size_t i = 0; i < 5; ++i) {
        Graph g;
        Var nll = sequence_nll(g, m, corpus[i].src, corpus[i].ast,
                               fixed_order_assignment(corpus[i].ast, FixedOrder::LeftToRight));
        loss += g.scalar_value(nll);
        g.backward(nll);
      }
      CHECK(loss < prev);
      prev = loss;
      m.params().adam_step(adam);
    }
  }
  SUBCASE("end-to-end gradient on a micro corpus") {
    Model m = toy_model(11);
    const Corpus& corpus = testsupport::toy_corpus();
    std::mt19937_64 rng(3);
    auto o1 = uniform_order_assignment(corpus[3].ast, rng);
    auto o2 = uniform_order_assignment(corpus[5].ast, rng);
    auto rep = check_gradients(m.params(), [&](Graph& g) {
      return g.add(sequence_nll(g, m, corpus[3].src, corpus[3].ast, o1),
                   sequence_nll(g, m, corpus[5].src, corpus[5].ast, o2));
    });
    CHECK(rep.max_rel_error < 1e-4);
    CHECK(rep.checked == m.params().scalar_count());
  }
}

TEST_CASE("every head is a distribution over 100 random parameter settings") {
  const Grammar& toy = testsupport::toy_grammar();
  const Corpus& corpus = testsupport::toy_corpus();
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Model m = toy_model(seed);
    const auto& inst = corpus[seed % corpus.size()];
    std::mt19937_64 rng(seed);
    Graph g;
    std::vector<Var> scores_seen;
    OrderHook hook = [&](const AstNode& node, std::size_t, const DecoderState& st) {
      Var scores = m.selector_scores(g, st.s, node.constructor);
      scores_seen.push_back(scores);
      auto p = g.values(g.softmax(scores));
      return sample_order(p, rng).order;
    };
    ForcedRun run = teacher_force(g, m, inst.src, inst.ast, hook);
    auto enc = m.encode(g, inst.src);
    for (std::size_t t = 0; t < run.trace.size(); ++t) {
      FieldSlot slot = field_slot(toy, run.trace[t].frontier);
      Var s = run.states[t].s;
      if (!slot.primitive) {
        auto p = probs_from_log(g.values(m.apply_constr_log_probs(g, s, slot)));
        auto mask = m.constructor_mask(slot);
        CHECK(std::abs(sum(p) - 1.0) < 1e-9);
        for (std::size_t i = 0; i < p.size(); ++i)
          if (mask[i]) CHECK(p[i] == 0.0);
      } else {
        auto head = m.token_head(g, s, enc, slot);
        CHECK(std::abs(sum(g.value(head.p_vocab)) - 1.0) < 1e-9);
        CHECK(std::abs(sum(g.value(head.p_copy)) - 1.0) < 1e-9);
        CHECK(g.value(head.p_vocab)[0] == 0.0);
        double total = 0.0;
        for (auto& [_, p] : m.token_distribution(g, head, enc)) {
          CHECK(p >= 0.0);
          total += p;
        }
        CHECK(std::abs(total - 1.0) < 1e-9);
      }
    }
    for (Var sc : scores_seen) {
      CHECK(std::abs(sum(g.value(g.softmax(sc))) - 1.0) < 1e-9);
      std::vector<bool> used(g.size(sc), false);
      for (std::size_t draw = 0; draw + 1 < used.size(); ++draw) {
        used[draw] = true;
        auto q = g.values(g.masked_softmax(sc, used));
        CHECK(std::abs(sum(q) - 1.0) < 1e-9);
        for (std::size_t i = 0; i <= draw; ++i) CHECK(q[i] == 0.0);
      }
    }
  }
}

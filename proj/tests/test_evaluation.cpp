#include <doctest.h>

#include <cmath>

#include "branchsel/error.hpp"
#include "branchsel/evaluation.hpp"
#include "branchsel/training.hpp"
#include "branchsel/transition.hpp"
#include "support.hpp"

using namespace branchsel;
using namespace branchsel::nn;
using testsupport::thrown;

namespace {

Model toy_model(std::uint64_t seed) {
  const Grammar& g = testsupport::toy_grammar();
  return Model(g, testsupport::micro_config(g, testsupport::toy_corpus()), seed);
}

std::string pad(const std::string& s, std::size_t w) { return s + std::string(w - s.size(), ' '); }

// Actions owned directly by multi-branch nodes, counted off the tree.
std::size_t immediate_child_actions(const AstNode& n, const Grammar& g) {
  std::size_t total = 0;
  const Constructor& c = g.constructor(n.constructor);
  for (std::size_t i = 0; i < c.fields.size(); ++i) {
    const FieldDecl& f = c.fields[i];
    const FieldValue& v = n.fields[i];
    if (c.fields.size() >= 2) {
      if (g.is_primitive(f.type_name)) {
        for (const auto& tok : v.tokens) total += split_units(tok).size();
        total += f.cardinality != Cardinality::Single;
      } else {
        total += v.nodes.size();
        total += f.cardinality == Cardinality::Sequential ||
                 (f.cardinality == Cardinality::Optional && v.nodes.empty());
      }
    }
    for (const auto& child : v.nodes) total += immediate_child_actions(child, g);
  }
  return total;
}

std::vector<InstanceResult> fixture_results() {
  std::vector<InstanceResult> r;
  auto add = [&](std::size_t mb, bool ok) {
    InstanceResult x;
    x.index = r.size();
    x.decoded = true;
    x.correct = ok;
    x.multi_branch = mb;
    r.push_back(x);
  };
  add(0, true);
  add(0, true);
  add(0, false);
  add(1, true);
  add(6, false);
  add(9, false);
  return r;
}

}  // namespace

TEST_CASE("exact match is whitespace-insensitive only") {
  CHECK(exact_match("f ( x )", "f  (\tx )"));
  CHECK(exact_match("  pass ", "pass"));
  CHECK_FALSE(exact_match("f ( x )", "f ( y )"));
  CHECK_FALSE(exact_match("f(x)", "f ( x )"));
}

TEST_CASE("corpus statistics") {
  SUBCASE("toy fixture, counted by hand") {
    // pass | return x | f ( x , y ) | try ... end | def g ( a ) ... end | print ( " hello world " )
    // nodes 1 + 2 + 5 + 6 + 4 + 4, multi-branch 0 + 0 + 1 + 2 + 2 + 1
    CorpusStats s = corpus_stats(testsupport::toy_corpus());
    CHECK(s.instances == 6);
    CHECK(s.nodes == 22);
    CHECK(s.multi_branch_nodes == 6);
    CHECK(s.asts_with_multi_branch == 4);
    CHECK(s.pct_asts_with_multi_branch == 66.67);
    CHECK(s.pct_nodes_multi_branch == 27.27);
    CHECK(s.histogram.at("0") == 2);
    CHECK(s.histogram.at("1") == 2);
    CHECK(s.histogram.at("2") == 2);
    CHECK(s.histogram.at(">=6") == 0);
    std::size_t sum = 0;
    for (const auto& [_, n] : s.histogram) sum += n;
    CHECK(sum == s.instances);

    std::string expected = pad("instances", 34) + "6\n" + pad("AST nodes", 34) + "22\n" +
                           pad("ASTs with multi-branch nodes (%)", 34) + "66.67\n" +
                           pad("multi-branch AST nodes (%)", 34) + "27.27\n\n" +
                           "#multi-branch          0       1       2       3       4       5     >=6\n" +
                           "#instances             2       2       2       0       0       0       0\n";
    CHECK(s.to_text() == expected);
    auto j = s.to_json();
    CHECK(j.at("histogram").at("2") == 2);
    CHECK(j.at("pct_nodes_multi_branch") == 27.27);
  }
  SUBCASE("a lone leaf") {
    CorpusStats s = corpus_stats(std::vector<AstNode>{make_node(testsupport::toy_grammar(), "Pass")});
    CHECK(s.nodes == 1);
    CHECK(s.multi_branch_nodes == 0);
    CHECK(s.pct_asts_with_multi_branch == 0.0);
    CHECK(s.histogram.at("0") == 1);
  }
  SUBCASE("empty corpus") { CHECK_FALSE(thrown<Error>([] { corpus_stats(std::vector<AstNode>{}); }).empty()); }
  CHECK(bucket_key(0) == "0");
  CHECK(bucket_key(5) == "5");
  CHECK(bucket_key(6) == ">=6");
  CHECK(bucket_key(40) == ">=6");
}

TEST_CASE("bucketed accuracy") {
  BucketAccuracy acc = bucketed_accuracy(fixture_results());
  CHECK(acc.total == 6);
  CHECK(acc.correct == 3);
  CHECK(acc.accuracy == 0.5);
  CHECK(acc.buckets.at("0").accuracy.value() == doctest::Approx(2.0 / 3));
  CHECK(acc.buckets.at("1").accuracy.value() == 1.0);
  CHECK(acc.buckets.at(">=6").total == 2);
  CHECK(acc.buckets.at(">=6").accuracy.value() == 0.0);
  CHECK_FALSE(acc.buckets.at("3").accuracy.has_value());
  // weighted mean of the buckets is the aggregate
  double weighted = 0.0;
  std::size_t n = 0;
  for (const auto& [_, c] : acc.buckets) {
    n += c.total;
    if (c.accuracy) weighted += *c.accuracy * c.total;
  }
  CHECK(n == acc.total);
  CHECK(weighted / n == doctest::Approx(acc.accuracy));
  CHECK(acc.to_json().at("buckets").at("3").at("accuracy").is_null());

  std::string expected =
      "#multi-branch          0       1       2       3       4       5     >=6      all\n"
      "#instances             3       1       0       0       0       0       2        6\n"
      "L2R                66.67  100.00     N/A     N/A     N/A     N/A    0.00    50.00\n";
  CHECK(bucket_table({{"L2R", acc}}) == expected);
}

TEST_CASE("disagreement") {
  NodeFlags a = {{{0, 0}, true}, {{0, 1}, false}};
  NodeFlags b = {{{0, 0}, false}, {{0, 1}, true}};
  Disagreement self = order_disagreement(a, a);
  CHECK(self.only_a == 0);
  CHECK(self.only_b == 0);
  CHECK(self.pct_only_a == 0.0);
  Disagreement d = order_disagreement(a, b);
  CHECK(d.nodes == 2);
  CHECK(d.pct_only_a == 50.0);
  CHECK(d.pct_only_b == 50.0);
  CHECK(d.pct_only_a + d.pct_only_b <= 100.0);
  NodeFlags c = {{{0, 0}, true}, {{1, 4}, true}};
  CHECK_FALSE(thrown<Error>([&] { order_disagreement(a, c); }).empty());
  CHECK(d.to_json().at("unit") == "node");

  std::string expected =
      "Multi-branch nodes handled correctly by only one model (unit: node, N = 2)\n"
      "Model            Percentage\n"
      "Only RL          50.00\n"
      "Only L2R         50.00\n";
  CHECK(disagreement_table("RL", "L2R", d) == expected);

  Model m = toy_model(3);
  Disagreement same = order_disagreement_report(m, OrderPolicy::RL, m, OrderPolicy::RL, testsupport::toy_corpus());
  CHECK(same.nodes == 6);
  CHECK(same.only_a == 0);
  CHECK(same.only_b == 0);
}

TEST_CASE("child prediction accuracy") {
  const Corpus& corpus = testsupport::toy_corpus();
  const Grammar& g = testsupport::toy_grammar();
  Model m = toy_model(4);
  std::size_t expected = 0;
  for (const auto& inst : corpus) expected += immediate_child_actions(inst.ast, g);
  for (auto policy : {OrderPolicy::L2R, OrderPolicy::R2L, OrderPolicy::RAND, OrderPolicy::RL}) {
    ChildAccuracy acc = child_prediction_accuracy(m, corpus, policy, 7);
    CHECK(acc.total == expected);
    CHECK(acc.node_flags.size() == 6);
    REQUIRE(acc.accuracy.has_value());
    CHECK(*acc.accuracy >= 0.0);
    CHECK(*acc.accuracy <= 1.0);
  }
  auto r1 = child_prediction_accuracy(m, corpus, OrderPolicy::RAND, 7);
  auto r2 = child_prediction_accuracy(m, corpus, OrderPolicy::RAND, 7);
  CHECK(r1.correct == r2.correct);
  CHECK(r1.node_flags == r2.node_flags);

  Corpus flat = {corpus[0], corpus[1]};
  auto none = child_prediction_accuracy(m, flat, OrderPolicy::L2R);
  CHECK(none.total == 0);
  CHECK_FALSE(none.accuracy.has_value());
  CHECK(none.to_json().at("accuracy").is_null());
}

TEST_CASE("decoding") {
  const Corpus& corpus = testsupport::toy_corpus();
  const Grammar& g = testsupport::toy_grammar();

  SUBCASE("beam search never scores below greedy and yields valid trees") {
    for (std::uint64_t seed = 1; seed <= 6; ++seed) {
      Model m = toy_model(seed);
      // a little training so that decoding terminates on something tree-like
      TrainConfig cfg;
      cfg.pretrain_epochs = 3;
      cfg.learning_rate = 0.01;
      cfg.seed = seed;
      Trainer(m, cfg).pretrain(corpus);
      for (auto policy : {OrderPolicy::L2R, OrderPolicy::RAND, OrderPolicy::RL}) {
        for (const auto& inst : corpus) {
          DecodeOptions opt;
          opt.order_policy = policy;
          opt.max_steps = 60;
          opt.seed = seed;
          DecodeResult greedy = greedy_decode(m, inst.src, opt);
          DecodeResult beam = beam_decode(m, inst.src, opt);
          if (greedy.ast) {
            REQUIRE(beam.ast.has_value());
            CHECK(beam.log_prob >= greedy.log_prob);
          }
          opt.beam_size = 1;
          DecodeResult one = beam_decode(m, inst.src, opt);
          CHECK(one.trace == greedy.trace);
          for (const DecodeResult* r : {&greedy, &beam}) {
            if (!r->ast) continue;
            CHECK_NOTHROW(validate_ast(*r->ast, g));
            CHECK(parse_actions(r->trace, g) == *r->ast);
            CHECK(linearize(*r->ast, g, r->orders) == r->trace);
            CHECK(r->log_prob <= 0.0);
            // the beam score is the teacher-forced log likelihood of its trace
            Graph gr(false);
            CHECK(std::abs(-gr.scalar_value(sequence_nll(gr, m, inst.src, r->trace)) - r->log_prob) < 1e-8);
            if (policy == OrderPolicy::L2R) CHECK(r->orders == fixed_order_assignment(*r->ast, FixedOrder::LeftToRight));
          }
        }
      }
    }
  }
  SUBCASE("a grammar of one leaf decodes it") {
    Grammar leaf = parse_grammar("stmt = Pass()");
    Corpus c = {{{"x"}, make_node(leaf, "Pass"), "pass"}};
    Model m(leaf, testsupport::micro_config(leaf, c), 1);
    DecodeResult r = beam_decode(m, {"anything", "at", "all"}, DecodeOptions{});
    REQUIRE(r.ast.has_value());
    CHECK(r.ast->constructor == leaf.constructor("Pass").id);
    CHECK(r.trace.size() == 1);
    CHECK(r.log_prob == 0.0);
  }
  SUBCASE("step bound and options") {
    Model m = toy_model(2);
    DecodeOptions opt;
    opt.max_steps = 0;
    CHECK_FALSE(beam_decode(m, {"x"}, opt).ast.has_value());
    opt.max_steps = 50;
    opt.beam_size = 0;
    CHECK_FALSE(thrown<Error>([&] { beam_decode(m, {"x"}, opt); }).empty());
    CHECK(default_max_steps(corpus, g) > 0);
  }
  SUBCASE("evaluate_corpus on a memorized fixture") {
    Model m = toy_model(9);
    TrainConfig cfg;
    cfg.pretrain_epochs = 1;
    cfg.rl_epochs = 120;
    cfg.learning_rate = 0.01;
    Trainer(m, cfg).train_baseline(corpus, OrderPolicy::L2R);
    DecodeOptions opt;
    opt.order_policy = OrderPolicy::L2R;
    auto results = evaluate_corpus(m, corpus, testsupport::toy_templates(), opt);
    REQUIRE(results.size() == corpus.size());
    for (std::size_t i = 0; i < results.size(); ++i) {
      CHECK(results[i].decoded);
      CHECK(results[i].correct);
      CHECK(results[i].predicted == corpus[i].code);
      CHECK(results[i].multi_branch == multi_branch_nodes(corpus[i].ast).size());
    }
    CHECK(bucketed_accuracy(results).accuracy == 1.0);
  }
}

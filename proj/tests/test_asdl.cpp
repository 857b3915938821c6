#include <doctest.h>

#include "branchsel/asdl.hpp"
#include "branchsel/error.hpp"
#include "support.hpp"

using namespace branchsel;
using testsupport::contains;
using testsupport::thrown;

namespace {

const char* kHandlerGrammar = R"(
primitive identifier
stmt = Pass()
excepthandler = ExceptHandler(expr? type, expr? name, stmt* body)
expr = Name(identifier id)
)";

}  // namespace

TEST_CASE("ExceptHandler fields keep their written order and cardinalities") {
  Grammar g = parse_grammar(kHandlerGrammar);
  const Constructor& c = g.constructor("ExceptHandler");
  REQUIRE(c.fields.size() == 3);
  CHECK(c.fields[0].name == "type");
  CHECK(c.fields[1].name == "name");
  CHECK(c.fields[2].name == "body");
  CHECK(c.fields[0].cardinality == Cardinality::Optional);
  CHECK(c.fields[1].cardinality == Cardinality::Optional);
  CHECK(c.fields[2].cardinality == Cardinality::Sequential);
  for (std::size_t i = 0; i < 3; ++i) CHECK(c.fields[i].index == i);
  CHECK(c.result_type == "excepthandler");
  CHECK(c.multi_branch());
  CHECK_FALSE(g.constructor("Pass").multi_branch());
  CHECK(g.is_primitive("identifier"));
  CHECK(g.is_composite("expr"));
  CHECK(g.root_type() == "stmt");
}

TEST_CASE("degenerate and inconsistent grammars are rejected") {
  CHECK(contains(thrown<GrammarError>([] { parse_grammar(""); }), "no declarations"));
  CHECK(contains(thrown<GrammarError>([] { parse_grammar("# only a comment\n"); }), "no declarations"));
  CHECK(contains(thrown<GrammarError>([] { parse_grammar("stmt = Pass() | Pass()"); }), "duplicate constructor"));
  CHECK(contains(thrown<GrammarError>([] { parse_grammar("stmt = Return(expr value)"); }), "unresolved type"));
  CHECK(contains(thrown<GrammarError>([] { parse_grammar("stmt = Pass()\nstmt = Break()"); }), "declared twice"));
  CHECK(contains(thrown<GrammarError>([] { parse_grammar("primitive x\nx = A()"); }), "declared twice"));
  CHECK(contains(thrown<GrammarError>([] { parse_grammar("stmt = F(stmt a, stmt a)"); }), "duplicate field"));
}

TEST_CASE("syntax errors carry line and column") {
  try {
    parse_grammar("stmt = Pass()\nexpr = Name(identifier id\n");
    FAIL("expected a syntax error");
  } catch (const GrammarError& e) {
    CHECK(e.line() >= 2);
    CHECK(e.column() >= 1);
    CHECK(contains(e.what(), "line "));
  }
  try {
    parse_grammar("stmt = Pass() $");
    FAIL("expected a lexical error");
  } catch (const GrammarError& e) {
    CHECK(e.line() == 1);
    CHECK(e.column() == 15);
  }
}

TEST_CASE("continuation lines and comments") {
  Grammar g = parse_grammar("# header\nstmt = Pass()  # trailing\n     | Break()\n\n     | Return(stmt? value)\n");
  auto ctors = g.constructors_of_type("stmt");
  REQUIRE(ctors.size() == 3);
  CHECK(ctors[2]->name == "Return");
}

TEST_CASE("constructors_of_type follows declaration order") {
  Grammar g = parse_grammar("primitive identifier\nstmt = Pass() | Return(expr value)\nexpr = Name(identifier id)");
  auto stmts = g.constructors_of_type("stmt");
  REQUIRE(stmts.size() == 2);
  CHECK(stmts[0]->name == "Pass");
  CHECK(stmts[1]->name == "Return");
  auto exprs = g.constructors_of_type("expr");
  REQUIRE(exprs.size() == 1);
  CHECK(exprs[0]->name == "Name");
  CHECK(contains(thrown<GrammarError>([&] { g.constructors_of_type("identifier"); }), "primitive"));
  CHECK(contains(thrown<GrammarError>([&] { g.constructors_of_type("nope"); }), "unknown type"));
}

TEST_CASE("constructor ids and field global ids are dense") {
  const Grammar& g = testsupport::toy_grammar();
  std::size_t next_field = 0;
  for (std::size_t i = 0; i < g.constructors().size(); ++i) {
    const Constructor& c = g.constructors()[i];
    CHECK(c.id == i);
    for (const auto& f : c.fields) CHECK(f.global_id == next_field++);
  }
  CHECK(g.field_count() == next_field);
}

TEST_CASE("print/parse round trip") {
  for (const char* text : {kHandlerGrammar, "stmt = Pass()", "primitive s\nt = A(s? x, s* y, t* z) | B()"}) {
    Grammar g = parse_grammar(text);
    Grammar back = parse_grammar(print_grammar(g));
    CHECK(back == g);
    CHECK(print_grammar(back) == print_grammar(g));
  }
  const Grammar& toy = testsupport::toy_grammar();
  CHECK(parse_grammar(print_grammar(toy)) == toy);
}

TEST_CASE("every composite field type has constructors") {
  const Grammar& g = testsupport::toy_grammar();
  for (const auto& c : g.constructors())
    for (const auto& f : c.fields)
      if (g.is_composite(f.type_name)) CHECK_FALSE(g.constructors_of_type(f.type_name).empty());
}

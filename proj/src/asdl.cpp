#include "branchsel/asdl.hpp"

#include <cctype>
#include <set>
#include <sstream>

#include "branchsel/error.hpp"

namespace branchsel {

std::string_view to_string(Cardinality c) {
  switch (c) {
    case Cardinality::Single:
      return "single";
    case Cardinality::Optional:
      return "optional";
    case Cardinality::Sequential:
      return "sequential";
  }
  return "?";
}

bool Grammar::is_composite(std::string_view type_name) const {
  return by_type_.find(type_name) != by_type_.end();
}

bool Grammar::is_primitive(std::string_view type_name) const {
  for (const auto& p : primitive_types_)
    if (p == type_name) return true;
  return false;
}

const std::string& Grammar::root_type() const {
  if (composite_types_.empty()) throw GrammarError("grammar has no composite types");
  return composite_types_.front();
}

const Constructor* Grammar::find_constructor(std::string_view name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : &constructors_[it->second];
}

const Constructor& Grammar::constructor(std::string_view name) const {
  const Constructor* c = find_constructor(name);
  if (c == nullptr) throw GrammarError("unknown constructor '" + std::string(name) + "'");
  return *c;
}

const std::vector<std::size_t>& Grammar::constructor_ids_of_type(std::string_view type_name) const {
  auto it = by_type_.find(type_name);
  if (it == by_type_.end()) {
    if (is_primitive(type_name))
      throw GrammarError("type '" + std::string(type_name) + "' is primitive and has no constructors");
    throw GrammarError("unknown type '" + std::string(type_name) + "'");
  }
  return it->second;
}

std::vector<const Constructor*> Grammar::constructors_of_type(std::string_view type_name) const {
  std::vector<const Constructor*> out;
  for (std::size_t id : constructor_ids_of_type(type_name)) out.push_back(&constructors_[id]);
  return out;
}

void Grammar::build_index() {
  by_name_.clear();
  by_type_.clear();
  field_count_ = 0;
  for (const auto& t : composite_types_) by_type_[t];
  for (std::size_t i = 0; i < constructors_.size(); ++i) {
    Constructor& c = constructors_[i];
    c.id = i;
    by_name_.emplace(c.name, i);
    by_type_[c.result_type].push_back(i);
    for (std::size_t f = 0; f < c.fields.size(); ++f) {
      c.fields[f].index = f;
      c.fields[f].global_id = field_count_++;
    }
  }
}

namespace {

struct Token {
  enum class Kind { Ident, Symbol, End } kind;
  std::string text;
  std::size_t line;
  std::size_t column;
};

// One logical declaration: the tokens of a line plus any `|` continuation lines.
class Lexer {
 public:
  explicit Lexer(std::string_view text) : text_(text) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    while (pos_ < text_.size()) {
      char ch = text_[pos_];
      if (ch == '#') {
        while (pos_ < text_.size() && text_[pos_] != '\n') advance();
      } else if (ch == '\n') {
        out.push_back({Token::Kind::Symbol, "\n", line_, col_});
        advance();
      } else if (std::isspace(static_cast<unsigned char>(ch))) {
        advance();
      } else if (std::isalpha(static_cast<unsigned char>(ch)) || ch == '_') {
        std::size_t line = line_, col = col_, start = pos_;
        while (pos_ < text_.size() &&
               (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
          advance();
        out.push_back({Token::Kind::Ident, std::string(text_.substr(start, pos_ - start)), line, col});
      } else if (std::string_view("=|(),?*").find(ch) != std::string_view::npos) {
        out.push_back({Token::Kind::Symbol, std::string(1, ch), line_, col_});
        advance();
      } else {
        throw GrammarError(std::string("unexpected character '") + ch + "'", line_, col_);
      }
    }
    out.push_back({Token::Kind::End, "", line_, col_});
    return out;
  }

 private:
  void advance() {
    if (text_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
  std::size_t col_ = 1;
};

class Parser {
 public:
  explicit Parser(std::vector<Token> tokens) : toks_(std::move(tokens)) {}

  void run(std::vector<std::string>& composite, std::vector<std::string>& primitive,
           std::vector<Constructor>& ctors) {
    skip_newlines();
    while (peek().kind != Token::Kind::End) {
      const Token& head = expect_ident("type name or 'primitive'");
      if (head.text == "primitive" && peek().kind == Token::Kind::Ident) {
        const Token& name = expect_ident("primitive type name");
        declare_type(name, primitive, composite);
        primitive.push_back(name.text);
        end_of_declaration();
        continue;
      }
      declare_type(head, primitive, composite);
      composite.push_back(head.text);
      expect_symbol("=");
      skip_continuations();
      if (is_symbol("|")) next();
      if (peek().kind != Token::Kind::Ident)
        throw GrammarError("composite type '" + head.text + "' has no constructors", peek().line,
                           peek().column);
      ctors.push_back(parse_constructor(head.text));
      while (true) {
        skip_continuations();
        if (!is_symbol("|")) break;
        next();
        skip_newlines();
        ctors.push_back(parse_constructor(head.text));
      }
      end_of_declaration();
    }
  }

 private:
  const Token& peek() const { return toks_[pos_]; }
  const Token& next() { return toks_[pos_++]; }
  bool is_symbol(std::string_view s) const {
    return peek().kind == Token::Kind::Symbol && peek().text == s;
  }

  [[noreturn]] void fail(const std::string& what) const {
    const Token& t = peek();
    std::string found = t.kind == Token::Kind::End ? "end of input"
                        : t.text == "\n"           ? "end of line"
                                                   : "'" + t.text + "'";
    throw GrammarError("expected " + what + ", found " + found, t.line, t.column);
  }

  const Token& expect_ident(const std::string& what) {
    if (peek().kind != Token::Kind::Ident) fail(what);
    return next();
  }

  void expect_symbol(std::string_view s) {
    if (!is_symbol(s)) fail("'" + std::string(s) + "'");
    next();
  }

  void skip_newlines() {
    while (is_symbol("\n")) next();
  }

  // A newline followed by `|` continues the current declaration.
  void skip_continuations() {
    std::size_t save = pos_;
    while (is_symbol("\n")) next();
    if (!is_symbol("|")) pos_ = save;
  }

  void end_of_declaration() {
    if (peek().kind == Token::Kind::End) return;
    if (!is_symbol("\n")) fail("end of declaration");
    skip_newlines();
  }

  void declare_type(const Token& name, const std::vector<std::string>& primitive,
                    const std::vector<std::string>& composite) {
    for (const auto& p : primitive)
      if (p == name.text)
        throw GrammarError("type '" + name.text + "' declared twice", name.line, name.column);
    for (const auto& c : composite)
      if (c == name.text)
        throw GrammarError("type '" + name.text + "' declared twice", name.line, name.column);
  }

  Constructor parse_constructor(const std::string& result_type) {
    Constructor c;
    c.name = expect_ident("constructor name").text;
    c.result_type = result_type;
    expect_symbol("(");
    if (!is_symbol(")")) {
      while (true) {
        FieldDecl f;
        f.type_name = expect_ident("field type").text;
        if (is_symbol("?")) {
          next();
          f.cardinality = Cardinality::Optional;
        } else if (is_symbol("*")) {
          next();
          f.cardinality = Cardinality::Sequential;
        }
        const Token& fname = expect_ident("field name");
        f.name = fname.text;
        for (const auto& prev : c.fields)
          if (prev.name == f.name)
            throw GrammarError("duplicate field '" + f.name + "' in constructor '" + c.name + "'",
                               fname.line, fname.column);
        f.index = c.fields.size();
        c.fields.push_back(std::move(f));
        if (is_symbol(",")) {
          next();
          continue;
        }
        break;
      }
    }
    expect_symbol(")");
    return c;
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
};

}  // namespace

Grammar parse_grammar(std::string_view text) {
  Grammar g;
  Parser parser(Lexer(text).run());
  parser.run(g.composite_types_, g.primitive_types_, g.constructors_);
  if (g.composite_types_.empty() && g.primitive_types_.empty())
    throw GrammarError("no declarations");
  if (g.composite_types_.empty()) throw GrammarError("grammar declares no composite types");

  std::set<std::string> seen;
  for (const auto& c : g.constructors_)
    if (!seen.insert(c.name).second)
      throw GrammarError("duplicate constructor name '" + c.name + "'");

  g.build_index();
  for (const auto& c : g.constructors_)
    for (const auto& f : c.fields)
      if (!g.is_composite(f.type_name) && !g.is_primitive(f.type_name))
        throw GrammarError("unresolved type '" + f.type_name + "' in field '" + c.name + "." +
                           f.name + "'");
  return g;
}

std::string print_grammar(const Grammar& g) {
  std::ostringstream out;
  for (const auto& p : g.primitive_types()) out << "primitive " << p << "\n";
  for (const auto& type : g.composite_types()) {
    out << type << " =";
    bool first = true;
    for (const Constructor* c : g.constructors_of_type(type)) {
      out << (first ? " " : "\n    | ") << c->name << "(";
      for (std::size_t i = 0; i < c->fields.size(); ++i) {
        const FieldDecl& f = c->fields[i];
        if (i > 0) out << ", ";
        out << f.type_name;
        if (f.cardinality == Cardinality::Optional) out << "?";
        if (f.cardinality == Cardinality::Sequential) out << "*";
        out << " " << f.name;
      }
      out << ")";
      first = false;
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace branchsel

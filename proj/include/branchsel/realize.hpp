#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "branchsel/asdl.hpp"
#include "branchsel/ast.hpp"

namespace branchsel {

/// Per-constructor surface templates, one line per constructor:
///
///     Handler := except <type> as <name>
///     Block := <body|;>
///
/// `<field>` is replaced by the realization of the field's children; for
/// sequential fields `<field|sep>` joins them with `sep` (default: a space).
class Templates {
 public:
  struct Piece {
    bool placeholder = false;
    std::string text;              // literal token, or field name
    std::size_t field = 0;         // placeholder only
    std::vector<std::string> sep;  // placeholder only; separator tokens
  };

  Templates() = default;
  static Templates parse(std::string_view text, const Grammar& g);

  bool contains(std::string_view constructor) const;
  const std::vector<Piece>& pieces(std::string_view constructor) const;

 private:
  std::map<std::string, std::vector<Piece>, std::less<>> by_ctor_;
};

/// Deterministic surface form: template output with whitespace collapsed.
std::string ast_to_code(const AstNode& ast, const Grammar& g, const Templates& templates);

/// Inverse of ast_to_code: backtracking parse of whitespace-separated code
/// against the templates, returning the first complete parse (constructors
/// tried in declaration order). Node ids are pre-order.
std::optional<AstNode> read_code(std::string_view code, const Grammar& g, const Templates& templates);

/// Collapse whitespace runs to single spaces and trim.
std::string canonicalize_whitespace(std::string_view s);

}  // namespace branchsel

#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace branchsel {

enum class Cardinality { Single, Optional, Sequential };

std::string_view to_string(Cardinality c);

struct FieldDecl {
  std::string name;
  std::string type_name;
  Cardinality cardinality = Cardinality::Single;
  std::size_t index = 0;  // position within the owning constructor
  std::size_t global_id = 0;

  bool operator==(const FieldDecl& other) const {
    return name == other.name && type_name == other.type_name &&
           cardinality == other.cardinality && index == other.index;
  }
};

struct Constructor {
  std::string name;
  std::string result_type;
  std::vector<FieldDecl> fields;
  std::size_t id = 0;  // declaration order across the whole grammar

  /// A constructor with two or more fields produces several branches whose
  /// expansion order is a free choice.
  bool multi_branch() const { return fields.size() >= 2; }

  bool operator==(const Constructor& other) const {
    return name == other.name && result_type == other.result_type && fields == other.fields;
  }
};

/// Immutable ASDL grammar: composite types with their constructors plus a set
/// of primitive (token-valued) types. The first declared composite type is
/// the root type of every AST.
class Grammar {
 public:
  Grammar() = default;

  const std::vector<std::string>& composite_types() const { return composite_types_; }
  const std::vector<std::string>& primitive_types() const { return primitive_types_; }
  const std::vector<Constructor>& constructors() const { return constructors_; }

  bool is_composite(std::string_view type_name) const;
  bool is_primitive(std::string_view type_name) const;
  const std::string& root_type() const;

  const Constructor& constructor(std::size_t id) const { return constructors_.at(id); }
  const Constructor& constructor(std::string_view name) const;
  const Constructor* find_constructor(std::string_view name) const;

  /// All constructors producing `type_name`, in declaration order. Throws for
  /// unknown and primitive types.
  std::vector<const Constructor*> constructors_of_type(std::string_view type_name) const;
  const std::vector<std::size_t>& constructor_ids_of_type(std::string_view type_name) const;

  /// Total number of (constructor, field) pairs; field global ids are dense in
  /// [0, field_count()).
  std::size_t field_count() const { return field_count_; }
  const FieldDecl& field(std::size_t constructor_id, std::size_t field_index) const {
    return constructors_.at(constructor_id).fields.at(field_index);
  }

  bool operator==(const Grammar& other) const {
    return composite_types_ == other.composite_types_ &&
           primitive_types_ == other.primitive_types_ && constructors_ == other.constructors_;
  }

 private:
  friend Grammar parse_grammar(std::string_view text);

  void build_index();

  std::vector<std::string> composite_types_;
  std::vector<std::string> primitive_types_;
  std::vector<Constructor> constructors_;
  std::map<std::string, std::size_t, std::less<>> by_name_;
  std::map<std::string, std::vector<std::size_t>, std::less<>> by_type_;
  std::size_t field_count_ = 0;
};

/// Parses the line-oriented grammar format:
///
///     # comment
///     primitive identifier
///     stmt = Pass() | Return(expr? value)
///          | Try(stmt* body, excepthandler* handlers)
///
/// Throws GrammarError carrying line/column for syntax errors, and without a
/// position for semantic errors (unresolved types, duplicates).
Grammar parse_grammar(std::string_view text);

/// Canonical text form; parse_grammar(print_grammar(g)) == g.
std::string print_grammar(const Grammar& g);

}  // namespace branchsel

#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "branchsel/asdl.hpp"
#include "branchsel/ast.hpp"
#include "branchsel/autodiff.hpp"
#include "branchsel/dataset.hpp"
#include "branchsel/model.hpp"
#include "branchsel/realize.hpp"
#include "branchsel/synthetic.hpp"

namespace testsupport {

using namespace branchsel;

std::string data_path(const std::string& rel);

// data/toy: every cardinality, zero-field leaves, an ExceptHandler node.
const Grammar& toy_grammar();
const Templates& toy_templates();
const Corpus& toy_corpus();

// Random tree of the root type (or `type`), depth-bounded. Node ids pre-order.
AstNode random_ast(const Grammar& g, std::mt19937_64& rng, std::size_t max_depth = 4);
AstNode random_ast_of(const Grammar& g, const std::string& type, std::mt19937_64& rng, std::size_t max_depth);

// Independent recursive pre-order linearization (identity orders), written
// without the Linearizer state machine.
std::vector<Action> naive_preorder(const AstNode& ast, const Grammar& g);

ModelConfig micro_config(const Grammar& g, const Corpus& corpus, std::size_t action = 8, std::size_t field = 8,
                         std::size_t hidden = 16, std::size_t selector = 8);

struct GradReport {
  double max_rel_error = 0.0;
  std::string worst;  // "param[index]"
  std::size_t checked = 0;
  double analytic_norm = 0.0;
};

// Central finite differences over every entry of every parameter in `params`
// (or only those whose name passes `filter`). The loss builder is called on a
// fresh graph each time. Relative error is |a - n| / max(|a|, |n|, 1e-3).
GradReport check_gradients(nn::ParamStore& params, const std::function<nn::Var(nn::Graph&)>& loss,
                           double h = 1e-4, const std::function<bool(const std::string&)>& filter = {});

double rel_error(double a, double n);

// Exact Bayes-optimal accuracy of predicting a handler's type from what the
// decoder can observe, by enumerating the generator's sampling process for one
// statement. Copy-only names are invisible to the encoder (they map to <unk>);
// `name_first` additionally reveals the gold name.
double bayes_type_accuracy(const SyntheticSpec& spec, bool name_first);

// Small synthetic setup used by acceptance and training tests.
SyntheticSpec small_spec(std::size_t size, std::uint64_t seed);

}  // namespace testsupport

namespace testsupport {

// Message of the E thrown by f, or "" if nothing (or something else) was thrown.
template <typename E, typename F>
std::string thrown(F&& f) {
  try {
    f();
  } catch (const E& e) {
    return e.what();
  } catch (...) {
    return "<other exception>";
  }
  return "";
}

inline bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

}  // namespace testsupport

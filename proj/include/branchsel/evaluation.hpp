#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "branchsel/dataset.hpp"
#include "branchsel/model.hpp"
#include "branchsel/training.hpp"

namespace branchsel {

struct DecodeOptions {
  std::size_t beam_size = 5;
  std::size_t max_steps = 200;
  OrderPolicy order_policy = OrderPolicy::RL;
  std::uint64_t seed = 0;  // only used by the rand policy
};

struct DecodeResult {
  std::optional<AstNode> ast;  // nullopt: nothing completed within max_steps
  std::vector<TracedAction> trace;
  OrderAssignment orders;  // keyed by node id of `ast`
  double log_prob = -std::numeric_limits<double>::infinity();
};

/// Beam search over actions. A hypothesis that applies a multi-branch
/// constructor fixes that node's order on the spot (greedy selector for the
/// rl policy). The greedy hypothesis is always admitted, so the result never
/// scores below greedy_decode.
DecodeResult beam_decode(Model& model, const std::vector<std::string>& src, const DecodeOptions& options);
/// Stepwise argmax decoding.
DecodeResult greedy_decode(Model& model, const std::vector<std::string>& src, const DecodeOptions& options);

/// 10x the median gold trace length of `corpus`.
std::size_t default_max_steps(const Corpus& corpus, const Grammar& g);

bool exact_match(const std::string& predicted, const std::string& gold);

/// Histogram bucket of a multi-branch node count: "0".."5" or ">=6".
std::string bucket_key(std::size_t multi_branch_count);
const std::vector<std::string>& bucket_keys();

struct CorpusStats {
  std::size_t instances = 0;
  std::size_t nodes = 0;
  std::size_t multi_branch_nodes = 0;
  std::size_t asts_with_multi_branch = 0;
  double pct_asts_with_multi_branch = 0.0;  // rounded to 2 decimals
  double pct_nodes_multi_branch = 0.0;
  std::map<std::string, std::size_t> histogram;  // every bucket key present

  nlohmann::json to_json() const;
  std::string to_text() const;
};

CorpusStats corpus_stats(const std::vector<AstNode>& asts);
CorpusStats corpus_stats(const Corpus& corpus);

struct InstanceResult {
  std::size_t index = 0;
  bool decoded = false;
  bool correct = false;
  std::size_t multi_branch = 0;
  std::string predicted;
};

std::vector<InstanceResult> evaluate_corpus(Model& model, const Corpus& corpus, const Templates& templates,
                                            const DecodeOptions& options);

struct BucketAccuracy {
  struct Cell {
    std::size_t total = 0;
    std::size_t correct = 0;
    std::optional<double> accuracy;  // nullopt for an empty bucket
  };
  std::map<std::string, Cell> buckets;  // every bucket key present
  std::size_t total = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;

  nlohmann::json to_json() const;
};

BucketAccuracy bucketed_accuracy(const std::vector<InstanceResult>& results);

/// Aligned table: one row per model, one column per bucket (plus counts).
std::string bucket_table(const std::vector<std::pair<std::string, BucketAccuracy>>& rows);

/// Node-level correctness keyed by (instance index, node id).
using NodeFlags = std::map<std::pair<std::size_t, std::size_t>, bool>;

struct ChildAccuracy {
  std::size_t correct = 0;
  std::size_t total = 0;
  std::optional<double> accuracy;  // nullopt when the corpus has no multi-branch node
  NodeFlags node_flags;            // every immediate child action predicted correctly

  nlohmann::json to_json() const;
};

/// Teacher-forced argmax accuracy on the actions whose parent is a
/// multi-branch node, with gold traces under the model's own order policy.
ChildAccuracy child_prediction_accuracy(Model& model, const Corpus& corpus, OrderPolicy policy,
                                        std::uint64_t seed = 0);

struct Disagreement {
  std::size_t nodes = 0;
  std::size_t only_a = 0;
  std::size_t only_b = 0;
  double pct_only_a = 0.0;
  double pct_only_b = 0.0;

  nlohmann::json to_json() const;
};

/// Share of multi-branch nodes handled correctly by exactly one of two models.
/// Both flag sets must cover the same nodes.
Disagreement order_disagreement(const NodeFlags& a, const NodeFlags& b);
Disagreement order_disagreement_report(Model& a, OrderPolicy policy_a, Model& b, OrderPolicy policy_b,
                                       const Corpus& corpus, std::uint64_t seed = 0);
std::string disagreement_table(const std::string& name_a, const std::string& name_b, const Disagreement& d);

}  // namespace branchsel

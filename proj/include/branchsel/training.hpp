#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "branchsel/dataset.hpp"
#include "branchsel/model.hpp"

namespace branchsel {

/// How the fields of multi-branch nodes are ordered: fixed left-to-right,
/// fixed right-to-left, uniformly random, or chosen by the learned selector.
enum class OrderPolicy { L2R, R2L, RAND, RL };

std::string_view to_string(OrderPolicy p);
/// Accepts l2r / r2l / rand / rl in any case.
OrderPolicy parse_order_policy(std::string_view text);

struct TrainConfig {
  double lambda_rl = 1.0;
  double eta = 0.8;
  std::size_t pretrain_epochs = 10;
  std::size_t rl_epochs = 10;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
  OrderPolicy order_policy = OrderPolicy::RL;
  std::size_t batch_size = 1;
  double clip_norm = 5.0;
  bool record_wall_time = false;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Source/token vocabularies from a training split plus the grammar-derived
/// constructor and field vocabularies. Dimensions are taken from `dims`.
ModelConfig config_for_corpus(const Grammar& g, const Corpus& train, const CorpusMeta& meta,
                              const ModelConfig& dims);

/// Primitive token units of `ast` in pre-order.
std::vector<std::string> primitive_units(const AstNode& ast, const Grammar& g);

/// Order assignment of a fixed policy (L2R, R2L, RAND); RL is not fixed.
OrderAssignment policy_orders(const AstNode& ast, OrderPolicy policy, std::mt19937_64& rng);

/// A uniformly random order assignment and the trace it induces.
std::pair<std::vector<TracedAction>, OrderAssignment> reorganize_instance(const TrainingInstance& inst,
                                                                          const Grammar& g,
                                                                          std::mt19937_64& rng);

struct RewardRecord {
  std::size_t node_id = 0;
  std::vector<std::size_t> sampled_order;
  std::vector<std::size_t> greedy_order;
  double loss_sampled = 0.0;
  double loss_greedy = 0.0;
  double policy_prob = 0.0;
  double reward = 0.0;
};

/// (loss_greedy - loss_sampled) * max(eta - policy_prob, 0).
double node_reward(double loss_sampled, double loss_greedy, double policy_prob, double eta);

struct StepResult {
  double loss = 0.0;
  double mle_loss = 0.0;
  double rl_loss = 0.0;  // lambda / |N_mb| * sum of -r log pi(o)
  std::vector<RewardRecord> records;
  double entropy_sum = 0.0;  // selector distribution entropy, summed over nodes
};

/// Teacher-forced MLE on the trace induced by `orders`. Gradients of
/// `grad_scale` * loss are accumulated into the model parameters.
StepResult mle_step(Model& model, const TrainingInstance& inst, const OrderAssignment& orders,
                    double grad_scale = 1.0);

/// One self-critical update term for an instance. Sampled and greedy orders are
/// drawn per multi-branch node as the teacher-forced pass reaches it; each
/// node's losses are the NLL of its subtree block, the greedy one recomputed
/// with only that node's order swapped. Gradients of grad_scale * loss are
/// accumulated.
StepResult self_critical_step(Model& model, const TrainingInstance& inst, const TrainConfig& config,
                              std::mt19937_64& rng, double grad_scale = 1.0);

struct EpochMetrics {
  std::size_t epoch = 0;
  std::string phase;
  double mle_loss = 0.0;
  double rl_loss = 0.0;
  double mean_reward = 0.0;
  double policy_entropy = 0.0;
  std::optional<double> wall_time;

  nlohmann::json to_json() const;
};

/// Owns the optimizer loop and the training RNG (instance shuffling, random
/// orders, order sampling).
class Trainer {
 public:
  Trainer(Model& model, TrainConfig config);

  const TrainConfig& config() const { return config_; }
  std::size_t epochs_done() const { return epochs_done_; }
  void set_epochs_done(std::size_t n) { epochs_done_ = n; }
  std::string rng_state() const;
  void set_rng_state(const std::string& state);
  const std::vector<EpochMetrics>& log() const { return log_; }

  /// One MLE epoch with orders from a fixed policy (RAND resamples per epoch).
  EpochMetrics mle_epoch(const Corpus& corpus, OrderPolicy policy, std::string_view phase);
  EpochMetrics rl_epoch(const Corpus& corpus);

  /// Random-order pre-training for config.pretrain_epochs epochs.
  void pretrain(const Corpus& corpus);
  /// Fixed-policy baseline: pretrain_epochs + rl_epochs epochs of MLE.
  void train_baseline(const Corpus& corpus, OrderPolicy policy);
  /// config.rl_epochs self-critical epochs. Refuses to run on parameters that
  /// were never pre-trained unless `from_scratch` is set.
  void train_rl(const Corpus& corpus, bool pretrained, bool from_scratch = false);

  /// Metric log as JSON lines.
  std::string log_jsonl() const;

 private:
  template <typename Fn>
  void run_batches(const Corpus& corpus, Fn&& per_instance);

  Model* model_;
  TrainConfig config_;
  std::mt19937_64 rng_;
  std::size_t epochs_done_ = 0;
  std::vector<EpochMetrics> log_;
};

}  // namespace branchsel

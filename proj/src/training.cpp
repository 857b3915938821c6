#include "branchsel/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

#include "branchsel/error.hpp"

namespace branchsel {

using nn::Graph;
using nn::Var;

std::string_view to_string(OrderPolicy p) {
  switch (p) {
    case OrderPolicy::L2R: return "l2r";
    case OrderPolicy::R2L: return "r2l";
    case OrderPolicy::RAND: return "rand";
    case OrderPolicy::RL: return "rl";
  }
  return "?";
}

OrderPolicy parse_order_policy(std::string_view text) {
  std::string t(text);
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "l2r") return OrderPolicy::L2R;
  if (t == "r2l") return OrderPolicy::R2L;
  if (t == "rand") return OrderPolicy::RAND;
  if (t == "rl") return OrderPolicy::RL;
  throw Error("unknown order policy '" + std::string(text) + "' (expected l2r, r2l, rand or rl)");
}

void TrainConfig::validate() const {
  if (!(eta > 0.0 && eta <= 1.0)) throw Error("eta must lie in (0, 1]");
  if (lambda_rl < 0.0) throw Error("lambda must be >= 0");
  if (!(learning_rate > 0.0)) throw Error("learning_rate must be > 0");
  if (batch_size == 0) throw Error("batch_size must be >= 1");
  if (!(clip_norm > 0.0)) throw Error("clip_norm must be > 0");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"lambda_rl", c.lambda_rl},
       {"eta", c.eta},
       {"pretrain_epochs", c.pretrain_epochs},
       {"rl_epochs", c.rl_epochs},
       {"learning_rate", c.learning_rate},
       {"seed", c.seed},
       {"order_policy", std::string(to_string(c.order_policy))},
       {"batch_size", c.batch_size},
       {"clip_norm", c.clip_norm},
       {"record_wall_time", c.record_wall_time}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.lambda_rl = j.value("lambda_rl", c.lambda_rl);
  c.eta = j.value("eta", c.eta);
  c.pretrain_epochs = j.value("pretrain_epochs", c.pretrain_epochs);
  c.rl_epochs = j.value("rl_epochs", c.rl_epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.seed = j.value("seed", c.seed);
  if (j.contains("order_policy")) c.order_policy = parse_order_policy(j.at("order_policy").get<std::string>());
  c.batch_size = j.value("batch_size", c.batch_size);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.record_wall_time = j.value("record_wall_time", c.record_wall_time);
}

std::vector<std::string> primitive_units(const AstNode& ast, const Grammar& g) {
  std::vector<std::string> out;
  for (const auto& t : linearize(ast, g, fixed_order_assignment(ast, FixedOrder::LeftToRight)))
    if (t.action.kind == Action::Kind::GenToken) out.push_back(t.action.token);
  return out;
}

ModelConfig config_for_corpus(const Grammar& g, const Corpus& train, const CorpusMeta& meta,
                              const ModelConfig& dims) {
  ModelConfig c = dims;
  std::vector<std::vector<std::string>> sentences, tokens;
  for (const auto& inst : train) {
    sentences.push_back(inst.src);
    tokens.push_back(primitive_units(inst.ast, g));
  }
  c.source_vocab = build_source_vocab(sentences, meta.copy_only);
  c.token_vocab = build_token_vocab(tokens);
  c.constructor_vocab = build_constructor_vocab(g);
  c.field_vocab = build_field_vocab(g);
  return c;
}

OrderAssignment policy_orders(const AstNode& ast, OrderPolicy policy, std::mt19937_64& rng) {
  switch (policy) {
    case OrderPolicy::L2R: return fixed_order_assignment(ast, FixedOrder::LeftToRight);
    case OrderPolicy::R2L: return fixed_order_assignment(ast, FixedOrder::RightToLeft);
    case OrderPolicy::RAND: return uniform_order_assignment(ast, rng);
    case OrderPolicy::RL: break;
  }
  throw Error("the rl policy has no fixed order assignment");
}

std::pair<std::vector<TracedAction>, OrderAssignment> reorganize_instance(const TrainingInstance& inst,
                                                                          const Grammar& g,
                                                                          std::mt19937_64& rng) {
  OrderAssignment orders = uniform_order_assignment(inst.ast, rng);
  return {linearize(inst.ast, g, orders), orders};
}

double node_reward(double loss_sampled, double loss_greedy, double policy_prob, double eta) {
  return (loss_greedy - loss_sampled) * std::max(eta - policy_prob, 0.0);
}

StepResult mle_step(Model& model, const TrainingInstance& inst, const OrderAssignment& orders, double grad_scale) {
  Graph g;
  Var nll = sequence_nll(g, model, inst.src, inst.ast, orders);
  g.backward(g.scale(nll, grad_scale));
  StepResult r;
  r.loss = r.mle_loss = g.scalar_value(nll);
  return r;
}

namespace {

struct NodeDecision {
  const AstNode* node;
  std::size_t step;
  OrderSample sampled;
  OrderSample greedy;
  Var log_pi;
};

std::vector<double> softmax_values(std::span<const double> scores) {
  double mx = *std::max_element(scores.begin(), scores.end());
  std::vector<double> p(scores.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) z += p[i] = std::exp(scores[i] - mx);
  for (double& x : p) x /= z;
  return p;
}

double block_loss(const Graph& g, const std::vector<Var>& log_probs, std::size_t first, std::size_t last) {
  double loss = 0.0;
  for (std::size_t t = first; t < last; ++t) loss -= g.scalar_value(log_probs[t]);
  return loss;
}

}  // namespace

StepResult self_critical_step(Model& model, const TrainingInstance& inst, const TrainConfig& config,
                              std::mt19937_64& rng, double grad_scale) {
  const Grammar& gram = model.grammar();
  Graph g;
  std::vector<NodeDecision> decisions;
  StepResult result;

  OrderHook hook = [&](const AstNode& node, std::size_t step, const DecoderState& state) {
    Var scores = model.selector_scores(g, state.s, node.constructor);
    std::vector<double> p = softmax_values(g.value(scores));
    for (double x : p)
      if (x > 0.0) result.entropy_sum -= x * std::log(x);
    NodeDecision d{&node, step, sample_order(p, rng), greedy_order(p), {}};
    d.log_pi = model.order_log_prob(g, scores, d.sampled.order);
    decisions.push_back(d);
    return d.sampled.order;
  };
  ForcedRun run = teacher_force(g, model, inst.src, inst.ast, hook);

  OrderAssignment sampled;
  for (const auto& d : decisions) sampled[d.node->node_id] = d.sampled.order;

  std::vector<Var> terms;
  for (const auto& d : decisions) {
    // The node's subtree occupies the steps after its ApplyConstr; its length
    // does not depend on the order.
    std::size_t first = d.step + 1;
    std::size_t last = d.step + action_count(*d.node, gram);
    RewardRecord rec;
    rec.node_id = d.node->node_id;
    rec.sampled_order = d.sampled.order;
    rec.greedy_order = d.greedy.order;
    rec.loss_sampled = block_loss(g, run.log_probs, first, last);
    rec.loss_greedy = rec.loss_sampled;
    if (d.sampled.order != d.greedy.order) {
      OrderAssignment counterfactual = sampled;
      counterfactual[d.node->node_id] = d.greedy.order;
      Graph detached(false);
      ForcedRun alt = teacher_force(detached, model, inst.src, inst.ast, fixed_orders(counterfactual));
      rec.loss_greedy = block_loss(detached, alt.log_probs, first, last);
    }
    rec.policy_prob = std::exp(d.sampled.log_prob);
    rec.reward = node_reward(rec.loss_sampled, rec.loss_greedy, rec.policy_prob, config.eta);
    terms.push_back(g.scale(d.log_pi, -rec.reward));
    result.records.push_back(std::move(rec));
  }

  Var total = run.nll;
  if (!terms.empty()) {
    Var rl = g.scale(g.sum(g.concat(terms)), config.lambda_rl / static_cast<double>(terms.size()));
    result.rl_loss = g.scalar_value(rl);
    total = g.add(total, rl);
  }
  g.backward(g.scale(total, grad_scale));
  result.mle_loss = g.scalar_value(run.nll);
  result.loss = g.scalar_value(total);
  return result;
}

nlohmann::json EpochMetrics::to_json() const {
  nlohmann::json j = {{"epoch", epoch},          {"phase", phase},
                      {"mle_loss", mle_loss},    {"rl_loss", rl_loss},
                      {"mean_reward", mean_reward}, {"policy_entropy", policy_entropy}};
  j["wall_time"] = wall_time ? nlohmann::json(*wall_time) : nlohmann::json(nullptr);
  return j;
}

Trainer::Trainer(Model& model, TrainConfig config) : model_(&model), config_(config), rng_(config.seed) {
  config_.validate();
}

std::string Trainer::rng_state() const {
  std::ostringstream ss;
  ss << rng_;
  return ss.str();
}

void Trainer::set_rng_state(const std::string& state) {
  std::istringstream ss(state);
  ss >> rng_;
  if (!ss) throw IoError("corrupt RNG state");
}

template <typename Fn>
void Trainer::run_batches(const Corpus& corpus, Fn&& per_instance) {
  if (corpus.empty()) throw Error("training corpus is empty");
  std::vector<std::size_t> idx(corpus.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng_);
  nn::AdamConfig adam;
  adam.learning_rate = config_.learning_rate;
  auto& params = model_->params();
  for (std::size_t start = 0; start < idx.size(); start += config_.batch_size) {
    std::size_t end = std::min(idx.size(), start + config_.batch_size);
    params.zero_grad();
    double scale = 1.0 / static_cast<double>(end - start);
    for (std::size_t i = start; i < end; ++i) per_instance(corpus[idx[i]], scale);
    params.clip_grad_norm(config_.clip_norm);
    params.adam_step(adam);
  }
}

EpochMetrics Trainer::mle_epoch(const Corpus& corpus, OrderPolicy policy, std::string_view phase) {
  auto t0 = std::chrono::steady_clock::now();
  double total = 0.0;
  run_batches(corpus, [&](const TrainingInstance& inst, double scale) {
    total += mle_step(*model_, inst, policy_orders(inst.ast, policy, rng_), scale).mle_loss;
  });
  EpochMetrics m;
  m.epoch = ++epochs_done_;
  m.phase = phase;
  m.mle_loss = total / static_cast<double>(corpus.size());
  if (config_.record_wall_time)
    m.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  spdlog::info("epoch {} [{}] mle_loss={:.4f}", m.epoch, m.phase, m.mle_loss);
  log_.push_back(m);
  return m;
}

EpochMetrics Trainer::rl_epoch(const Corpus& corpus) {
  auto t0 = std::chrono::steady_clock::now();
  double mle = 0.0, rl = 0.0, reward = 0.0, entropy = 0.0;
  std::size_t nodes = 0;
  run_batches(corpus, [&](const TrainingInstance& inst, double scale) {
    StepResult r = self_critical_step(*model_, inst, config_, rng_, scale);
    mle += r.mle_loss;
    rl += r.rl_loss;
    entropy += r.entropy_sum;
    for (const auto& rec : r.records) reward += rec.reward;
    nodes += r.records.size();
  });
  EpochMetrics m;
  m.epoch = ++epochs_done_;
  m.phase = "rl";
  m.mle_loss = mle / static_cast<double>(corpus.size());
  m.rl_loss = rl / static_cast<double>(corpus.size());
  if (nodes) {
    m.mean_reward = reward / static_cast<double>(nodes);
    m.policy_entropy = entropy / static_cast<double>(nodes);
  }
  if (config_.record_wall_time)
    m.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  spdlog::info("epoch {} [rl] mle_loss={:.4f} rl_loss={:.5f} reward={:.5f} entropy={:.4f}", m.epoch, m.mle_loss,
               m.rl_loss, m.mean_reward, m.policy_entropy);
  log_.push_back(m);
  return m;
}

void Trainer::pretrain(const Corpus& corpus) {
  if (config_.pretrain_epochs == 0) throw Error("pretraining needs pretrain_epochs >= 1");
  for (std::size_t e = 0; e < config_.pretrain_epochs; ++e) mle_epoch(corpus, OrderPolicy::RAND, "pretrain");
}

void Trainer::train_baseline(const Corpus& corpus, OrderPolicy policy) {
  if (policy == OrderPolicy::RL) throw Error("train_baseline takes a fixed order policy (l2r, r2l or rand)");
  std::size_t epochs = config_.pretrain_epochs + config_.rl_epochs;
  for (std::size_t e = 0; e < epochs; ++e) mle_epoch(corpus, policy, to_string(policy));
}

void Trainer::train_rl(const Corpus& corpus, bool pretrained, bool from_scratch) {
  if (!pretrained && !from_scratch)
    throw Error("RL training requires a pre-trained checkpoint (random-order pre-training first)");
  for (std::size_t e = 0; e < config_.rl_epochs; ++e) rl_epoch(corpus);
}

std::string Trainer::log_jsonl() const {
  std::string out;
  for (const auto& m : log_) out += m.to_json().dump() + "\n";
  return out;
}

}  // namespace branchsel

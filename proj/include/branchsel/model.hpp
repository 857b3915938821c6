#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "branchsel/asdl.hpp"
#include "branchsel/ast.hpp"
#include "branchsel/autodiff.hpp"
#include "branchsel/transition.hpp"
#include "branchsel/vocab.hpp"

namespace branchsel {

struct ModelConfig {
  std::size_t action_embed_dim = 128;
  std::size_t field_embed_dim = 128;
  std::size_t hidden_dim = 256;
  std::size_t selector_dim = 128;
  Vocab source_vocab;
  Vocab token_vocab;
  Vocab constructor_vocab;
  Vocab field_vocab;

  /// Throws Error when a dimension is zero, hidden_dim is odd (the encoder
  /// splits it across two directions) or a reserved vocabulary entry is missing.
  void validate() const;
  /// Throws when the constructor/field vocabularies do not describe `g`.
  void check_grammar(const Grammar& g) const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct EncodedSource {
  std::vector<std::string> tokens;
  std::vector<nn::Var> states;  // one per token, hidden_dim each
  nn::Var memory;               // states stacked as (n x hidden_dim)
  nn::Var final_forward;
  nn::Var final_backward;
};

struct DecoderState {
  nn::Var h;
  nn::Var cell;
  nn::Var s;        // attentional state
  nn::Var context;  // attention context
  nn::Var attention;
};

/// Pieces of the GenToken head for one step. Probabilities are vectors over
/// the token vocabulary (vocab) and over source positions (copy).
struct TokenHead {
  nn::Var p_gen;
  nn::Var p_vocab;
  nn::Var p_copy;
};

struct OrderSample {
  std::vector<std::size_t> order;
  double log_prob = 0.0;
  std::vector<double> per_step_log_probs;
};

/// Sequential draws without replacement from `p` (m >= 1 non-negative
/// weights): at each draw the chosen fields are masked and the rest
/// renormalized.
OrderSample sample_order(std::span<const double> p, std::mt19937_64& rng);
/// Stepwise argmax with the same masking; ties go to the smallest index.
OrderSample greedy_order(std::span<const double> p);
/// Chain-rule log probability of `order` under `p`.
double order_log_prob(std::span<const double> p, const std::vector<std::size_t>& order);

class Model {
 public:
  /// Fresh parameters drawn from `seed`.
  Model(const Grammar& g, ModelConfig config, std::uint64_t seed);
  /// Parameters restored from a checkpoint; names and shapes are checked.
  Model(const Grammar& g, ModelConfig config, nn::ParamStore params);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;

  const Grammar& grammar() const { return *grammar_; }
  const ModelConfig& config() const { return config_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  std::size_t constructor_index(std::size_t constructor_id) const { return constructor_id + 2; }
  std::size_t field_index(std::size_t constructor_id, std::size_t field) const {
    return grammar_->field(constructor_id, field).global_id + 1;
  }
  static constexpr std::size_t kReduceConstructor = 1;
  static constexpr std::size_t kUnkToken = 1;
  static constexpr std::size_t kReduceToken = 2;

  /// BiLSTM over the source tokens. Throws on empty input.
  EncodedSource encode(nn::Graph& g, const std::vector<std::string>& src);
  DecoderState initial_state(nn::Graph& g, const EncodedSource& enc);

  /// E(a): constructor embedding for ApplyConstr and Reduce, token embedding
  /// (or <unk>) for GenToken.
  nn::Var action_embedding(nn::Graph& g, const Action& a);
  nn::Var zero_action(nn::Graph& g);
  /// p_t = [E(frontier field) : s of the parent step]; zero for the root.
  nn::Var parent_feed(nn::Graph& g, const std::optional<FrontierField>& field, std::optional<nn::Var> parent_s);

  DecoderState decoder_step(nn::Graph& g, nn::Var prev_action, const DecoderState& prev, nn::Var parent_feed,
                            const EncodedSource& enc);

  /// Entries of the constructor vocabulary that are *not* legal at `slot`.
  std::vector<bool> constructor_mask(const FieldSlot& slot) const;
  /// Log probabilities over the constructor vocabulary; masked entries are -inf.
  nn::Var apply_constr_log_probs(nn::Graph& g, nn::Var s, const FieldSlot& slot);

  TokenHead token_head(nn::Graph& g, nn::Var s, const EncodedSource& enc, const FieldSlot& slot);
  /// log p(token) under the gen/copy mixture. "<reduce>" closes the field.
  nn::Var token_log_prob(nn::Graph& g, const TokenHead& head, const EncodedSource& enc, const std::string& token);
  /// Full mixture as (surface token, probability): vocabulary entries first,
  /// then source tokens absent from the vocabulary, first-seen order.
  std::vector<std::pair<std::string, double>> token_distribution(const nn::Graph& g, const TokenHead& head,
                                                                 const EncodedSource& enc) const;

  /// One score per field of `constructor_id`, conditioned on the attentional
  /// state of the step that applied the constructor.
  nn::Var selector_scores(nn::Graph& g, nn::Var s, std::size_t constructor_id);
  /// Chain-rule log pi(order) as a differentiable scalar.
  nn::Var order_log_prob(nn::Graph& g, nn::Var scores, const std::vector<std::size_t>& order);

 private:
  void init_params(std::mt19937_64& rng);
  void bind();

  const Grammar* grammar_;
  ModelConfig config_;
  nn::ParamStore params_;

  struct Handles {
    nn::Tensor *src_embed, *ctor_embed, *token_embed, *field_embed;
    nn::LstmWeights enc_fwd, enc_bwd, dec;
    nn::Tensor *init_W, *init_b;
    nn::Tensor *att_W, *att_vec_W;
    nn::Tensor *ctor_out_W, *token_out_W, *gen_W, *gen_b, *copy_W;
    nn::Tensor *sel_W1, *sel_b1, *sel_W2;
  } p_{};
};

/// Chooses the field order of a multi-branch node during teacher forcing. It
/// sees the node and the decoder state of the step that applied its
/// constructor.
using OrderHook =
    std::function<std::vector<std::size_t>(const AstNode& node, std::size_t step, const DecoderState& state)>;

OrderHook fixed_orders(const OrderAssignment& orders);

struct ForcedRun {
  std::vector<TracedAction> trace;
  std::vector<nn::Var> log_probs;     // log p(a_t), one per step
  std::vector<DecoderState> states;
  std::vector<bool> argmax_correct;   // filled when requested
  nn::Var nll;
};

/// Teacher-forced pass over `ast` with orders supplied by `hook`.
ForcedRun teacher_force(nn::Graph& g, Model& model, const std::vector<std::string>& src, const AstNode& ast,
                        const OrderHook& hook, bool score_argmax = false);

/// -sum_t log p(a_t) for a fixed order assignment.
nn::Var sequence_nll(nn::Graph& g, Model& model, const std::vector<std::string>& src, const AstNode& ast,
                     const OrderAssignment& orders);
/// Same, reading the orders off a traced action sequence.
nn::Var sequence_nll(nn::Graph& g, Model& model, const std::vector<std::string>& src,
                     const std::vector<TracedAction>& trace);

}  // namespace branchsel

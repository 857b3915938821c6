#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace branchsel::nn {

/// Dense row-major matrix of doubles (vectors are n x 1) with an optional
/// gradient buffer of the same shape.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, bool requires_grad = false);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  std::vector<std::size_t> shape() const { return {rows_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }
  std::vector<double>& grad() { return grad_; }
  const std::vector<double>& grad() const { return grad_; }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  bool requires_grad() const { return requires_grad_; }
  /// True once a backward pass has written into grad() since the last zero_grad().
  bool grad_fresh() const { return grad_fresh_; }
  void mark_grad_fresh() { grad_fresh_ = true; }
  void zero_grad();

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
  std::vector<double> grad_;
  bool requires_grad_ = false;
  bool grad_fresh_ = false;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Every learnable array of a model, iterated in name order, plus the Adam
/// moment estimates.
class ParamStore {
 public:
  /// Adds a parameter initialized uniformly in [-1/sqrt(fan_in), 1/sqrt(fan_in)];
  /// fan_in defaults to `cols`.
  Tensor& create(const std::string& name, std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                 std::size_t fan_in = 0);
  /// Adds a parameter with explicit contents.
  Tensor& insert(const std::string& name, Tensor value);

  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  double grad_norm() const;
  /// Rescales gradients so their global L2 norm is at most `max_norm`.
  void clip_grad_norm(double max_norm);

  /// Bias-corrected Adam update of every parameter. Throws if no gradient has
  /// been accumulated since the last zero_grad().
  void adam_step(const AdamConfig& config);
  std::uint64_t adam_steps() const { return adam_t_; }
  void set_adam_steps(std::uint64_t t) { adam_t_ = t; }
  std::pair<std::vector<double>, std::vector<double>>& adam_moments(const std::string& name);

  /// Rounds parameters and optimizer moments to float32 precision so the
  /// in-memory state equals what a checkpoint stores.
  void quantize_f32();

 private:
  std::map<std::string, Tensor> params_;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments_;
  std::uint64_t adam_t_ = 0;
};

/// Handle to a value recorded in a Graph.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, which is a
/// topological order, so backward() is a single reverse sweep. A graph built
/// with record = false only evaluates values (used for decoding).
class Graph {
 public:
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Var constant(std::span<const double> values, std::size_t rows, std::size_t cols = 1);
  Var constant(const std::vector<double>& values) { return constant(values, values.size(), 1); }
  Var zeros(std::size_t rows, std::size_t cols = 1);
  Var scalar(double v);
  /// Leaf bound to a parameter; backward accumulates into t.grad().
  Var param(Tensor& t);

  std::span<const double> value(Var v) const;
  double scalar_value(Var v) const;
  std::vector<double> values(Var v) const;
  std::size_t rows(Var v) const { return nodes_[v.id].rows; }
  std::size_t cols(Var v) const { return nodes_[v.id].cols; }
  std::size_t size(Var v) const { return nodes_[v.id].rows * nodes_[v.id].cols; }
  std::size_t node_count() const { return nodes_.size(); }

  Var matmul(Var a, Var b);    // (m x n)(n x k)
  Var matmul_tn(Var a, Var b); // a^T b with a (n x m), b (n x k)
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var scale(Var a, double k);
  Var add_scalar(Var a, double k);
  Var concat(std::span<const Var> parts);
  Var concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }
  /// Stack equally sized vectors into an (n x d) matrix.
  Var stack_rows(std::span<const Var> rows);
  Var slice(Var a, std::size_t start, std::size_t length);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var softmax(Var a);
  Var log_softmax(Var a);
  /// Softmax with excluded[i] == true entries forced to probability 0.
  Var masked_softmax(Var a, const std::vector<bool>& excluded);
  Var masked_log_softmax(Var a, const std::vector<bool>& excluded);
  Var embedding(Tensor& table, std::size_t row);
  Var pick(Var a, std::size_t index);
  Var sum(Var a);
  Var dot(Var a, Var b);
  /// Sum of the listed entries (indices may repeat).
  Var gather_sum(Var a, std::span<const std::size_t> indices);
  Var nll(Var log_probs, std::size_t target) { return scale(pick(log_probs, target), -1.0); }

  /// Accumulates d loss / d param into every bound parameter. `loss` must be
  /// a scalar. May be called repeatedly; parameter gradients accumulate.
  void backward(Var loss);

 private:
  enum class Op : std::uint8_t {
    Leaf, Param, MatMul, MatMulTN, Add, Sub, Mul, Scale, AddScalar, Concat, Slice, Tanh,
    Sigmoid, Exp, Log, Softmax, LogSoftmax, Embedding, Pick, Sum, Dot, GatherSum
  };

  struct Node {
    Op op = Op::Leaf;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t offset = 0;
    int a = -1;
    int b = -1;
    double k = 0.0;
    std::size_t aux = 0;
    Tensor* tensor = nullptr;
    bool needs_grad = false;
    std::vector<int> inputs;
    std::vector<std::size_t> indices;
    std::vector<bool> mask;
  };

  Var push(Node node);
  Node make(Op op, std::size_t rows, std::size_t cols, std::initializer_list<int> in);
  const double* val(int id) const;
  double* val_mut(int id);
  double* grad(int id);
  void check(Var v) const;
  void backward_node(int id);

  bool record_;
  std::vector<Node> nodes_;
  std::vector<double> values_;
  std::vector<double> grads_;
};

struct LstmWeights {
  Tensor* weight = nullptr;  // (4H x (in + H)), gate rows ordered i, f, g, o
  Tensor* bias = nullptr;    // (4H x 1)
  std::size_t hidden = 0;
};

/// Standard LSTM cell. Returns (h', c').
std::pair<Var, Var> lstm_cell(Graph& g, Var x, Var h, Var c, const LstmWeights& w);

}  // namespace branchsel::nn

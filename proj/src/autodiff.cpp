#include "branchsel/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "branchsel/error.hpp"

namespace branchsel::nn {

Tensor::Tensor(std::size_t rows, std::size_t cols, bool requires_grad)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0), requires_grad_(requires_grad) {
  if (requires_grad_) grad_.assign(data_.size(), 0.0);
}

void Tensor::zero_grad() {
  std::fill(grad_.begin(), grad_.end(), 0.0);
  grad_fresh_ = false;
}

// ---------------------------------------------------------------------------
// ParamStore

Tensor& ParamStore::create(const std::string& name, std::size_t rows, std::size_t cols,
                           std::mt19937_64& rng, std::size_t fan_in) {
  Tensor t(rows, cols, true);
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in ? fan_in : cols));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& x : t.data()) x = dist(rng);
  return insert(name, std::move(t));
}

Tensor& ParamStore::insert(const std::string& name, Tensor value) {
  if (params_.count(name)) throw ShapeError("duplicate parameter '" + name + "'");
  if (!value.requires_grad()) {
    Tensor t(value.rows(), value.cols(), true);
    t.data() = value.data();
    value = std::move(t);
  }
  auto& slot = params_[name];
  slot = std::move(value);
  moments_[name] = {std::vector<double>(slot.size(), 0.0), std::vector<double>(slot.size(), 0.0)};
  return slot;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ShapeError("unknown parameter '" + name + "'");
  return it->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ShapeError("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : params_) t.zero_grad();
}

double ParamStore::grad_norm() const {
  double sq = 0.0;
  for (const auto& [_, t] : params_)
    for (double g : t.grad()) sq += g * g;
  return std::sqrt(sq);
}

void ParamStore::clip_grad_norm(double max_norm) {
  double norm = grad_norm();
  if (norm <= max_norm || norm == 0.0) return;
  double k = max_norm / norm;
  for (auto& [_, t] : params_)
    for (double& g : t.grad()) g *= k;
}

std::pair<std::vector<double>, std::vector<double>>& ParamStore::adam_moments(const std::string& name) {
  auto it = moments_.find(name);
  if (it == moments_.end()) throw ShapeError("unknown parameter '" + name + "'");
  return it->second;
}

void ParamStore::adam_step(const AdamConfig& cfg) {
  bool any = std::any_of(params_.begin(), params_.end(), [](const auto& kv) { return kv.second.grad_fresh(); });
  if (!any) throw ShapeError("adam_step called without gradients; run backward first");
  ++adam_t_;
  double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(adam_t_));
  double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(adam_t_));
  for (auto& [name, t] : params_) {
    auto& [m, v] = moments_[name];
    auto& data = t.data();
    const auto& grad = t.grad();
    for (std::size_t i = 0; i < data.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
      double mhat = m[i] / c1;
      double vhat = v[i] / c2;
      data[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
  }
}

void ParamStore::quantize_f32() {
  auto q = [](std::vector<double>& xs) {
    for (double& x : xs) x = static_cast<double>(static_cast<float>(x));
  };
  for (auto& [name, t] : params_) {
    q(t.data());
    q(moments_[name].first);
    q(moments_[name].second);
  }
}

// ---------------------------------------------------------------------------
// Graph

void Graph::check(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) throw ShapeError("invalid Var");
}

Graph::Node Graph::make(Op op, std::size_t rows, std::size_t cols, std::initializer_list<int> in) {
  Node n;
  n.op = op;
  n.rows = rows;
  n.cols = cols;
  auto it = in.begin();
  if (it != in.end()) n.a = *it++;
  if (it != in.end()) n.b = *it++;
  if (record_)
    for (int id : in)
      if (nodes_[id].needs_grad) n.needs_grad = true;
  return n;
}

Var Graph::push(Node node) {
  if (node.op != Op::Param) {
    node.offset = values_.size();
    values_.resize(values_.size() + node.rows * node.cols, 0.0);
  }
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

const double* Graph::val(int id) const {
  const Node& n = nodes_[id];
  if (n.op == Op::Param) return n.tensor->data().data();
  return values_.data() + n.offset;
}

double* Graph::val_mut(int id) { return values_.data() + nodes_[id].offset; }

double* Graph::grad(int id) {
  Node& n = nodes_[id];
  if (n.op == Op::Param) return n.tensor->grad().data();
  return grads_.data() + n.offset;
}

std::span<const double> Graph::value(Var v) const {
  check(v);
  return {val(v.id), size(v)};
}

double Graph::scalar_value(Var v) const {
  check(v);
  if (size(v) != 1) throw ShapeError("scalar_value of a non-scalar");
  return val(v.id)[0];
}

std::vector<double> Graph::values(Var v) const {
  auto s = value(v);
  return {s.begin(), s.end()};
}

Var Graph::constant(std::span<const double> values, std::size_t rows, std::size_t cols) {
  if (values.size() != rows * cols) throw ShapeError("constant: data length does not match shape");
  Var v = push(make(Op::Leaf, rows, cols, {}));
  std::copy(values.begin(), values.end(), val_mut(v.id));
  return v;
}

Var Graph::zeros(std::size_t rows, std::size_t cols) { return push(make(Op::Leaf, rows, cols, {})); }

Var Graph::scalar(double x) {
  Var v = push(make(Op::Leaf, 1, 1, {}));
  val_mut(v.id)[0] = x;
  return v;
}

Var Graph::param(Tensor& t) {
  Node n = make(Op::Param, t.rows(), t.cols(), {});
  n.tensor = &t;
  n.needs_grad = record_ && t.requires_grad();
  return push(std::move(n));
}

Var Graph::matmul(Var a, Var b) {
  check(a);
  check(b);
  std::size_t m = rows(a), n = cols(a), k = cols(b);
  if (rows(b) != n)
    throw ShapeError("matmul: (" + std::to_string(m) + "x" + std::to_string(n) + ") x (" +
                     std::to_string(rows(b)) + "x" + std::to_string(k) + ")");
  Var out = push(make(Op::MatMul, m, k, {a.id, b.id}));
  const double* A = val(a.id);
  const double* B = val(b.id);
  double* C = val_mut(out.id);
  if (k == 1) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* row = A + i * n;
      double acc = 0.0;
      for (std::size_t l = 0; l < n; ++l) acc += row[l] * B[l];
      C[i] = acc;
    }
  } else {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t l = 0; l < n; ++l) {
        double x = A[i * n + l];
        for (std::size_t j = 0; j < k; ++j) C[i * k + j] += x * B[l * k + j];
      }
  }
  return out;
}

Var Graph::matmul_tn(Var a, Var b) {
  check(a);
  check(b);
  std::size_t n = rows(a), m = cols(a), k = cols(b);
  if (rows(b) != n) throw ShapeError("matmul_tn: row counts differ");
  Var out = push(make(Op::MatMulTN, m, k, {a.id, b.id}));
  const double* A = val(a.id);
  const double* B = val(b.id);
  double* C = val_mut(out.id);
  for (std::size_t l = 0; l < n; ++l)
    for (std::size_t i = 0; i < m; ++i) {
      double x = A[l * m + i];
      for (std::size_t j = 0; j < k; ++j) C[i * k + j] += x * B[l * k + j];
    }
  return out;
}

namespace {
void same_shape(const char* op, std::size_t ra, std::size_t ca, std::size_t rb, std::size_t cb) {
  if (ra != rb || ca != cb)
    throw ShapeError(std::string(op) + ": shape mismatch (" + std::to_string(ra) + "x" +
                     std::to_string(ca) + " vs " + std::to_string(rb) + "x" + std::to_string(cb) + ")");
}
}  // namespace

Var Graph::add(Var a, Var b) {
  check(a);
  check(b);
  same_shape("add", rows(a), cols(a), rows(b), cols(b));
  Var out = push(make(Op::Add, rows(a), cols(a), {a.id, b.id}));
  const double* A = val(a.id);
  const double* B = val(b.id);
  double* C = val_mut(out.id);
  for (std::size_t i = 0, n = size(out); i < n; ++i) C[i] = A[i] + B[i];
  return out;
}

Var Graph::sub(Var a, Var b) {
  check(a);
  check(b);
  same_shape("sub", rows(a), cols(a), rows(b), cols(b));
  Var out = push(make(Op::Sub, rows(a), cols(a), {a.id, b.id}));
  const double* A = val(a.id);
  const double* B = val(b.id);
  double* C = val_mut(out.id);
  for (std::size_t i = 0, n = size(out); i < n; ++i) C[i] = A[i] - B[i];
  return out;
}

Var Graph::mul(Var a, Var b) {
  check(a);
  check(b);
  same_shape("mul", rows(a), cols(a), rows(b), cols(b));
  Var out = push(make(Op::Mul, rows(a), cols(a), {a.id, b.id}));
  const double* A = val(a.id);
  const double* B = val(b.id);
  double* C = val_mut(out.id);
  for (std::size_t i = 0, n = size(out); i < n; ++i) C[i] = A[i] * B[i];
  return out;
}

Var Graph::scale(Var a, double k) {
  check(a);
  Node n = make(Op::Scale, rows(a), cols(a), {a.id});
  n.k = k;
  Var out = push(std::move(n));
  const double* A = val(a.id);
  double* C = val_mut(out.id);
  for (std::size_t i = 0, s = size(out); i < s; ++i) C[i] = k * A[i];
  return out;
}

Var Graph::add_scalar(Var a, double k) {
  check(a);
  Node n = make(Op::AddScalar, rows(a), cols(a), {a.id});
  n.k = k;
  Var out = push(std::move(n));
  const double* A = val(a.id);
  double* C = val_mut(out.id);
  for (std::size_t i = 0, s = size(out); i < s; ++i) C[i] = A[i] + k;
  return out;
}

Var Graph::concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  std::size_t total = 0;
  Node n = make(Op::Concat, 0, 1, {});
  for (Var p : parts) {
    check(p);
    total += size(p);
    n.inputs.push_back(p.id);
    if (record_ && nodes_[p.id].needs_grad) n.needs_grad = true;
  }
  n.rows = total;
  Var out = push(std::move(n));
  double* C = val_mut(out.id);
  for (Var p : parts) {
    const double* A = val(p.id);
    std::size_t s = size(p);
    std::copy(A, A + s, C);
    C += s;
  }
  return out;
}

Var Graph::stack_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("stack_rows of nothing");
  std::size_t d = size(parts[0]);
  for (Var p : parts)
    if (size(p) != d) throw ShapeError("stack_rows: rows differ in length");
  Var out = concat(parts);
  nodes_[out.id].rows = parts.size();
  nodes_[out.id].cols = d;
  return out;
}

Var Graph::slice(Var a, std::size_t start, std::size_t length) {
  check(a);
  if (start + length > size(a)) throw ShapeError("slice out of range");
  Node n = make(Op::Slice, length, 1, {a.id});
  n.aux = start;
  Var out = push(std::move(n));
  const double* A = val(a.id);
  std::copy(A + start, A + start + length, val_mut(out.id));
  return out;
}

Var Graph::tanh(Var a) {
  check(a);
  Var out = push(make(Op::Tanh, rows(a), cols(a), {a.id}));
  const double* A = val(a.id);
  double* C = val_mut(out.id);
  for (std::size_t i = 0, n = size(out); i < n; ++i) C[i] = std::tanh(A[i]);
  return out;
}

Var Graph::sigmoid(Var a) {
  check(a);
  Var out = push(make(Op::Sigmoid, rows(a), cols(a), {a.id}));
  const double* A = val(a.id);
  double* C = val_mut(out.id);
  for (std::size_t i = 0, n = size(out); i < n; ++i)
    C[i] = A[i] >= 0 ? 1.0 / (1.0 + std::exp(-A[i])) : std::exp(A[i]) / (1.0 + std::exp(A[i]));
  return out;
}

Var Graph::exp(Var a) {
  check(a);
  Var out = push(make(Op::Exp, rows(a), cols(a), {a.id}));
  const double* A = val(a.id);
  double* C = val_mut(out.id);
  for (std::size_t i = 0, n = size(out); i < n; ++i) C[i] = std::exp(A[i]);
  return out;
}

Var Graph::log(Var a) {
  check(a);
  Var out = push(make(Op::Log, rows(a), cols(a), {a.id}));
  const double* A = val(a.id);
  double* C = val_mut(out.id);
  for (std::size_t i = 0, n = size(out); i < n; ++i) C[i] = std::log(A[i]);
  return out;
}

Var Graph::softmax(Var a) { return masked_softmax(a, {}); }
Var Graph::log_softmax(Var a) { return masked_log_softmax(a, {}); }

Var Graph::masked_softmax(Var a, const std::vector<bool>& excluded) {
  check(a);
  std::size_t n = size(a);
  if (!excluded.empty() && excluded.size() != n) throw ShapeError("masked_softmax: mask length mismatch");
  auto keep = [&](std::size_t i) { return excluded.empty() || !excluded[i]; };
  double mx = -std::numeric_limits<double>::infinity();
  const double* A0 = val(a.id);
  for (std::size_t i = 0; i < n; ++i)
    if (keep(i)) mx = std::max(mx, A0[i]);
  if (mx == -std::numeric_limits<double>::infinity()) throw ShapeError("softmax over a fully masked vector");
  Node node = make(Op::Softmax, rows(a), cols(a), {a.id});
  node.mask = excluded;
  Var out = push(std::move(node));
  const double* A = val(a.id);
  double* C = val_mut(out.id);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    C[i] = keep(i) ? std::exp(A[i] - mx) : 0.0;
    z += C[i];
  }
  for (std::size_t i = 0; i < n; ++i) C[i] /= z;
  return out;
}

Var Graph::masked_log_softmax(Var a, const std::vector<bool>& excluded) {
  check(a);
  std::size_t n = size(a);
  if (!excluded.empty() && excluded.size() != n) throw ShapeError("masked_log_softmax: mask length mismatch");
  auto keep = [&](std::size_t i) { return excluded.empty() || !excluded[i]; };
  double mx = -std::numeric_limits<double>::infinity();
  const double* A0 = val(a.id);
  for (std::size_t i = 0; i < n; ++i)
    if (keep(i)) mx = std::max(mx, A0[i]);
  if (mx == -std::numeric_limits<double>::infinity()) throw ShapeError("softmax over a fully masked vector");
  Node node = make(Op::LogSoftmax, rows(a), cols(a), {a.id});
  node.mask = excluded;
  Var out = push(std::move(node));
  const double* A = val(a.id);
  double* C = val_mut(out.id);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (keep(i)) z += std::exp(A[i] - mx);
  double lz = mx + std::log(z);
  for (std::size_t i = 0; i < n; ++i)
    C[i] = keep(i) ? A[i] - lz : -std::numeric_limits<double>::infinity();
  return out;
}

Var Graph::embedding(Tensor& table, std::size_t row) {
  if (row >= table.rows()) throw ShapeError("embedding index out of range");
  Node n = make(Op::Embedding, table.cols(), 1, {});
  n.tensor = &table;
  n.aux = row;
  n.needs_grad = record_ && table.requires_grad();
  Var out = push(std::move(n));
  const double* src = table.data().data() + row * table.cols();
  std::copy(src, src + table.cols(), val_mut(out.id));
  return out;
}

Var Graph::pick(Var a, std::size_t index) {
  check(a);
  if (index >= size(a)) throw ShapeError("pick index out of range");
  Node n = make(Op::Pick, 1, 1, {a.id});
  n.aux = index;
  Var out = push(std::move(n));
  val_mut(out.id)[0] = val(a.id)[index];
  return out;
}

Var Graph::sum(Var a) {
  check(a);
  Var out = push(make(Op::Sum, 1, 1, {a.id}));
  const double* A = val(a.id);
  double s = 0.0;
  for (std::size_t i = 0, n = size(a); i < n; ++i) s += A[i];
  val_mut(out.id)[0] = s;
  return out;
}

Var Graph::dot(Var a, Var b) {
  check(a);
  check(b);
  if (size(a) != size(b)) throw ShapeError("dot: length mismatch");
  Var out = push(make(Op::Dot, 1, 1, {a.id, b.id}));
  const double* A = val(a.id);
  const double* B = val(b.id);
  double s = 0.0;
  for (std::size_t i = 0, n = size(a); i < n; ++i) s += A[i] * B[i];
  val_mut(out.id)[0] = s;
  return out;
}

Var Graph::gather_sum(Var a, std::span<const std::size_t> indices) {
  check(a);
  for (std::size_t i : indices)
    if (i >= size(a)) throw ShapeError("gather_sum index out of range");
  Node n = make(Op::GatherSum, 1, 1, {a.id});
  n.indices.assign(indices.begin(), indices.end());
  Var out = push(std::move(n));
  const double* A = val(a.id);
  double s = 0.0;
  for (std::size_t i : indices) s += A[i];
  val_mut(out.id)[0] = s;
  return out;
}

void Graph::backward(Var loss) {
  check(loss);
  if (!record_) throw ShapeError("backward on a graph built without recording");
  if (size(loss) != 1) throw ShapeError("backward requires a scalar loss");
  grads_.assign(values_.size(), 0.0);
  if (!nodes_[loss.id].needs_grad) return;
  grad(loss.id)[0] = 1.0;
  for (int id = loss.id; id >= 0; --id)
    if (nodes_[id].needs_grad) backward_node(id);
}

void Graph::backward_node(int id) {
  Node& n = nodes_[id];
  const double* go = grad(id);
  auto wants = [&](int in) { return in >= 0 && nodes_[in].needs_grad; };
  std::size_t len = n.rows * n.cols;

  switch (n.op) {
    case Op::Leaf:
      return;
    case Op::Param:
      n.tensor->mark_grad_fresh();
      return;
    case Op::MatMul: {
      std::size_t m = nodes_[n.a].rows, inner = nodes_[n.a].cols, k = n.cols;
      const double* A = val(n.a);
      const double* B = val(n.b);
      if (wants(n.a)) {
        double* ga = grad(n.a);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t l = 0; l < inner; ++l) {
            double acc = 0.0;
            for (std::size_t j = 0; j < k; ++j) acc += go[i * k + j] * B[l * k + j];
            ga[i * inner + l] += acc;
          }
      }
      if (wants(n.b)) {
        double* gb = grad(n.b);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t l = 0; l < inner; ++l) {
            double x = A[i * inner + l];
            for (std::size_t j = 0; j < k; ++j) gb[l * k + j] += x * go[i * k + j];
          }
      }
      return;
    }
    case Op::MatMulTN: {
      std::size_t rows_a = nodes_[n.a].rows, m = nodes_[n.a].cols, k = n.cols;
      const double* A = val(n.a);
      const double* B = val(n.b);
      if (wants(n.a)) {
        double* ga = grad(n.a);
        for (std::size_t l = 0; l < rows_a; ++l)
          for (std::size_t i = 0; i < m; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < k; ++j) acc += B[l * k + j] * go[i * k + j];
            ga[l * m + i] += acc;
          }
      }
      if (wants(n.b)) {
        double* gb = grad(n.b);
        for (std::size_t l = 0; l < rows_a; ++l)
          for (std::size_t i = 0; i < m; ++i) {
            double x = A[l * m + i];
            for (std::size_t j = 0; j < k; ++j) gb[l * k + j] += x * go[i * k + j];
          }
      }
      return;
    }
    case Op::Add:
      if (wants(n.a)) {
        double* g = grad(n.a);
        for (std::size_t i = 0; i < len; ++i) g[i] += go[i];
      }
      if (wants(n.b)) {
        double* g = grad(n.b);
        for (std::size_t i = 0; i < len; ++i) g[i] += go[i];
      }
      return;
    case Op::Sub:
      if (wants(n.a)) {
        double* g = grad(n.a);
        for (std::size_t i = 0; i < len; ++i) g[i] += go[i];
      }
      if (wants(n.b)) {
        double* g = grad(n.b);
        for (std::size_t i = 0; i < len; ++i) g[i] -= go[i];
      }
      return;
    case Op::Mul: {
      const double* A = val(n.a);
      const double* B = val(n.b);
      if (wants(n.a)) {
        double* g = grad(n.a);
        for (std::size_t i = 0; i < len; ++i) g[i] += go[i] * B[i];
      }
      if (wants(n.b)) {
        double* g = grad(n.b);
        for (std::size_t i = 0; i < len; ++i) g[i] += go[i] * A[i];
      }
      return;
    }
    case Op::Scale:
      if (wants(n.a)) {
        double* g = grad(n.a);
        for (std::size_t i = 0; i < len; ++i) g[i] += n.k * go[i];
      }
      return;
    case Op::AddScalar:
      if (wants(n.a)) {
        double* g = grad(n.a);
        for (std::size_t i = 0; i < len; ++i) g[i] += go[i];
      }
      return;
    case Op::Concat: {
      std::size_t pos = 0;
      for (int in : n.inputs) {
        std::size_t s = nodes_[in].rows * nodes_[in].cols;
        if (wants(in)) {
          double* g = grad(in);
          for (std::size_t i = 0; i < s; ++i) g[i] += go[pos + i];
        }
        pos += s;
      }
      return;
    }
    case Op::Slice:
      if (wants(n.a)) {
        double* g = grad(n.a) + n.aux;
        for (std::size_t i = 0; i < len; ++i) g[i] += go[i];
      }
      return;
    case Op::Tanh: {
      const double* y = val(id);
      double* g = grad(n.a);
      for (std::size_t i = 0; i < len; ++i) g[i] += go[i] * (1.0 - y[i] * y[i]);
      return;
    }
    case Op::Sigmoid: {
      const double* y = val(id);
      double* g = grad(n.a);
      for (std::size_t i = 0; i < len; ++i) g[i] += go[i] * y[i] * (1.0 - y[i]);
      return;
    }
    case Op::Exp: {
      const double* y = val(id);
      double* g = grad(n.a);
      for (std::size_t i = 0; i < len; ++i) g[i] += go[i] * y[i];
      return;
    }
    case Op::Log: {
      const double* x = val(n.a);
      double* g = grad(n.a);
      for (std::size_t i = 0; i < len; ++i) g[i] += go[i] / x[i];
      return;
    }
    case Op::Softmax: {
      const double* y = val(id);
      double s = 0.0;
      for (std::size_t i = 0; i < len; ++i) s += go[i] * y[i];
      double* g = grad(n.a);
      for (std::size_t i = 0; i < len; ++i)
        if (n.mask.empty() || !n.mask[i]) g[i] += y[i] * (go[i] - s);
      return;
    }
    case Op::LogSoftmax: {
      const double* y = val(id);
      double s = 0.0;
      for (std::size_t i = 0; i < len; ++i)
        if (n.mask.empty() || !n.mask[i]) s += go[i];
      double* g = grad(n.a);
      for (std::size_t i = 0; i < len; ++i)
        if (n.mask.empty() || !n.mask[i]) g[i] += go[i] - std::exp(y[i]) * s;
      return;
    }
    case Op::Embedding: {
      double* g = n.tensor->grad().data() + n.aux * n.tensor->cols();
      for (std::size_t i = 0; i < len; ++i) g[i] += go[i];
      n.tensor->mark_grad_fresh();
      return;
    }
    case Op::Pick:
      if (wants(n.a)) grad(n.a)[n.aux] += go[0];
      return;
    case Op::Sum:
      if (wants(n.a)) {
        double* g = grad(n.a);
        std::size_t s = nodes_[n.a].rows * nodes_[n.a].cols;
        for (std::size_t i = 0; i < s; ++i) g[i] += go[0];
      }
      return;
    case Op::Dot: {
      const double* A = val(n.a);
      const double* B = val(n.b);
      std::size_t s = nodes_[n.a].rows * nodes_[n.a].cols;
      if (wants(n.a)) {
        double* g = grad(n.a);
        for (std::size_t i = 0; i < s; ++i) g[i] += go[0] * B[i];
      }
      if (wants(n.b)) {
        double* g = grad(n.b);
        for (std::size_t i = 0; i < s; ++i) g[i] += go[0] * A[i];
      }
      return;
    }
    case Op::GatherSum:
      if (wants(n.a)) {
        double* g = grad(n.a);
        for (std::size_t i : n.indices) g[i] += go[0];
      }
      return;
  }
}

std::pair<Var, Var> lstm_cell(Graph& g, Var x, Var h, Var c, const LstmWeights& w) {
  std::size_t H = w.hidden;
  if (g.size(h) != H || g.size(c) != H) throw ShapeError("lstm_cell: state size differs from hidden size");
  if (w.weight->rows() != 4 * H || w.weight->cols() != g.size(x) + H)
    throw ShapeError("lstm_cell: weight shape does not match input/hidden sizes");
  Var gates = g.add(g.matmul(g.param(*w.weight), g.concat({x, h})), g.param(*w.bias));
  Var i = g.sigmoid(g.slice(gates, 0, H));
  Var f = g.sigmoid(g.slice(gates, H, H));
  Var cand = g.tanh(g.slice(gates, 2 * H, H));
  Var o = g.sigmoid(g.slice(gates, 3 * H, H));
  Var c_next = g.add(g.mul(f, c), g.mul(i, cand));
  Var h_next = g.mul(o, g.tanh(c_next));
  return {h_next, c_next};
}

}  // namespace branchsel::nn

// Dense double-precision tensors with a dynamic reverse-mode tape.
//
// A Tape is rebuilt for every forward pass. Each primitive computes its
// value eagerly, checks it is finite, and records a closure that adds the
// exact vector-Jacobian product into its inputs' gradients. Parameters
// enter the tape by name from a ParamStore so gradients can be collected
// per parameter after backward().
#pragma once

#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "evofit/common.hpp"

namespace evofit {

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s, double fill = 0.0) : shape(std::move(s)), data(count(shape), fill) {}
  Tensor(std::vector<std::size_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != count(shape)) fail("Tensor: data length does not match shape");
  }

  static std::size_t count(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }
  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }
  static Tensor from_matrix(const Matrix& m) { return Tensor({m.rows, m.cols}, m.data); }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  /// Rank-1 tensors read as a single row.
  std::size_t rows() const { return shape.size() == 1 ? 1 : shape[0]; }
  std::size_t cols() const { return shape.size() == 1 ? shape[0] : shape[1]; }
  double& operator()(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }
  double item() const {
    if (numel() != 1) fail("Tensor::item on a tensor with " + std::to_string(numel()) + " entries");
    return data[0];
  }
  Matrix to_matrix() const {
    Matrix m(rows(), cols());
    m.data = data;
    return m;
  }
  bool operator==(const Tensor&) const = default;
};

inline std::string shape_string(const std::vector<std::size_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

// ---------------------------------------------------------------- parameters

struct Param {
  Tensor value;
  bool is_matrix = false;  // rank >= 2, routed to Muon
};

/// Named trainable tensors, kept in name order so iteration (and the
/// checkpoint text) is deterministic.
class ParamStore {
public:
  void add(const std::string& name, Tensor value) {
    if (params_.count(name)) fail("ParamStore: duplicate parameter '" + name + "'");
    const bool is_matrix = value.rank() >= 2;
    params_.emplace(name, Param{std::move(value), is_matrix});
  }
  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  const Param& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) fail("ParamStore: missing parameter '" + name + "'");
    return it->second;
  }
  Param& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) fail("ParamStore: missing parameter '" + name + "'");
    return it->second;
  }
  const std::map<std::string, Param>& params() const { return params_; }
  std::map<std::string, Param>& params() { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t num_values() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += p.value.numel();
    return n;
  }

  std::map<std::string, std::string> meta;

  bool operator==(const ParamStore& o) const {
    if (meta != o.meta || params_.size() != o.params_.size()) return false;
    for (auto a = params_.begin(), b = o.params_.begin(); a != params_.end(); ++a, ++b)
      if (a->first != b->first || a->second.value != b->second.value || a->second.is_matrix != b->second.is_matrix)
        return false;
    return true;
  }

private:
  std::map<std::string, Param> params_;
};

/// Checkpoint text: "#paramstore v1", "#meta key value" lines, then per
/// parameter a "param <name> <rank> <dims...>" line and one line of
/// tab-separated %.17g values.
inline std::string write_checkpoint(const ParamStore& store) {
  std::string out = "#paramstore v1\n";
  for (const auto& [k, v] : store.meta) out += "#meta " + k + " " + v + "\n";
  for (const auto& [name, p] : store.params()) {
    out += "param " + name + " " + std::to_string(p.value.rank());
    for (auto d : p.value.shape) out += " " + std::to_string(d);
    out += "\n";
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      if (i) out += '\t';
      out += format_double(p.value.data[i]);
    }
    out += "\n";
  }
  return out;
}

inline ParamStore read_checkpoint(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.empty() || lines[0] != "#paramstore v1") fail("checkpoint: bad header");
  ParamStore store;
  std::size_t ln = 1;
  for (; ln < lines.size() && lines[ln].rfind("#meta ", 0) == 0; ++ln) {
    const std::string body = lines[ln].substr(6);
    const auto sp = body.find(' ');
    if (sp == std::string::npos) fail("checkpoint: bad meta line " + std::to_string(ln + 1));
    store.meta[body.substr(0, sp)] = body.substr(sp + 1);
  }
  for (; ln < lines.size(); ln += 2) {
    const auto head = split(lines[ln], ' ');
    const std::string where = "checkpoint line " + std::to_string(ln + 1);
    if (head.size() < 3 || head[0] != "param") fail(where + ": expected param line");
    const auto rank = static_cast<std::size_t>(parse_long(head[2], where));
    if (head.size() != 3 + rank) fail(where + ": rank/dims mismatch");
    std::vector<std::size_t> shape;
    for (std::size_t d = 0; d < rank; ++d) shape.push_back(static_cast<std::size_t>(parse_long(head[3 + d], where)));
    if (ln + 1 >= lines.size()) fail(where + ": missing payload");
    const auto fields = lines[ln + 1].empty() ? std::vector<std::string>{} : split(lines[ln + 1], '\t');
    if (fields.size() != Tensor::count(shape)) fail(where + ": payload size mismatch");
    std::vector<double> data;
    data.reserve(fields.size());
    for (const auto& f : fields) data.push_back(parse_double(f, where));
    store.add(head[1], Tensor(shape, std::move(data)));
  }
  return store;
}

// ---------------------------------------------------------------- tape

class Tape;

/// Handle to a tape node. Cheap to copy; valid while its Tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const std::vector<std::size_t>& shape() const { return value().shape; }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

class Tape {
public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), false, {}); }

  /// A trainable leaf bound to a ParamStore entry.
  Var param(const ParamStore& store, const std::string& name) {
    Var v = push(store.at(name).value, true, {});
    nodes_[v.id].param_name = name;
    return v;
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const Tensor& grad(Var v) const { return nodes_.at(v.id).grad; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Backward closures receive the node's upstream gradient and its value.
  using Backward = std::function<void(const Tensor& grad, const Tensor& out)>;

  /// Records an op output; the node requires grad if any input does.
  Var record(Tensor value, const std::vector<Var>& inputs, Backward backward, const char* op) {
    for (double x : value.data)
      if (!std::isfinite(x)) fail(std::string("non-finite value produced by ") + op);
    bool rg = false;
    for (Var in : inputs) rg = rg || nodes_.at(in.id).requires_grad;
    return push(std::move(value), rg, rg ? std::move(backward) : nullptr);
  }

  /// Accumulates into an input's gradient; no-op for constants.
  void accumulate(Var v, const Tensor& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.data.empty()) n.grad = Tensor(n.value.shape, 0.0);
    for (std::size_t i = 0; i < g.data.size(); ++i) n.grad.data[i] += g.data[i];
  }
  /// Direct access for ops that scatter into a gradient.
  Tensor* grad_buffer(Var v) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.data.empty()) n.grad = Tensor(n.value.shape, 0.0);
    return &n.grad;
  }

  /// Reverse sweep from a scalar; nodes are visited once, newest first.
  void backward(Var loss) {
    if (value(loss).numel() != 1) fail("backward: loss must be a scalar");
    for (auto& n : nodes_) n.grad.data.clear();
    Node& root = nodes_[loss.id];
    if (!root.requires_grad) return;
    root.grad = Tensor(root.value.shape, 1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.data.empty()) continue;
      // Closures only write into earlier nodes, so these references stay valid.
      n.backward(n.grad, n.value);
    }
  }

  /// Parameter gradients after backward(); untouched parameters get zeros.
  /// A parameter bound more than once has its gradients summed.
  std::map<std::string, Tensor> param_grads(const ParamStore& store) const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, p] : store.params()) out.emplace(name, Tensor(p.value.shape, 0.0));
    for (const auto& n : nodes_) {
      if (n.param_name.empty() || n.grad.data.empty()) continue;
      Tensor& g = out.at(n.param_name);
      for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i];
    }
    return out;
  }

private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
    std::string param_name;
  };

  Var push(Tensor value, bool rg, Backward backward) {
    nodes_.push_back({std::move(value), {}, rg, std::move(backward), {}});
    return Var{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

// ---------------------------------------------------------------- primitives

namespace detail {
inline void require(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}
inline void same_shape(Var a, Var b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                      shape_string(b.shape()));
}
inline void matrix(Var a, const char* op) {
  require(a.value().rank() == 2, std::string(op) + ": expected a rank-2 tensor, got " + shape_string(a.shape()));
}
}  // namespace detail

inline Var matmul(Var a, Var b) {
  detail::matrix(a, "matmul");
  detail::matrix(b, "matmul");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
  detail::require(B.rows() == k, "matmul: inner dimensions " + shape_string(A.shape) + " x " + shape_string(B.shape));
  Tensor out({n, m}, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A.data[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = &B.data[p * m];
      double* orow = &out.data[i * m];
      for (std::size_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
    }
  Tape* t = a.tape;
  return t->record(std::move(out), {a, b}, [t, a, b, n, k, m](const Tensor& g, const Tensor&) {
    const Tensor& A = t->value(a);
    const Tensor& B = t->value(b);
    if (Tensor* ga = t->grad_buffer(a))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          const double gij = g.data[i * m + j];
          if (gij == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) ga->data[i * k + p] += gij * B.data[p * m + j];
        }
    if (Tensor* gb = t->grad_buffer(b))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A.data[i * k + p];
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < m; ++j) gb->data[p * m + j] += aip * g.data[i * m + j];
        }
  }, "matmul");
}

inline Var add(Var a, Var b) {
  detail::same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.value().data[i];
  Tape* t = a.tape;
  return t->record(std::move(out), {a, b}, [t, a, b](const Tensor& g, const Tensor&) {
    t->accumulate(a, g);
    t->accumulate(b, g);
  }, "add");
}

inline Var sub(Var a, Var b) {
  detail::same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.value().data[i];
  Tape* t = a.tape;
  return t->record(std::move(out), {a, b}, [t, a, b](const Tensor& g, const Tensor&) {
    t->accumulate(a, g);
    Tensor neg = g;
    for (auto& x : neg.data) x = -x;
    t->accumulate(b, neg);
  }, "sub");
}

/// x (N x C) plus a bias row broadcast over N; bias is [C] or [1, C].
inline Var add_bias(Var x, Var bias) {
  detail::matrix(x, "add_bias");
  const std::size_t n = x.rows(), c = x.cols();
  detail::require(bias.value().numel() == c, "add_bias: bias length " + std::to_string(bias.value().numel()) +
                                                 " does not match " + std::to_string(c) + " columns");
  Tensor out = x.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] += bias.value().data[j];
  Tape* t = x.tape;
  return t->record(std::move(out), {x, bias}, [t, x, bias, n, c](const Tensor& g, const Tensor&) {
    t->accumulate(x, g);
    if (Tensor* gb = t->grad_buffer(bias))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) gb->data[j] += g.data[i * c + j];
  }, "add_bias");
}

/// x (N x C) times a scale row broadcast over N.
inline Var mul_row(Var x, Var scale) {
  detail::matrix(x, "mul_row");
  const std::size_t n = x.rows(), c = x.cols();
  detail::require(scale.value().numel() == c, "mul_row: scale length does not match columns");
  Tensor out = x.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] *= scale.value().data[j];
  Tape* t = x.tape;
  return t->record(std::move(out), {x, scale}, [t, x, scale, n, c](const Tensor& g, const Tensor&) {
    const Tensor& X = t->value(x);
    const Tensor& S = t->value(scale);
    if (Tensor* gx = t->grad_buffer(x))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) gx->data[i * c + j] += g.data[i * c + j] * S.data[j];
    if (Tensor* gs = t->grad_buffer(scale))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) gs->data[j] += g.data[i * c + j] * X.data[i * c + j];
  }, "mul_row");
}

inline Var mul(Var a, Var b) {
  detail::same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.value().data[i];
  Tape* t = a.tape;
  return t->record(std::move(out), {a, b}, [t, a, b](const Tensor& g, const Tensor&) {
    const Tensor& A = t->value(a);
    const Tensor& B = t->value(b);
    if (Tensor* ga = t->grad_buffer(a))
      for (std::size_t i = 0; i < g.data.size(); ++i) ga->data[i] += g.data[i] * B.data[i];
    if (Tensor* gb = t->grad_buffer(b))
      for (std::size_t i = 0; i < g.data.size(); ++i) gb->data[i] += g.data[i] * A.data[i];
  }, "mul");
}

inline Var scale(Var x, double c) {
  Tensor out = x.value();
  for (auto& v : out.data) v *= c;
  Tape* t = x.tape;
  return t->record(std::move(out), {x}, [t, x, c](const Tensor& g, const Tensor&) {
    Tensor s = g;
    for (auto& v : s.data) v *= c;
    t->accumulate(x, s);
  }, "scale");
}

namespace detail {
/// Elementwise op with derivative expressed through input x and output y.
template <class F, class D>
Var unary(Var x, F f, D dfdx, const char* op) {
  Tensor out = x.value();
  for (auto& v : out.data) v = f(v);
  Tape* t = x.tape;
  return t->record(std::move(out), {x}, [t, x, dfdx](const Tensor& g, const Tensor& y) {
    const Tensor& X = t->value(x);
    if (Tensor* gx = t->grad_buffer(x))
      for (std::size_t i = 0; i < g.data.size(); ++i) gx->data[i] += g.data[i] * dfdx(X.data[i], y.data[i]);
  }, op);
}
}  // namespace detail

inline Var relu(Var x) {
  return detail::unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
                       [](double v, double) { return v > 0.0 ? 1.0 : 0.0; }, "relu");
}

inline Var sigmoid(Var x) {
  return detail::unary(x, [](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
                       [](double, double y) { return y * (1.0 - y); }, "sigmoid");
}

inline Var exp(Var x) {
  return detail::unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; }, "exp");
}

inline Var log(Var x) {
  for (double v : x.value().data)
    if (!(v > 0.0)) fail("log: non-positive input");
  return detail::unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; }, "log");
}

/// Row-wise softmax, max-shifted.
inline Var softmax_rows(Var x) {
  detail::require(x.value().rank() <= 2, "softmax_rows: expected rank <= 2");
  const std::size_t n = x.rows(), c = x.cols();
  Tensor out = x.value();
  for (std::size_t i = 0; i < n; ++i) {
    double* row = &out.data[i * c];
    const double mx = *std::max_element(row, row + c);
    if (!std::isfinite(mx)) fail("softmax_rows: non-finite row");
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += (row[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) row[j] /= sum;
  }
  Tape* t = x.tape;
  return t->record(std::move(out), {x}, [t, x, n, c](const Tensor& g, const Tensor& y) {
    Tensor* gx = t->grad_buffer(x);
    if (!gx) return;
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g.data[i * c + j] * y.data[i * c + j];
      for (std::size_t j = 0; j < c; ++j) gx->data[i * c + j] += y.data[i * c + j] * (g.data[i * c + j] - dot);
    }
  }, "softmax_rows");
}

/// Row-wise (x - mean) / sqrt(var + eps) without affine terms.
inline Var layer_norm_rows(Var x, double eps = 1e-5) {
  detail::matrix(x, "layer_norm_rows");
  const std::size_t n = x.rows(), c = x.cols();
  Tensor out = x.value();
  std::vector<double> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    double* row = &out.data[i * c];
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) row[j] = (row[j] - mean) * inv_std[i];
  }
  Tape* t = x.tape;
  return t->record(std::move(out), {x}, [t, x, inv = std::move(inv_std), n, c](const Tensor& g, const Tensor& xh) {
    Tensor* gx = t->grad_buffer(x);
    if (!gx) return;
    const double cn = static_cast<double>(c);
    for (std::size_t i = 0; i < n; ++i) {
      double sg = 0.0, sgx = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        sg += g.data[i * c + j];
        sgx += g.data[i * c + j] * xh.data[i * c + j];
      }
      for (std::size_t j = 0; j < c; ++j)
        gx->data[i * c + j] += inv[i] * (g.data[i * c + j] - sg / cn - xh.data[i * c + j] * sgx / cn);
    }
  }, "layer_norm_rows");
}

/// out[r] = x[index[r]]; backward scatter-adds, so repeats are allowed.
inline Var gather_rows(Var x, std::vector<std::size_t> index) {
  const std::size_t c = x.cols();
  const std::size_t n_in = x.rows();
  Tensor out({index.size(), c}, 0.0);
  for (std::size_t r = 0; r < index.size(); ++r) {
    detail::require(index[r] < n_in, "gather_rows: index " + std::to_string(index[r]) + " out of range");
    std::copy_n(&x.value().data[index[r] * c], c, &out.data[r * c]);
  }
  Tape* t = x.tape;
  return t->record(std::move(out), {x}, [t, x, idx = std::move(index), c](const Tensor& g, const Tensor&) {
    Tensor* gx = t->grad_buffer(x);
    if (!gx) return;
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < c; ++j) gx->data[idx[r] * c + j] += g.data[r * c + j];
  }, "gather_rows");
}

/// out[k] = mean of x rows r with dest[r] == k; empty segments give zeros.
inline Var scatter_mean(Var x, std::vector<std::size_t> dest, std::size_t n_out) {
  detail::matrix(x, "scatter_mean");
  const std::size_t c = x.cols();
  detail::require(dest.size() == x.rows(), "scatter_mean: destination count does not match rows");
  std::vector<double> inv_count(n_out, 0.0);
  for (auto d : dest) {
    detail::require(d < n_out, "scatter_mean: destination out of range");
    inv_count[d] += 1.0;
  }
  for (auto& v : inv_count) v = v > 0 ? 1.0 / v : 0.0;
  Tensor out({n_out, c}, 0.0);
  for (std::size_t r = 0; r < dest.size(); ++r)
    for (std::size_t j = 0; j < c; ++j) out.data[dest[r] * c + j] += x.value().data[r * c + j] * inv_count[dest[r]];
  Tape* t = x.tape;
  return t->record(std::move(out), {x}, [t, x, d = std::move(dest), inv = std::move(inv_count), c](const Tensor& g, const Tensor&) {
    Tensor* gx = t->grad_buffer(x);
    if (!gx) return;
    for (std::size_t r = 0; r < d.size(); ++r)
      for (std::size_t j = 0; j < c; ++j) gx->data[r * c + j] += g.data[d[r] * c + j] * inv[d[r]];
  }, "scatter_mean");
}

/// Each row repeated k times consecutively: (N x C) -> (kN x C).
inline Var repeat_rows(Var x, std::size_t k) {
  const std::size_t n = x.rows(), c = x.cols();
  Tensor out({n * k, c}, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t r = 0; r < k; ++r) std::copy_n(&x.value().data[i * c], c, &out.data[(i * k + r) * c]);
  Tape* t = x.tape;
  return t->record(std::move(out), {x}, [t, x, n, k, c](const Tensor& g, const Tensor&) {
    Tensor* gx = t->grad_buffer(x);
    if (!gx) return;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t r = 0; r < k; ++r)
        for (std::size_t j = 0; j < c; ++j) gx->data[i * c + j] += g.data[(i * k + r) * c + j];
  }, "repeat_rows");
}

/// Channel norms of 3-vector features stored as (3N x C), rows grouped
/// xyz per node: out(i, c) = sqrt(sum_k V(3i+k, c)^2 + eps). The eps keeps
/// the gradient finite at zero vectors.
inline Var l2_norm_vectors(Var v, double eps = 1e-8) {
  detail::matrix(v, "l2_norm_vectors");
  detail::require(v.rows() % 3 == 0, "l2_norm_vectors: row count must be a multiple of 3");
  const std::size_t n = v.rows() / 3, c = v.cols();
  Tensor out({n, c}, 0.0);
  const Tensor& V = v.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      double s = eps;
      for (std::size_t k = 0; k < 3; ++k) s += V.data[(3 * i + k) * c + j] * V.data[(3 * i + k) * c + j];
      out.data[i * c + j] = std::sqrt(s);
    }
  Tape* t = v.tape;
  return t->record(std::move(out), {v}, [t, v, n, c](const Tensor& g, const Tensor& y) {
    Tensor* gv = t->grad_buffer(v);
    if (!gv) return;
    const Tensor& V = t->value(v);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        const double f = g.data[i * c + j] / y.data[i * c + j];
        for (std::size_t k = 0; k < 3; ++k) gv->data[(3 * i + k) * c + j] += f * V.data[(3 * i + k) * c + j];
      }
  }, "l2_norm_vectors");
}

inline Var concat_cols(const std::vector<Var>& parts) {
  detail::require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t n = parts.front().rows();
  std::size_t total = 0;
  for (Var p : parts) {
    detail::require(p.rows() == n, "concat_cols: row count mismatch");
    total += p.cols();
  }
  Tensor out({n, total}, 0.0);
  std::size_t off = 0;
  std::vector<std::size_t> offsets;
  for (Var p : parts) {
    offsets.push_back(off);
    const std::size_t c = p.cols();
    for (std::size_t i = 0; i < n; ++i) std::copy_n(&p.value().data[i * c], c, &out.data[i * total + off]);
    off += c;
  }
  Tape* t = parts.front().tape;
  return t->record(std::move(out), parts, [t, ps = parts, offsets, n, total](const Tensor& g, const Tensor&) {
    for (std::size_t k = 0; k < ps.size(); ++k) {
      Tensor* gp = t->grad_buffer(ps[k]);
      if (!gp) continue;
      const std::size_t c = t->value(ps[k]).cols();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) gp->data[i * c + j] += g.data[i * total + offsets[k] + j];
    }
  }, "concat_cols");
}

inline Var slice_cols(Var x, std::size_t start, std::size_t len) {
  detail::matrix(x, "slice_cols");
  const std::size_t n = x.rows(), c = x.cols();
  detail::require(start + len <= c, "slice_cols: range out of bounds");
  Tensor out({n, len}, 0.0);
  for (std::size_t i = 0; i < n; ++i) std::copy_n(&x.value().data[i * c + start], len, &out.data[i * len]);
  Tape* t = x.tape;
  return t->record(std::move(out), {x}, [t, x, n, c, start, len](const Tensor& g, const Tensor&) {
    Tensor* gx = t->grad_buffer(x);
    if (!gx) return;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < len; ++j) gx->data[i * c + start + j] += g.data[i * len + j];
  }, "slice_cols");
}

inline Var transpose(Var x) {
  detail::matrix(x, "transpose");
  const std::size_t n = x.rows(), c = x.cols();
  Tensor out({c, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out.data[j * n + i] = x.value().data[i * c + j];
  Tape* t = x.tape;
  return t->record(std::move(out), {x}, [t, x, n, c](const Tensor& g, const Tensor&) {
    Tensor* gx = t->grad_buffer(x);
    if (!gx) return;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) gx->data[i * c + j] += g.data[j * n + i];
  }, "transpose");
}

/// out[k] = x(rows[k], cols[k]) as a rank-1 tensor.
inline Var pick(Var x, std::vector<std::size_t> rows, std::vector<std::size_t> cols) {
  detail::require(rows.size() == cols.size(), "pick: index lists differ in length");
  const std::size_t c = x.cols();
  Tensor out({rows.size()}, 0.0);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    detail::require(rows[k] < x.rows() && cols[k] < c, "pick: index out of range");
    out.data[k] = x.value().data[rows[k] * c + cols[k]];
  }
  Tape* t = x.tape;
  return t->record(std::move(out), {x}, [t, x, r = std::move(rows), cc = std::move(cols), c](const Tensor& g, const Tensor&) {
    Tensor* gx = t->grad_buffer(x);
    if (!gx) return;
    for (std::size_t k = 0; k < r.size(); ++k) gx->data[r[k] * c + cc[k]] += g.data[k];
  }, "pick");
}

inline Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data) s += v;
  Tape* t = x.tape;
  return t->record(Tensor::scalar(s), {x}, [t, x](const Tensor& g, const Tensor&) {
    t->accumulate(x, Tensor(t->value(x).shape, g.data[0]));
  }, "sum");
}

inline Var mean(Var x) {
  detail::require(x.value().numel() > 0, "mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.value().numel()));
}

// ---------------------------------------------------------------- gradient check

/// A scalar-valued graph over a parameter store.
using ScalarGraph = std::function<Var(Tape&, const ParamStore&)>;

struct GradCheckOptions {
  double eps = 1e-5;
  // 0 checks every entry; otherwise a deterministic stride subset per tensor.
  std::size_t max_entries_per_param = 0;
};

/// Central differences against tape gradients; returns the maximum over all
/// checked entries of |g_ad - g_fd| / max(1, |g_fd|).
inline double grad_check(const ScalarGraph& f, const ParamStore& params, const GradCheckOptions& opts = {}) {
  if (!(opts.eps >= 1e-6 && opts.eps <= 1e-4)) fail("grad_check: eps must be in [1e-6, 1e-4]");
  std::map<std::string, Tensor> analytic;
  {
    Tape tape;
    Var loss = f(tape, params);
    tape.backward(loss);
    analytic = tape.param_grads(params);
  }
  auto eval = [&](const ParamStore& p) {
    Tape tape;
    const double v = f(tape, p).value().item();
    if (!std::isfinite(v)) fail("grad_check: non-finite loss");
    return v;
  };
  ParamStore probe = params;
  double worst = 0.0;
  for (const auto& [name, p] : params.params()) {
    const std::size_t n = p.value.numel();
    std::size_t stride = 1;
    if (opts.max_entries_per_param > 0 && n > opts.max_entries_per_param)
      stride = (n + opts.max_entries_per_param - 1) / opts.max_entries_per_param;
    auto& slot = probe.at(name).value.data;
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = slot[i];
      slot[i] = orig + opts.eps;
      const double up = eval(probe);
      slot[i] = orig - opts.eps;
      const double down = eval(probe);
      slot[i] = orig;
      const double fd = (up - down) / (2.0 * opts.eps);
      const double ad = analytic.at(name).data[i];
      worst = std::max(worst, std::abs(ad - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  return worst;
}

}  // namespace evofit

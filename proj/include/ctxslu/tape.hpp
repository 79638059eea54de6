#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ctxslu/params.hpp"
#include "ctxslu/rng.hpp"
#include "ctxslu/tensor.hpp"

namespace ctxslu {

// Handle to a node on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

inline bool operator==(Var a, Var b) { return a.id == b.id; }

namespace detail {

inline double stable_sigmoid(double x) {
  if (x >= 0.0) {
    double z = std::exp(-x);
    return 1.0 / (1.0 + z);
  }
  double z = std::exp(x);
  return z / (1.0 + z);
}

// log(sum_i exp(x_i)) with the max subtracted.
inline double logsumexp(const std::vector<double>& x) {
  double m = x[0];
  for (double v : x) m = std::max(m, v);
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace detail

// Record of primitive operations in execution order (a valid topological
// order by construction: an op's inputs are created before it). backward()
// replays the record once in reverse, accumulating parameter gradients into
// the bound ParameterStore.
//
// A tape and its tensors belong to one thread; distinct tapes may run in
// parallel over the same (read-only) parameter values as long as gradient
// accumulation is not concurrent.
class Tape {
 public:
  explicit Tape(ParameterStore* store = nullptr) : store_(store) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  int size() const { return static_cast<int>(nodes_.size()); }

  const Tensor& value(Var v) const { return node(v).value; }

  ParameterStore* store() const { return store_; }

  // ---- leaves ----

  Var constant(Tensor t) {
    Node n;
    n.op = Op::Constant;
    n.value = std::move(t);
    return push(std::move(n));
  }

  Var scalar(double v) { return constant(Tensor::scalar(v)); }

  Var zeros(const Shape& shape) { return constant(Tensor(shape)); }

  // One node per store entry per tape: repeated binds of the same parameter
  // return the same Var, so shared weights are shared nodes.
  Var param(int store_idx) {
    if (!store_) throw std::logic_error("tape has no parameter store");
    auto it = param_nodes_.find(store_idx);
    if (it != param_nodes_.end()) return it->second;
    Node n;
    n.op = Op::Param;
    n.store_idx = store_idx;
    n.value = store_->value(store_idx);
    Var v = push(std::move(n));
    param_nodes_.emplace(store_idx, v);
    return v;
  }

  Var param(const std::string& name) {
    if (!store_) throw std::logic_error("tape has no parameter store");
    int idx = store_->find(name);
    if (idx < 0) throw std::invalid_argument("unknown parameter '" + name + "'");
    return param(idx);
  }

  // ---- primitive operations ----

  // C = A * B for 2-D A (m x n), B (n x p).
  Var matmul(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.ndim() != 2 || tb.ndim() != 2 || ta.cols() != tb.rows()) {
      fail_shapes("matmul", ta.shape, tb.shape);
    }
    Node n;
    n.op = Op::MatMul;
    n.inputs = {a.id, b.id};
    n.value = Tensor({ta.rows(), tb.cols()});
    for (int i = 0; i < ta.rows(); ++i) {
      for (int k = 0; k < ta.cols(); ++k) {
        double aik = ta.at(i, k);
        if (aik == 0.0) continue;
        for (int j = 0; j < tb.cols(); ++j) n.value.at(i, j) += aik * tb.at(k, j);
      }
    }
    return push(std::move(n));
  }

  // y = A * x for A (m x n), x (n).
  Var matvec(Var a, Var x) {
    const Tensor& ta = value(a);
    const Tensor& tx = value(x);
    if (ta.ndim() != 2 || tx.ndim() != 1 || ta.cols() != tx.dim(0)) {
      fail_shapes("matvec", ta.shape, tx.shape);
    }
    Node n;
    n.op = Op::MatVec;
    n.inputs = {a.id, x.id};
    n.value = Tensor({ta.rows()});
    for (int i = 0; i < ta.rows(); ++i) {
      double s = 0.0;
      const double* row = &ta.data[static_cast<size_t>(i) * ta.cols()];
      for (int j = 0; j < ta.cols(); ++j) s += row[j] * tx.at(j);
      n.value.at(i) = s;
    }
    return push(std::move(n));
  }

  // y = A^T * x for A (m x n), x (m).
  Var matvec_t(Var a, Var x) {
    const Tensor& ta = value(a);
    const Tensor& tx = value(x);
    if (ta.ndim() != 2 || tx.ndim() != 1 || ta.rows() != tx.dim(0)) {
      fail_shapes("matvec_t", ta.shape, tx.shape);
    }
    Node n;
    n.op = Op::MatVecT;
    n.inputs = {a.id, x.id};
    n.value = Tensor({ta.cols()});
    for (int i = 0; i < ta.rows(); ++i) {
      double xi = tx.at(i);
      if (xi == 0.0) continue;
      const double* row = &ta.data[static_cast<size_t>(i) * ta.cols()];
      for (int j = 0; j < ta.cols(); ++j) n.value.at(j) += row[j] * xi;
    }
    return push(std::move(n));
  }

  Var add(Var a, Var b) { return add_n({a, b}); }

  Var add_n(const std::vector<Var>& xs) {
    if (xs.empty()) throw std::invalid_argument("add_n of no inputs");
    Node n;
    n.op = Op::AddN;
    n.value = value(xs[0]);
    n.inputs.push_back(xs[0].id);
    for (size_t i = 1; i < xs.size(); ++i) {
      const Tensor& t = value(xs[i]);
      if (!same_shape(t, n.value)) fail_shapes("add", n.value.shape, t.shape);
      for (size_t k = 0; k < t.data.size(); ++k) n.value.data[k] += t.data[k];
      n.inputs.push_back(xs[i].id);
    }
    return push(std::move(n));
  }

  // Elementwise product, same shapes.
  Var mul(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (!same_shape(ta, tb)) fail_shapes("mul", ta.shape, tb.shape);
    Node n;
    n.op = Op::Mul;
    n.inputs = {a.id, b.id};
    n.value = ta;
    for (size_t k = 0; k < tb.data.size(); ++k) n.value.data[k] *= tb.data[k];
    return push(std::move(n));
  }

  // Elementwise a*x + b with constant coefficients (covers scaling and 1-x).
  Var affine(Var x, double a, double b) {
    Node n;
    n.op = Op::Affine;
    n.inputs = {x.id};
    n.coeff_a = a;
    n.coeff_b = b;
    n.value = value(x);
    for (double& v : n.value.data) v = a * v + b;
    return push(std::move(n));
  }

  Var scale(Var x, double a) { return affine(x, a, 0.0); }

  Var one_minus(Var x) { return affine(x, -1.0, 1.0); }

  // Concatenation of 1-D tensors into one 1-D tensor.
  Var concat(const std::vector<Var>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat of no inputs");
    Node n;
    n.op = Op::Concat;
    int total = 0;
    for (Var v : xs) {
      const Tensor& t = value(v);
      if (t.ndim() != 1) {
        throw std::invalid_argument("concat expects 1-D inputs, got " + shape_str(t.shape));
      }
      total += t.dim(0);
      n.inputs.push_back(v.id);
    }
    n.value = Tensor({total});
    int off = 0;
    for (Var v : xs) {
      const Tensor& t = value(v);
      std::copy(t.data.begin(), t.data.end(), n.value.data.begin() + off);
      off += t.dim(0);
    }
    return push(std::move(n));
  }

  // Stack k same-length 1-D tensors into a (k x d) matrix.
  Var stack_rows(const std::vector<Var>& rows) {
    if (rows.empty()) throw std::invalid_argument("stack_rows of no inputs");
    int d = value(rows[0]).dim(0);
    Node n;
    n.op = Op::StackRows;
    n.value = Tensor({static_cast<int>(rows.size()), d});
    for (size_t r = 0; r < rows.size(); ++r) {
      const Tensor& t = value(rows[r]);
      if (t.ndim() != 1 || t.dim(0) != d) fail_shapes("stack_rows", Shape{d}, t.shape);
      std::copy(t.data.begin(), t.data.end(), n.value.data.begin() + static_cast<long>(r) * d);
      n.inputs.push_back(rows[r].id);
    }
    return push(std::move(n));
  }

  Var sigmoid(Var x) {
    Node n;
    n.op = Op::Sigmoid;
    n.inputs = {x.id};
    n.value = value(x);
    for (double& v : n.value.data) v = detail::stable_sigmoid(v);
    return push(std::move(n));
  }

  Var tanh(Var x) {
    Node n;
    n.op = Op::Tanh;
    n.inputs = {x.id};
    n.value = value(x);
    for (double& v : n.value.data) v = std::tanh(v);
    return push(std::move(n));
  }

  // Numerically stable softmax over a non-empty 1-D tensor.
  Var softmax(Var x) {
    const Tensor& tx = value(x);
    if (tx.ndim() != 1) {
      throw std::invalid_argument("softmax expects a 1-D tensor, got " + shape_str(tx.shape));
    }
    if (tx.dim(0) == 0) throw std::invalid_argument("softmax over an empty vector");
    Node n;
    n.op = Op::Softmax;
    n.inputs = {x.id};
    n.value = tx;
    double m = *std::max_element(tx.data.begin(), tx.data.end());
    double s = 0.0;
    for (double& v : n.value.data) {
      v = std::exp(v - m);
      s += v;
    }
    for (double& v : n.value.data) v /= s;
    return push(std::move(n));
  }

  // Inner product of two equal-length 1-D tensors; scalar result.
  Var dot(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.ndim() != 1 || !same_shape(ta, tb)) fail_shapes("dot", ta.shape, tb.shape);
    Node n;
    n.op = Op::Dot;
    n.inputs = {a.id, b.id};
    double s = 0.0;
    for (size_t k = 0; k < ta.data.size(); ++k) s += ta.data[k] * tb.data[k];
    n.value = Tensor::scalar(s);
    return push(std::move(n));
  }

  // Row lookup in a 2-D table (embedding read).
  Var embed(Var table, int row) {
    const Tensor& tt = value(table);
    if (tt.ndim() != 2) {
      throw std::invalid_argument("embed expects a 2-D table, got " + shape_str(tt.shape));
    }
    if (row < 0 || row >= tt.rows()) {
      throw std::invalid_argument("embed row " + std::to_string(row) + " out of range [0," +
                                  std::to_string(tt.rows()) + ")");
    }
    Node n;
    n.op = Op::Embed;
    n.inputs = {table.id};
    n.index = row;
    n.value = Tensor({tt.cols()});
    std::copy(tt.data.begin() + static_cast<long>(row) * tt.cols(),
              tt.data.begin() + static_cast<long>(row + 1) * tt.cols(), n.value.data.begin());
    return push(std::move(n));
  }

  // Inverted dropout: surviving entries are scaled by 1/keep_prob at train
  // time so evaluation applies no rescaling. keep_prob = 1 is the identity.
  Var dropout(Var x, double keep_prob, RngState& rng) {
    if (!(keep_prob > 0.0 && keep_prob <= 1.0)) {
      throw std::invalid_argument("dropout keep probability must be in (0,1], got " +
                                  std::to_string(keep_prob));
    }
    if (keep_prob == 1.0) return x;
    Node n;
    n.op = Op::Dropout;
    n.inputs = {x.id};
    n.value = value(x);
    n.mask.resize(n.value.data.size());
    for (size_t k = 0; k < n.mask.size(); ++k) {
      n.mask[k] = rng.bernoulli(keep_prob) ? 1.0 / keep_prob : 0.0;
      n.value.data[k] *= n.mask[k];
    }
    return push(std::move(n));
  }

  // -log softmax(logits)[target], fused for stability; scalar result.
  Var nll_logits(Var logits, int target) {
    const Tensor& tl = value(logits);
    if (tl.ndim() != 1 || tl.dim(0) == 0) {
      throw std::invalid_argument("nll_logits expects a non-empty 1-D tensor, got " +
                                  shape_str(tl.shape));
    }
    if (target < 0 || target >= tl.dim(0)) {
      throw std::invalid_argument("target index " + std::to_string(target) +
                                  " out of range [0," + std::to_string(tl.dim(0)) + ")");
    }
    Node n;
    n.op = Op::NllLogits;
    n.inputs = {logits.id};
    n.index = target;
    double lse = detail::logsumexp(tl.data);
    n.cache.resize(tl.data.size());
    for (size_t k = 0; k < tl.data.size(); ++k) n.cache[k] = std::exp(tl.data[k] - lse);
    n.value = Tensor::scalar(lse - tl.at(target));
    return push(std::move(n));
  }

  // ---- reverse sweep ----

  // Accumulates d(loss)/d(param) into the store's gradient accumulators for
  // every parameter bound on this tape. Parameters the loss does not reach
  // receive nothing (their accumulators keep whatever they held, zero after
  // zero_grads). May be called repeatedly; node-level adjoints are reset per
  // call, store accumulators are not.
  void backward(Var loss) {
    const Tensor& lt = value(loss);
    if (!lt.is_scalar()) {
      throw std::invalid_argument("backward requires a scalar loss, got shape " +
                                  shape_str(lt.shape));
    }
    grads_.assign(nodes_.size(), Tensor());
    grad_of(loss.id) = Tensor::scalar(1.0);

    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      Tensor& g = grads_[static_cast<size_t>(id)];
      if (g.data.empty()) continue;  // not reached by the loss

      switch (n.op) {
        case Op::Constant:
          break;
        case Op::Param:
          if (store_) {
            Tensor& acc = store_->grad(n.store_idx);
            for (size_t k = 0; k < acc.data.size(); ++k) acc.data[k] += g.data[k];
          }
          break;
        case Op::MatMul: {
          const Tensor& a = nodes_[n.inputs[0]].value;
          const Tensor& b = nodes_[n.inputs[1]].value;
          Tensor& ga = grad_in(n.inputs[0]);
          Tensor& gb = grad_in(n.inputs[1]);
          for (int i = 0; i < a.rows(); ++i) {
            for (int j = 0; j < b.cols(); ++j) {
              double gij = g.at(i, j);
              if (gij == 0.0) continue;
              for (int k = 0; k < a.cols(); ++k) {
                ga.at(i, k) += gij * b.at(k, j);
                gb.at(k, j) += a.at(i, k) * gij;
              }
            }
          }
          break;
        }
        case Op::MatVec: {
          const Tensor& a = nodes_[n.inputs[0]].value;
          const Tensor& x = nodes_[n.inputs[1]].value;
          Tensor& ga = grad_in(n.inputs[0]);
          Tensor& gx = grad_in(n.inputs[1]);
          for (int i = 0; i < a.rows(); ++i) {
            double gi = g.at(i);
            if (gi == 0.0) continue;
            double* garow = &ga.data[static_cast<size_t>(i) * a.cols()];
            const double* arow = &a.data[static_cast<size_t>(i) * a.cols()];
            for (int j = 0; j < a.cols(); ++j) {
              garow[j] += gi * x.at(j);
              gx.at(j) += arow[j] * gi;
            }
          }
          break;
        }
        case Op::MatVecT: {
          const Tensor& a = nodes_[n.inputs[0]].value;
          const Tensor& x = nodes_[n.inputs[1]].value;
          Tensor& ga = grad_in(n.inputs[0]);
          Tensor& gx = grad_in(n.inputs[1]);
          for (int i = 0; i < a.rows(); ++i) {
            double xi = x.at(i);
            double acc = 0.0;
            double* garow = &ga.data[static_cast<size_t>(i) * a.cols()];
            const double* arow = &a.data[static_cast<size_t>(i) * a.cols()];
            for (int j = 0; j < a.cols(); ++j) {
              garow[j] += xi * g.at(j);
              acc += arow[j] * g.at(j);
            }
            gx.at(i) += acc;
          }
          break;
        }
        case Op::AddN:
          for (int in : n.inputs) {
            Tensor& gi = grad_in(in);
            for (size_t k = 0; k < g.data.size(); ++k) gi.data[k] += g.data[k];
          }
          break;
        case Op::Mul: {
          const Tensor& a = nodes_[n.inputs[0]].value;
          const Tensor& b = nodes_[n.inputs[1]].value;
          Tensor& ga = grad_in(n.inputs[0]);
          Tensor& gb = grad_in(n.inputs[1]);
          for (size_t k = 0; k < g.data.size(); ++k) {
            ga.data[k] += g.data[k] * b.data[k];
            gb.data[k] += g.data[k] * a.data[k];
          }
          break;
        }
        case Op::Affine: {
          Tensor& gx = grad_in(n.inputs[0]);
          for (size_t k = 0; k < g.data.size(); ++k) gx.data[k] += n.coeff_a * g.data[k];
          break;
        }
        case Op::Concat: {
          int off = 0;
          for (int in : n.inputs) {
            Tensor& gi = grad_in(in);
            int d = static_cast<int>(gi.data.size());
            for (int k = 0; k < d; ++k) gi.data[static_cast<size_t>(k)] += g.data[static_cast<size_t>(off + k)];
            off += d;
          }
          break;
        }
        case Op::StackRows: {
          int d = n.value.cols();
          for (size_t r = 0; r < n.inputs.size(); ++r) {
            Tensor& gi = grad_in(n.inputs[r]);
            for (int k = 0; k < d; ++k) gi.data[static_cast<size_t>(k)] += g.data[r * d + k];
          }
          break;
        }
        case Op::Sigmoid: {
          Tensor& gx = grad_in(n.inputs[0]);
          for (size_t k = 0; k < g.data.size(); ++k) {
            double y = n.value.data[k];
            gx.data[k] += g.data[k] * y * (1.0 - y);
          }
          break;
        }
        case Op::Tanh: {
          Tensor& gx = grad_in(n.inputs[0]);
          for (size_t k = 0; k < g.data.size(); ++k) {
            double y = n.value.data[k];
            gx.data[k] += g.data[k] * (1.0 - y * y);
          }
          break;
        }
        case Op::Softmax: {
          Tensor& gx = grad_in(n.inputs[0]);
          double gy = 0.0;
          for (size_t k = 0; k < g.data.size(); ++k) gy += g.data[k] * n.value.data[k];
          for (size_t k = 0; k < g.data.size(); ++k) {
            gx.data[k] += n.value.data[k] * (g.data[k] - gy);
          }
          break;
        }
        case Op::Dot: {
          const Tensor& a = nodes_[n.inputs[0]].value;
          const Tensor& b = nodes_[n.inputs[1]].value;
          Tensor& ga = grad_in(n.inputs[0]);
          Tensor& gb = grad_in(n.inputs[1]);
          double gs = g.data[0];
          for (size_t k = 0; k < a.data.size(); ++k) {
            ga.data[k] += gs * b.data[k];
            gb.data[k] += gs * a.data[k];
          }
          break;
        }
        case Op::Embed: {
          Tensor& gt = grad_in(n.inputs[0]);
          int cols = static_cast<int>(g.data.size());
          double* row = &gt.data[static_cast<size_t>(n.index) * cols];
          for (int k = 0; k < cols; ++k) row[k] += g.data[static_cast<size_t>(k)];
          break;
        }
        case Op::Dropout: {
          Tensor& gx = grad_in(n.inputs[0]);
          for (size_t k = 0; k < g.data.size(); ++k) gx.data[k] += g.data[k] * n.mask[k];
          break;
        }
        case Op::NllLogits: {
          Tensor& gx = grad_in(n.inputs[0]);
          double gl = g.data[0];
          for (size_t k = 0; k < gx.data.size(); ++k) gx.data[k] += gl * n.cache[k];
          gx.data[static_cast<size_t>(n.index)] -= gl;
          break;
        }
      }
    }
  }

 private:
  enum class Op {
    Constant,
    Param,
    MatMul,
    MatVec,
    MatVecT,
    AddN,
    Mul,
    Affine,
    Concat,
    StackRows,
    Sigmoid,
    Tanh,
    Softmax,
    Dot,
    Embed,
    Dropout,
    NllLogits,
  };

  struct Node {
    Op op = Op::Constant;
    std::vector<int> inputs;
    Tensor value;
    int store_idx = -1;          // Param
    int index = -1;              // Embed row / NllLogits target
    double coeff_a = 1.0;        // Affine
    double coeff_b = 0.0;        // Affine
    std::vector<double> mask;    // Dropout (includes the 1/keep scale)
    std::vector<double> cache;   // NllLogits softmax probabilities
  };

  Var push(Node n) {
    if (!n.value.all_finite()) {
      throw std::runtime_error("non-finite value produced by a forward operation");
    }
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Node& node(Var v) const {
    if (v.id < 0 || v.id >= size()) throw std::invalid_argument("invalid tape handle");
    return nodes_[static_cast<size_t>(v.id)];
  }

  Tensor& grad_of(int id) {
    Tensor& g = grads_[static_cast<size_t>(id)];
    if (g.data.empty()) g = Tensor(nodes_[static_cast<size_t>(id)].value.shape);
    return g;
  }

  Tensor& grad_in(int id) { return grad_of(id); }

  [[noreturn]] static void fail_shapes(const char* op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a) +
                                " and " + shape_str(b));
  }

  ParameterStore* store_;
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::unordered_map<int, Var> param_nodes_;
};

// Maximum relative error between analytic gradients (reverse sweep) and
// central finite differences over every entry of every parameter. The builder
// must be deterministic (dropout off): it is invoked twice up front and the
// two loss values must agree bit-for-bit, otherwise the check is rejected.
inline double grad_check(const std::function<Var(Tape&)>& build, ParameterStore& store,
                         double step) {
  if (!(step > 0.0)) {
    throw std::invalid_argument("grad_check step must be positive, got " + std::to_string(step));
  }
  auto eval = [&]() {
    Tape t(&store);
    Var loss = build(t);
    return std::pair<double, Var>(t.value(loss).data[0], loss);
  };

  Tape t0(&store);
  Var loss0 = build(t0);
  double f0 = t0.value(loss0).data[0];
  if (eval().first != f0) {
    throw std::invalid_argument("grad_check requires a deterministic function (is dropout on?)");
  }

  store.zero_grads();
  t0.backward(loss0);
  std::vector<Tensor> analytic;
  analytic.reserve(static_cast<size_t>(store.count()));
  for (int p = 0; p < store.count(); ++p) analytic.push_back(store.grad(p));

  double max_rel = 0.0;
  for (int p = 0; p < store.count(); ++p) {
    Tensor& theta = store.value(p);
    for (size_t k = 0; k < theta.data.size(); ++k) {
      double saved = theta.data[k];
      theta.data[k] = saved + step;
      double fp = eval().first;
      theta.data[k] = saved - step;
      double fm = eval().first;
      theta.data[k] = saved;
      double numeric = (fp - fm) / (2.0 * step);
      double a = analytic[static_cast<size_t>(p)].data[k];
      double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      max_rel = std::max(max_rel, std::fabs(a - numeric) / denom);
    }
  }
  return max_rel;
}

}  // namespace ctxslu

#include "trajtok/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "trajtok/detmath.hpp"

namespace trajtok {

namespace {

using detmath::dcos;
using detmath::dexp;
using detmath::dgelu;
using detmath::dgelu_grad;
using detmath::dlog;
using detmath::dpow;
using detmath::dsin;

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

long long shape_size(const Shape& s) {
  long long n = 1;
  for (long long d : s) n *= d;
  return n;
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? " x " : "") << s[i];
  os << "]";
  return os.str();
}

struct TapeState {
  struct Node {
    std::function<void(TapeState&)> back;
    long long size = 0;
  };
  std::vector<Node> nodes;
  std::vector<std::vector<double>> grads;  // parallel to nodes, filled lazily
  std::unordered_map<const void*, int> leaf_ids;
  bool backward_done = false;

  std::vector<double>& grad_of(int id) {
    auto& g = grads[static_cast<size_t>(id)];
    if (g.empty()) g.assign(static_cast<size_t>(nodes[static_cast<size_t>(id)].size), 0.0);
    return g;
  }
};

// Internal access point for op implementations.
struct OpCtx {
  using BackFn = std::function<void(TapeState&, const std::vector<double>&)>;

  static const std::shared_ptr<std::vector<double>>& buf(const Tensor& t) { return t.buf_; }
  static int node(const Tensor& t) { return t.node_; }

  static std::shared_ptr<TapeState> tape_of(std::initializer_list<const Tensor*> ins) {
    std::shared_ptr<TapeState> tp;
    for (const Tensor* t : ins) {
      if (!t->tape_) continue;
      if (!tp) {
        tp = t->tape_;
      } else {
        require(tp == t->tape_, "op: inputs belong to different tapes");
      }
    }
    return tp;
  }

  static Tensor share_untaped(const Tensor& a) {
    Tensor t;
    t.buf_ = a.buf_;
    t.shape_ = a.shape_;
    return t;
  }

  static Tensor out(std::shared_ptr<TapeState> tp, Shape shape, std::vector<double> vals, BackFn back) {
    Tensor t;
    t.buf_ = std::make_shared<std::vector<double>>(std::move(vals));
    t.shape_ = std::move(shape);
    require(static_cast<long long>(t.buf_->size()) == shape_size(t.shape_),
            "internal: op output buffer does not match its shape");
    if (tp) {
      const int id = static_cast<int>(tp->nodes.size());
      tp->nodes.push_back({});
      tp->grads.emplace_back();
      tp->nodes.back().size = static_cast<long long>(t.buf_->size());
      if (back) {
        tp->nodes.back().back = [id, fn = std::move(back)](TapeState& st) {
          fn(st, st.grads[static_cast<size_t>(id)]);
        };
      }
      t.tape_ = std::move(tp);
      t.node_ = id;
    }
    return t;
  }
};

using BackFn = OpCtx::BackFn;

// ---------------------------------------------------------------------------
// Tensor / Tape basics

Tensor Tensor::zeros(Shape shape) {
  return full(std::move(shape), 0.0);
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t;
  t.shape_ = std::move(shape);
  t.buf_ = std::make_shared<std::vector<double>>(static_cast<size_t>(shape_size(t.shape_)), value);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  require(shape_size(shape) == static_cast<long long>(values.size()),
          "Tensor::from: " + shape_str(shape) + " needs " + std::to_string(shape_size(shape)) +
              " values, got " + std::to_string(values.size()));
  Tensor t;
  t.shape_ = std::move(shape);
  t.buf_ = std::make_shared<std::vector<double>>(std::move(values));
  return t;
}

long long Tensor::size() const { return buf_ ? static_cast<long long>(buf_->size()) : 0; }

Tensor Tensor::reshaped(Shape shape) const {
  require(shape_size(shape) == size(), "reshape: element count mismatch " + shape_str(shape_) +
                                           " -> " + shape_str(shape));
  Tensor t = *this;
  t.shape_ = std::move(shape);
  return t;
}

Tape::Tape() : state_(std::make_shared<TapeState>()) {}

Tensor Tape::watch(const Tensor& t) {
  require(t.defined(), "watch: undefined tensor");
  if (t.tape_ == state_ && t.node_ >= 0) return t;
  require(!t.tape_, "watch: tensor already belongs to another tape");
  auto it = state_->leaf_ids.find(t.buf_.get());
  if (it != state_->leaf_ids.end()) {
    Tensor v = t;
    v.tape_ = state_;
    v.node_ = it->second;
    return v;
  }
  const int id = static_cast<int>(state_->nodes.size());
  state_->nodes.push_back({nullptr, t.size()});
  state_->grads.emplace_back();
  state_->leaf_ids.emplace(t.buf_.get(), id);
  Tensor v = t;
  v.tape_ = state_;
  v.node_ = id;
  return v;
}

void Tape::backward(const Tensor& loss) {
  require(loss.tape_ == state_ && loss.node_ >= 0, "backward: loss is not on this tape");
  require(loss.size() == 1, "backward: loss must be scalar, got " + shape_str(loss.shape()));
  require(!state_->backward_done, "backward: tape already consumed");
  state_->backward_done = true;
  state_->grads[static_cast<size_t>(loss.node_)].assign(1, 1.0);
  for (int i = static_cast<int>(state_->nodes.size()) - 1; i >= 0; --i) {
    auto& node = state_->nodes[static_cast<size_t>(i)];
    if (node.back && !state_->grads[static_cast<size_t>(i)].empty()) node.back(*state_);
  }
}

const std::vector<double>& Tape::grad(const Tensor& t) {
  require(t.tape_ == state_ && t.node_ >= 0, "grad: tensor is not on this tape");
  return state_->grad_of(t.node_);
}

size_t Tape::node_count() const { return state_->nodes.size(); }

// ---------------------------------------------------------------------------
// kernels

namespace {

// C[m x n] += A[m x k] * B[k x n]; per-output accumulation order is the k
// loop, fixed regardless of vectorization.
void mm_acc(const double* A, const double* B, double* C, long long m, long long k, long long n) {
  for (long long i = 0; i < m; ++i) {
    const double* a = A + i * k;
    double* c = C + i * n;
    for (long long p = 0; p < k; ++p) {
      const double av = a[p];
      const double* b = B + p * n;
      for (long long j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

void transpose_into(const double* A, double* AT, long long m, long long n) {
  for (long long i = 0; i < m; ++i)
    for (long long j = 0; j < n; ++j) AT[j * m + i] = A[i * n + j];
}

std::vector<double>& scratch_a() {
  static thread_local std::vector<double> s;
  return s;
}

std::vector<double>& scratch_b() {
  static thread_local std::vector<double> s;
  return s;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(),
          std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void axpy(std::vector<double>& dst, const double* src, long long n, double scale = 1.0) {
  for (long long i = 0; i < n; ++i) dst[static_cast<size_t>(i)] += scale * src[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// elementwise

namespace {

// shared scaffolding for binary elementwise ops with per-element backward
template <class Fwd, class BackA, class BackB>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, BackA ba, BackB bb) {
  check_same_shape(name, a, b);
  auto tp = OpCtx::tape_of({&a, &b});
  const long long n = a.size();
  std::vector<double> v(static_cast<size_t>(n));
  const double* pa = a.data();
  const double* pb = b.data();
  for (long long i = 0; i < n; ++i) v[static_cast<size_t>(i)] = fwd(pa[i], pb[i]);
  BackFn back;
  if (tp) {
    const int ia = OpCtx::node(a), ib = OpCtx::node(b);
    auto abuf = OpCtx::buf(a);
    auto bbuf = OpCtx::buf(b);
    back = [ia, ib, abuf, bbuf, n, ba, bb](TapeState& st, const std::vector<double>& go) {
      const double* pa2 = abuf->data();
      const double* pb2 = bbuf->data();
      if (ia >= 0) {
        auto& g = st.grad_of(ia);
        for (long long i = 0; i < n; ++i) g[static_cast<size_t>(i)] += ba(pa2[i], pb2[i]) * go[static_cast<size_t>(i)];
      }
      if (ib >= 0) {
        auto& g = st.grad_of(ib);
        for (long long i = 0; i < n; ++i) g[static_cast<size_t>(i)] += bb(pa2[i], pb2[i]) * go[static_cast<size_t>(i)];
      }
    };
  }
  return OpCtx::out(std::move(tp), a.shape(), std::move(v), std::move(back));
}

// unary op with derivative expressed from the input value
template <class Fwd, class Back>
Tensor unary_op(const Tensor& a, Fwd fwd, Back dback) {
  auto tp = OpCtx::tape_of({&a});
  const long long n = a.size();
  std::vector<double> v(static_cast<size_t>(n));
  const double* pa = a.data();
  for (long long i = 0; i < n; ++i) v[static_cast<size_t>(i)] = fwd(pa[i]);
  BackFn back;
  if (tp) {
    const int ia = OpCtx::node(a);
    auto abuf = OpCtx::buf(a);
    back = [ia, abuf, n, dback](TapeState& st, const std::vector<double>& go) {
      if (ia < 0) return;
      auto& g = st.grad_of(ia);
      const double* pa2 = abuf->data();
      for (long long i = 0; i < n; ++i) g[static_cast<size_t>(i)] += dback(pa2[i]) * go[static_cast<size_t>(i)];
    };
  }
  return OpCtx::out(std::move(tp), a.shape(), std::move(v), std::move(back));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary_op(a, [c](double x) { return x + c; }, [](double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double c) {
  return unary_op(a, [c](double x) { return x * c; }, [c](double) { return c; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor exp_t(const Tensor& a) {
  // derivative equals the output; recomputing keeps the template simple
  return unary_op(a, [](double x) { return dexp(x); }, [](double x) { return dexp(x); });
}

Tensor log_t(const Tensor& a) {
  return unary_op(a, [](double x) { return dlog(x); }, [](double x) { return 1.0 / x; });
}

Tensor sqrt_t(const Tensor& a) {
  return unary_op(a, [](double x) { return std::sqrt(x); },
                  [](double x) { return 0.5 / std::sqrt(x); });
}

Tensor tanh_t(const Tensor& a) {
  return unary_op(a, [](double x) { return detmath::dtanh(x); },
                  [](double x) {
                    const double t = detmath::dtanh(x);
                    return 1.0 - t * t;
                  });
}

Tensor gelu(const Tensor& a) {
  return unary_op(a, [](double x) { return dgelu(x); }, [](double x) { return dgelu_grad(x); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  require(lo <= hi, "clamp: lo > hi");
  return unary_op(a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
                  [lo, hi](double x) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor pow_scalar(const Tensor& a, double p) {
  return unary_op(a, [p](double x) { return dpow(x, p); },
                  [p](double x) { return p * dpow(x, p - 1.0); });
}

// ---------------------------------------------------------------------------
// reductions

Tensor sum_all(const Tensor& a) {
  auto tp = OpCtx::tape_of({&a});
  const long long n = a.size();
  double s = 0.0;
  const double* pa = a.data();
  for (long long i = 0; i < n; ++i) s += pa[i];
  BackFn back;
  if (tp) {
    const int ia = OpCtx::node(a);
    back = [ia, n](TapeState& st, const std::vector<double>& go) {
      if (ia < 0) return;
      auto& g = st.grad_of(ia);
      for (long long i = 0; i < n; ++i) g[static_cast<size_t>(i)] += go[0];
    };
  }
  return OpCtx::out(std::move(tp), {1}, {s}, std::move(back));
}

Tensor mean_all(const Tensor& a) { return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a.size())); }

Tensor rowsum(const Tensor& a) {
  require(a.rank() == 2, "rowsum: expected rank-2, got " + shape_str(a.shape()));
  const long long m = a.dim(0), n = a.dim(1);
  auto tp = OpCtx::tape_of({&a});
  std::vector<double> v(static_cast<size_t>(m), 0.0);
  const double* pa = a.data();
  for (long long i = 0; i < m; ++i) {
    double s = 0.0;
    for (long long j = 0; j < n; ++j) s += pa[i * n + j];
    v[static_cast<size_t>(i)] = s;
  }
  BackFn back;
  if (tp) {
    const int ia = OpCtx::node(a);
    back = [ia, m, n](TapeState& st, const std::vector<double>& go) {
      if (ia < 0) return;
      auto& g = st.grad_of(ia);
      for (long long i = 0; i < m; ++i)
        for (long long j = 0; j < n; ++j) g[static_cast<size_t>(i * n + j)] += go[static_cast<size_t>(i)];
    };
  }
  return OpCtx::out(std::move(tp), {m}, std::move(v), std::move(back));
}

// ---------------------------------------------------------------------------
// linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
          "matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const long long m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto tp = OpCtx::tape_of({&a, &b});
  std::vector<double> v(static_cast<size_t>(m * n), 0.0);
  mm_acc(a.data(), b.data(), v.data(), m, k, n);
  BackFn back;
  if (tp) {
    const int ia = OpCtx::node(a), ib = OpCtx::node(b);
    auto abuf = OpCtx::buf(a);
    auto bbuf = OpCtx::buf(b);
    back = [ia, ib, abuf, bbuf, m, k, n](TapeState& st, const std::vector<double>& go) {
      if (ia >= 0) {  // dA += go . B^T
        auto& bt = scratch_a();
        bt.resize(static_cast<size_t>(k * n));
        transpose_into(bbuf->data(), bt.data(), k, n);
        mm_acc(go.data(), bt.data(), st.grad_of(ia).data(), m, n, k);
      }
      if (ib >= 0) {  // dB += A^T . go
        auto& at = scratch_b();
        at.resize(static_cast<size_t>(m * k));
        transpose_into(abuf->data(), at.data(), m, k);
        mm_acc(at.data(), go.data(), st.grad_of(ib).data(), k, m, n);
      }
    };
  }
  return OpCtx::out(std::move(tp), {m, n}, std::move(v), std::move(back));
}

Tensor matmul_tb(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1),
          "matmul_tb: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const long long m = a.dim(0), k = a.dim(1), n = b.dim(0);
  auto tp = OpCtx::tape_of({&a, &b});
  auto& bt = scratch_a();
  bt.resize(static_cast<size_t>(k * n));
  transpose_into(b.data(), bt.data(), n, k);
  std::vector<double> v(static_cast<size_t>(m * n), 0.0);
  mm_acc(a.data(), bt.data(), v.data(), m, k, n);
  BackFn back;
  if (tp) {
    const int ia = OpCtx::node(a), ib = OpCtx::node(b);
    auto abuf = OpCtx::buf(a);
    auto bbuf = OpCtx::buf(b);
    back = [ia, ib, abuf, bbuf, m, k, n](TapeState& st, const std::vector<double>& go) {
      if (ia >= 0) {  // dA += go . B
        mm_acc(go.data(), bbuf->data(), st.grad_of(ia).data(), m, n, k);
      }
      if (ib >= 0) {  // dB += go^T . A
        auto& gt = scratch_a();
        gt.resize(static_cast<size_t>(m * n));
        transpose_into(go.data(), gt.data(), m, n);
        mm_acc(gt.data(), abuf->data(), st.grad_of(ib).data(), n, m, k);
      }
    };
  }
  return OpCtx::out(std::move(tp), {m, n}, std::move(v), std::move(back));
}

Tensor matmul_ta(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(0) == b.dim(0),
          "matmul_ta: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const long long k = a.dim(0), m = a.dim(1), n = b.dim(1);
  auto tp = OpCtx::tape_of({&a, &b});
  auto& at = scratch_a();
  at.resize(static_cast<size_t>(k * m));
  transpose_into(a.data(), at.data(), k, m);
  std::vector<double> v(static_cast<size_t>(m * n), 0.0);
  mm_acc(at.data(), b.data(), v.data(), m, k, n);
  BackFn back;
  if (tp) {
    const int ia = OpCtx::node(a), ib = OpCtx::node(b);
    auto abuf = OpCtx::buf(a);
    auto bbuf = OpCtx::buf(b);
    back = [ia, ib, abuf, bbuf, k, m, n](TapeState& st, const std::vector<double>& go) {
      if (ia >= 0) {  // dA += B . go^T
        auto& gt = scratch_a();
        gt.resize(static_cast<size_t>(m * n));
        transpose_into(go.data(), gt.data(), m, n);
        mm_acc(bbuf->data(), gt.data(), st.grad_of(ia).data(), k, n, m);
      }
      if (ib >= 0) {  // dB += A . go
        mm_acc(abuf->data(), go.data(), st.grad_of(ib).data(), k, m, n);
      }
    };
  }
  return OpCtx::out(std::move(tp), {m, n}, std::move(v), std::move(back));
}

Tensor transpose2d(const Tensor& a) {
  require(a.rank() == 2, "transpose2d: expected rank-2, got " + shape_str(a.shape()));
  const long long m = a.dim(0), n = a.dim(1);
  auto tp = OpCtx::tape_of({&a});
  std::vector<double> v(static_cast<size_t>(m * n));
  transpose_into(a.data(), v.data(), m, n);
  BackFn back;
  if (tp) {
    const int ia = OpCtx::node(a);
    back = [ia, m, n](TapeState& st, const std::vector<double>& go) {
      if (ia < 0) return;
      auto& g = st.grad_of(ia);
      for (long long j = 0; j < n; ++j)
        for (long long i = 0; i < m; ++i) g[static_cast<size_t>(i * n + j)] += go[static_cast<size_t>(j * m + i)];
    };
  }
  return OpCtx::out(std::move(tp), {n, m}, std::move(v), std::move(back));
}

Tensor add_rows(const Tensor& a, const Tensor& bias) {
  require(a.rank() == 2 && bias.rank() == 1 && bias.dim(0) == a.dim(1),
          "add_rows: " + shape_str(a.shape()) + " with bias " + shape_str(bias.shape()));
  const long long m = a.dim(0), n = a.dim(1);
  auto tp = OpCtx::tape_of({&a, &bias});
  std::vector<double> v(static_cast<size_t>(m * n));
  const double* pa = a.data();
  const double* pb = bias.data();
  for (long long i = 0; i < m; ++i)
    for (long long j = 0; j < n; ++j) v[static_cast<size_t>(i * n + j)] = pa[i * n + j] + pb[j];
  BackFn back;
  if (tp) {
    const int ia = OpCtx::node(a), ib = OpCtx::node(bias);
    back = [ia, ib, m, n](TapeState& st, const std::vector<double>& go) {
      if (ia >= 0) axpy(st.grad_of(ia), go.data(), m * n);
      if (ib >= 0) {
        auto& g = st.grad_of(ib);
        for (long long i = 0; i < m; ++i)
          for (long long j = 0; j < n; ++j) g[static_cast<size_t>(j)] += go[static_cast<size_t>(i * n + j)];
      }
    };
  }
  return OpCtx::out(std::move(tp), a.shape(), std::move(v), std::move(back));
}

Tensor take_rows(const Tensor& a, std::vector<long long> idx) {
  require(a.rank() == 2, "take_rows: expected rank-2, got " + shape_str(a.shape()));
  const long long m = a.dim(0), n = a.dim(1);
  for (long long r : idx)
    require(r >= 0 && r < m, "take_rows: index " + std::to_string(r) + " out of range [0," + std::to_string(m) + ")");
  const long long rows = static_cast<long long>(idx.size());
  auto tp = OpCtx::tape_of({&a});
  std::vector<double> v(static_cast<size_t>(rows * n));
  const double* pa = a.data();
  for (long long r = 0; r < rows; ++r)
    std::memcpy(v.data() + r * n, pa + idx[static_cast<size_t>(r)] * n, sizeof(double) * static_cast<size_t>(n));
  BackFn back;
  if (tp) {
    const int ia = OpCtx::node(a);
    back = [ia, idx = std::move(idx), n](TapeState& st, const std::vector<double>& go) {
      if (ia < 0) return;
      auto& g = st.grad_of(ia);
      for (size_t r = 0; r < idx.size(); ++r)
        for (long long j = 0; j < n; ++j)
          g[static_cast<size_t>(idx[r] * n + j)] += go[r * static_cast<size_t>(n) + static_cast<size_t>(j)];
    };
    return OpCtx::out(std::move(tp), {rows, n}, std::move(v), std::move(back));
  }
  return OpCtx::out(nullptr, {rows, n}, std::move(v), nullptr);
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_rows: no parts");
  const long long n = parts[0].rank() == 2 ? parts[0].dim(1) : -1;
  require(n > 0, "concat_rows: expected rank-2 parts");
  long long rows = 0;
  for (const Tensor& p : parts) {
    require(p.rank() == 2 && p.dim(1) == n, "concat_rows: column mismatch " + shape_str(p.shape()));
    rows += p.dim(0);
  }
  std::vector<const Tensor*> ptrs;
  for (const Tensor& p : parts) ptrs.push_back(&p);
  std::shared_ptr<TapeState> tp;
  for (const Tensor* p : ptrs) {
    auto t = OpCtx::tape_of({p});
    if (t) {
      require(!tp || tp == t, "concat_rows: inputs belong to different tapes");
      tp = t;
    }
  }
  std::vector<double> v(static_cast<size_t>(rows * n));
  long long at = 0;
  std::vector<int> ids;
  std::vector<long long> sizes;
  for (const Tensor& p : parts) {
    std::memcpy(v.data() + at, p.data(), sizeof(double) * static_cast<size_t>(p.size()));
    at += p.size();
    ids.push_back(OpCtx::node(p));
    sizes.push_back(p.size());
  }
  BackFn back;
  if (tp) {
    back = [ids, sizes](TapeState& st, const std::vector<double>& go) {
      long long off = 0;
      for (size_t q = 0; q < ids.size(); ++q) {
        if (ids[q] >= 0) axpy(st.grad_of(ids[q]), go.data() + off, sizes[q]);
        off += sizes[q];
      }
    };
  }
  return OpCtx::out(std::move(tp), {rows, n}, std::move(v), std::move(back));
}

Tensor l2_normalize_rows(const Tensor& a) {
  require(a.rank() == 2, "l2_normalize_rows: expected rank-2, got " + shape_str(a.shape()));
  const long long m = a.dim(0), n = a.dim(1);
  auto tp = OpCtx::tape_of({&a});
  std::vector<double> v(static_cast<size_t>(m * n));
  std::vector<double> inv_norm(static_cast<size_t>(m));
  const double* pa = a.data();
  for (long long i = 0; i < m; ++i) {
    double ss = 0.0;
    for (long long j = 0; j < n; ++j) ss += pa[i * n + j] * pa[i * n + j];
    const double ni = 1.0 / std::sqrt(ss + 1e-24);
    inv_norm[static_cast<size_t>(i)] = ni;
    for (long long j = 0; j < n; ++j) v[static_cast<size_t>(i * n + j)] = pa[i * n + j] * ni;
  }
  BackFn back;
  if (tp) {
    const int ia = OpCtx::node(a);
    auto abuf = OpCtx::buf(a);
    back = [ia, abuf, inv_norm = std::move(inv_norm), m, n](TapeState& st, const std::vector<double>& go) {
      if (ia < 0) return;
      auto& g = st.grad_of(ia);
      const double* pa2 = abuf->data();
      for (long long i = 0; i < m; ++i) {
        const double ni = inv_norm[static_cast<size_t>(i)];
        double dot = 0.0;
        for (long long j = 0; j < n; ++j) dot += go[static_cast<size_t>(i * n + j)] * pa2[i * n + j];
        const double c = dot * ni * ni * ni;
        for (long long j = 0; j < n; ++j)
          g[static_cast<size_t>(i * n + j)] += go[static_cast<size_t>(i * n + j)] * ni - pa2[i * n + j] * c;
      }
    };
  }
  return OpCtx::out(std::move(tp), a.shape(), std::move(v), std::move(back));
}

Tensor divide_rows(const Tensor& a, const Tensor& denom) {
  require(a.rank() == 2 && denom.rank() == 1 && denom.dim(0) == a.dim(0),
          "divide_rows: " + shape_str(a.shape()) + " with denominators " + shape_str(denom.shape()));
  const long long m = a.dim(0), n = a.dim(1);
  auto tp = OpCtx::tape_of({&a, &denom});
  std::vector<double> v(static_cast<size_t>(m * n));
  const double* pa = a.data();
  const double* pd = denom.data();
  for (long long i = 0; i < m; ++i) {
    const double inv = 1.0 / pd[i];
    for (long long j = 0; j < n; ++j) v[static_cast<size_t>(i * n + j)] = pa[i * n + j] * inv;
  }
  BackFn back;
  if (tp) {
    const int ia = OpCtx::node(a), id = OpCtx::node(denom);
    auto abuf = OpCtx::buf(a);
    auto dbuf = OpCtx::buf(denom);
    back = [ia, id, abuf, dbuf, m, n](TapeState& st, const std::vector<double>& go) {
      const double* pa2 = abuf->data();
      const double* pd2 = dbuf->data();
      if (ia >= 0) {
        auto& g = st.grad_of(ia);
        for (long long i = 0; i < m; ++i) {
          const double inv = 1.0 / pd2[i];
          for (long long j = 0; j < n; ++j) g[static_cast<size_t>(i * n + j)] += go[static_cast<size_t>(i * n + j)] * inv;
        }
      }
      if (id >= 0) {
        auto& g = st.grad_of(id);
        for (long long i = 0; i < m; ++i) {
          const double inv2 = 1.0 / (pd2[i] * pd2[i]);
          double s = 0.0;
          for (long long j = 0; j < n; ++j) s += go[static_cast<size_t>(i * n + j)] * pa2[i * n + j];
          g[static_cast<size_t>(i)] -= s * inv2;
        }
      }
    };
  }
  return OpCtx::out(std::move(tp), a.shape(), std::move(v), std::move(back));
}

// ---------------------------------------------------------------------------
// softmax / layer norm

Tensor softmax(const Tensor& a, int axis) {
  require(axis >= 0 && axis < a.rank(), "softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(a.shape()));
  const long long n = a.size();
  const double* pa = a.data();
  for (long long i = 0; i < n; ++i)
    require(std::isfinite(pa[i]), "softmax: non-finite input");
  long long outer = 1, inner = 1;
  const long long L = a.dim(axis);
  for (int i = 0; i < axis; ++i) outer *= a.dim(i);
  for (int i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  auto tp = OpCtx::tape_of({&a});
  std::vector<double> v(static_cast<size_t>(n));
  for (long long o = 0; o < outer; ++o) {
    for (long long in = 0; in < inner; ++in) {
      const long long base = o * L * inner + in;
      double mx = pa[base];
      for (long long l = 1; l < L; ++l) mx = std::max(mx, pa[base + l * inner]);
      double s = 0.0;
      for (long long l = 0; l < L; ++l) {
        const double e = dexp(pa[base + l * inner] - mx);
        v[static_cast<size_t>(base + l * inner)] = e;
        s += e;
      }
      const double inv = 1.0 / s;
      for (long long l = 0; l < L; ++l) v[static_cast<size_t>(base + l * inner)] *= inv;
    }
  }
  BackFn back;
  if (tp) {
    const int ia = OpCtx::node(a);
    // derivative needs only the output probabilities
    auto pcopy = std::make_shared<std::vector<double>>(v);
    back = [ia, pcopy, outer, L, inner](TapeState& st, const std::vector<double>& go) {
      if (ia < 0) return;
      auto& g = st.grad_of(ia);
      const double* p = pcopy->data();
      for (long long o = 0; o < outer; ++o) {
        for (long long in = 0; in < inner; ++in) {
          const long long base = o * L * inner + in;
          double dot = 0.0;
          for (long long l = 0; l < L; ++l) dot += go[static_cast<size_t>(base + l * inner)] * p[base + l * inner];
          for (long long l = 0; l < L; ++l) {
            const size_t at = static_cast<size_t>(base + l * inner);
            g[at] += p[at] * (go[at] - dot);
          }
        }
      }
    };
  }
  return OpCtx::out(std::move(tp), a.shape(), std::move(v), std::move(back));
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
  require(a.rank() >= 1, "layer_norm: scalar input");
  const long long n = a.dim(a.rank() - 1);
  require(gain.rank() == 1 && gain.dim(0) == n && bias.rank() == 1 && bias.dim(0) == n,
          "layer_norm: affine shapes " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
              " do not match last extent of " + shape_str(a.shape()));
  const long long rows = a.size() / n;
  auto tp = OpCtx::tape_of({&a, &gain, &bias});
  std::vector<double> v(static_cast<size_t>(a.size()));
  auto xh = std::make_shared<std::vector<double>>(static_cast<size_t>(a.size()));
  auto inv_s = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
  const double* pa = a.data();
  const double* pg = gain.data();
  const double* pb = bias.data();
  for (long long r = 0; r < rows; ++r) {
    const double* x = pa + r * n;
    double mu = 0.0;
    for (long long j = 0; j < n; ++j) mu += x[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (long long j = 0; j < n; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_s)[static_cast<size_t>(r)] = is;
    for (long long j = 0; j < n; ++j) {
      const double h = (x[j] - mu) * is;
      (*xh)[static_cast<size_t>(r * n + j)] = h;
      v[static_cast<size_t>(r * n + j)] = h * pg[j] + pb[j];
    }
  }
  BackFn back;
  if (tp) {
    const int ia = OpCtx::node(a), ig = OpCtx::node(gain), ib = OpCtx::node(bias);
    auto gbuf = OpCtx::buf(gain);
    back = [ia, ig, ib, gbuf, xh, inv_s, rows, n](TapeState& st, const std::vector<double>& go) {
      const double* pg2 = gbuf->data();
      const double* ph = xh->data();
      if (ig >= 0) {
        auto& g = st.grad_of(ig);
        for (long long r = 0; r < rows; ++r)
          for (long long j = 0; j < n; ++j) g[static_cast<size_t>(j)] += go[static_cast<size_t>(r * n + j)] * ph[r * n + j];
      }
      if (ib >= 0) {
        auto& g = st.grad_of(ib);
        for (long long r = 0; r < rows; ++r)
          for (long long j = 0; j < n; ++j) g[static_cast<size_t>(j)] += go[static_cast<size_t>(r * n + j)];
      }
      if (ia >= 0) {
        auto& g = st.grad_of(ia);
        const double invn = 1.0 / static_cast<double>(n);
        for (long long r = 0; r < rows; ++r) {
          double m1 = 0.0, m2 = 0.0;
          for (long long j = 0; j < n; ++j) {
            const double dh = go[static_cast<size_t>(r * n + j)] * pg2[j];
            m1 += dh;
            m2 += dh * ph[r * n + j];
          }
          m1 *= invn;
          m2 *= invn;
          const double is = (*inv_s)[static_cast<size_t>(r)];
          for (long long j = 0; j < n; ++j) {
            const double dh = go[static_cast<size_t>(r * n + j)] * pg2[j];
            g[static_cast<size_t>(r * n + j)] += (dh - m1 - ph[r * n + j] * m2) * is;
          }
        }
      }
    };
  }
  return OpCtx::out(std::move(tp), a.shape(), std::move(v), std::move(back));
}

// ---------------------------------------------------------------------------
// attention

Tensor multihead_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                           std::span<const std::uint8_t> mask, const Tensor& w_out) {
  require(q.rank() == 2 && k.rank() == 2 && v.rank() == 2, "attention: q/k/v must be rank-2");
  const long long Lq = q.dim(0), d = q.dim(1), Lk = k.dim(0);
  require(k.dim(1) == d && v.dim(0) == Lk && v.dim(1) == d,
          "attention: shapes " + shape_str(q.shape()) + ", " + shape_str(k.shape()) + ", " + shape_str(v.shape()));
  require(heads > 0 && d % heads == 0,
          "attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  require(w_out.rank() == 2 && w_out.dim(0) == d && w_out.dim(1) == d,
          "attention: output projection " + shape_str(w_out.shape()) + " must be [" + std::to_string(d) + " x " +
              std::to_string(d) + "]");
  require(mask.empty() || static_cast<long long>(mask.size()) == Lq * Lk,
          "attention: mask size " + std::to_string(mask.size()) + " != Lq*Lk");

  const long long dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  auto tp = OpCtx::tape_of({&q, &k, &v, &w_out});

  auto att = std::make_shared<std::vector<double>>(static_cast<size_t>(heads * Lq * Lk), 0.0);
  auto ctx = std::make_shared<std::vector<double>>(static_cast<size_t>(Lq * d), 0.0);
  const double* pq = q.data();
  const double* pk = k.data();
  const double* pv = v.data();
  const std::uint8_t* pm = mask.empty() ? nullptr : mask.data();

  for (int h = 0; h < heads; ++h) {
    const long long off = h * dh;
    for (long long i = 0; i < Lq; ++i) {
      double* arow = att->data() + (static_cast<long long>(h) * Lq + i) * Lk;
      const double* qi = pq + i * d + off;
      double mx = -std::numeric_limits<double>::infinity();
      for (long long j = 0; j < Lk; ++j) {
        if (pm && !pm[i * Lk + j]) continue;
        const double* kj = pk + j * d + off;
        double s = 0.0;
        for (long long c = 0; c < dh; ++c) s += qi[c] * kj[c];
        s *= scale;
        arow[j] = s;
        mx = std::max(mx, s);
      }
      if (mx == -std::numeric_limits<double>::infinity()) continue;  // fully masked row -> zero ctx
      double sum = 0.0;
      for (long long j = 0; j < Lk; ++j) {
        if (pm && !pm[i * Lk + j]) {
          arow[j] = 0.0;
          continue;
        }
        const double e = dexp(arow[j] - mx);
        arow[j] = e;
        sum += e;
      }
      const double inv = 1.0 / sum;
      double* ci = ctx->data() + i * d + off;
      for (long long j = 0; j < Lk; ++j) {
        if (pm && !pm[i * Lk + j]) continue;
        const double p = arow[j] * inv;
        arow[j] = p;
        const double* vj = pv + j * d + off;
        for (long long c = 0; c < dh; ++c) ci[c] += p * vj[c];
      }
    }
  }

  std::vector<double> out(static_cast<size_t>(Lq * d), 0.0);
  mm_acc(ctx->data(), w_out.data(), out.data(), Lq, d, d);

  BackFn back;
  if (tp) {
    const int iq = OpCtx::node(q), ik = OpCtx::node(k), iv = OpCtx::node(v), iw = OpCtx::node(w_out);
    auto qbuf = OpCtx::buf(q);
    auto kbuf = OpCtx::buf(k);
    auto vbuf = OpCtx::buf(v);
    auto wbuf = OpCtx::buf(w_out);
    std::vector<std::uint8_t> mcopy(mask.begin(), mask.end());
    back = [=, mcopy = std::move(mcopy)](TapeState& st, const std::vector<double>& go) {
      const std::uint8_t* pm2 = mcopy.empty() ? nullptr : mcopy.data();
      // dW += ctx^T . go
      if (iw >= 0) {
        auto& ct = scratch_a();
        ct.resize(static_cast<size_t>(Lq * d));
        transpose_into(ctx->data(), ct.data(), Lq, d);
        mm_acc(ct.data(), go.data(), st.grad_of(iw).data(), d, Lq, d);
      }
      // dctx = go . W^T
      std::vector<double> dctx(static_cast<size_t>(Lq * d), 0.0);
      {
        auto& wt = scratch_a();
        wt.resize(static_cast<size_t>(d * d));
        transpose_into(wbuf->data(), wt.data(), d, d);
        mm_acc(go.data(), wt.data(), dctx.data(), Lq, d, d);
      }
      std::vector<double>* gq = iq >= 0 ? &st.grad_of(iq) : nullptr;
      std::vector<double>* gk = ik >= 0 ? &st.grad_of(ik) : nullptr;
      std::vector<double>* gv = iv >= 0 ? &st.grad_of(iv) : nullptr;
      if (!gq && !gk && !gv) return;
      const double* pq2 = qbuf->data();
      const double* pk2 = kbuf->data();
      const double* pv2 = vbuf->data();
      std::vector<double> ds(static_cast<size_t>(Lk));
      for (int h = 0; h < heads; ++h) {
        const long long off = h * dh;
        for (long long i = 0; i < Lq; ++i) {
          const double* arow = att->data() + (static_cast<long long>(h) * Lq + i) * Lk;
          const double* dci = dctx.data() + i * d + off;
          // datt and the softmax Jacobian, over allowed keys only
          double dot = 0.0;
          for (long long j = 0; j < Lk; ++j) {
            if (pm2 && !pm2[i * Lk + j]) continue;
            const double* vj = pv2 + j * d + off;
            double da = 0.0;
            for (long long c = 0; c < dh; ++c) da += dci[c] * vj[c];
            ds[static_cast<size_t>(j)] = da;
            dot += da * arow[j];
          }
          for (long long j = 0; j < Lk; ++j) {
            if (pm2 && !pm2[i * Lk + j]) continue;
            const double p = arow[j];
            const double dsc = p * (ds[static_cast<size_t>(j)] - dot) * scale;
            if (gq) {
              double* gqi = gq->data() + i * d + off;
              const double* kj = pk2 + j * d + off;
              for (long long c = 0; c < dh; ++c) gqi[c] += dsc * kj[c];
            }
            if (gk) {
              double* gkj = gk->data() + j * d + off;
              const double* qi = pq2 + i * d + off;
              for (long long c = 0; c < dh; ++c) gkj[c] += dsc * qi[c];
            }
            if (gv) {
              double* gvj = gv->data() + j * d + off;
              for (long long c = 0; c < dh; ++c) gvj[c] += p * dci[c];
            }
          }
        }
      }
    };
  }
  return OpCtx::out(std::move(tp), {Lq, d}, std::move(out), std::move(back));
}

// ---------------------------------------------------------------------------
// convolution / resampling / patchify

Tensor conv2d_depthwise(const Tensor& x, const Tensor& kernel, int stride, int pad) {
  require(x.rank() == 3, "conv2d_depthwise: input must be [h x w x c], got " + shape_str(x.shape()));
  require(kernel.rank() == 3 && kernel.dim(0) == kernel.dim(1) && kernel.dim(2) == x.dim(2),
          "conv2d_depthwise: kernel " + shape_str(kernel.shape()) + " incompatible with input " + shape_str(x.shape()));
  const long long kk = kernel.dim(0);
  require(kk % 2 == 1, "conv2d_depthwise: kernel extent must be odd");
  require(stride >= 1 && pad >= 0, "conv2d_depthwise: bad stride/pad");
  const long long h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const long long oh = (h + 2 * pad - kk) / stride + 1;
  const long long ow = (w + 2 * pad - kk) / stride + 1;
  require(oh >= 1 && ow >= 1 && h + 2 * pad >= kk && w + 2 * pad >= kk,
          "conv2d_depthwise: stride/pad yield non-positive output for " + shape_str(x.shape()));

  auto tp = OpCtx::tape_of({&x, &kernel});
  std::vector<double> v(static_cast<size_t>(oh * ow * c), 0.0);
  const double* px = x.data();
  const double* pk = kernel.data();
  for (long long oy = 0; oy < oh; ++oy) {
    for (long long ox = 0; ox < ow; ++ox) {
      double* o = v.data() + (oy * ow + ox) * c;
      const long long y0 = oy * stride - pad;
      const long long x0 = ox * stride - pad;
      for (long long ky = 0; ky < kk; ++ky) {
        const long long y = y0 + ky;
        if (y < 0 || y >= h) continue;
        for (long long kx = 0; kx < kk; ++kx) {
          const long long xx = x0 + kx;
          if (xx < 0 || xx >= w) continue;
          const double* xi = px + (y * w + xx) * c;
          const double* ki = pk + (ky * kk + kx) * c;
          for (long long ch = 0; ch < c; ++ch) o[ch] += xi[ch] * ki[ch];
        }
      }
    }
  }
  BackFn back;
  if (tp) {
    const int ix = OpCtx::node(x), ikr = OpCtx::node(kernel);
    auto xbuf = OpCtx::buf(x);
    auto kbuf = OpCtx::buf(kernel);
    back = [=](TapeState& st, const std::vector<double>& go) {
      std::vector<double>* gx = ix >= 0 ? &st.grad_of(ix) : nullptr;
      std::vector<double>* gk = ikr >= 0 ? &st.grad_of(ikr) : nullptr;
      const double* px2 = xbuf->data();
      const double* pk2 = kbuf->data();
      for (long long oy = 0; oy < oh; ++oy) {
        for (long long ox = 0; ox < ow; ++ox) {
          const double* g = go.data() + (oy * ow + ox) * c;
          const long long y0 = oy * stride - pad;
          const long long x0 = ox * stride - pad;
          for (long long ky = 0; ky < kk; ++ky) {
            const long long y = y0 + ky;
            if (y < 0 || y >= h) continue;
            for (long long kx = 0; kx < kk; ++kx) {
              const long long xx = x0 + kx;
              if (xx < 0 || xx >= w) continue;
              for (long long ch = 0; ch < c; ++ch) {
                if (gx) (*gx)[static_cast<size_t>((y * w + xx) * c + ch)] += pk2[(ky * kk + kx) * c + ch] * g[ch];
                if (gk) (*gk)[static_cast<size_t>((ky * kk + kx) * c + ch)] += px2[(y * w + xx) * c + ch] * g[ch];
              }
            }
          }
        }
      }
    };
  }
  return OpCtx::out(std::move(tp), {oh, ow, c}, std::move(v), std::move(back));
}

Tensor space_to_patches(const Tensor& x, int patch) {
  require(x.rank() == 3, "space_to_patches: input must be [h x w x c], got " + shape_str(x.shape()));
  const long long h = x.dim(0), w = x.dim(1), c = x.dim(2), p = patch;
  require(p >= 1 && h % p == 0 && w % p == 0,
          "space_to_patches: extents " + shape_str(x.shape()) + " not divisible by patch " + std::to_string(patch));
  const long long gh = h / p, gw = w / p, cols = p * p * c;
  auto tp = OpCtx::tape_of({&x});
  std::vector<double> v(static_cast<size_t>(gh * gw * cols));
  const double* px = x.data();
  for (long long by = 0; by < gh; ++by)
    for (long long bx = 0; bx < gw; ++bx) {
      double* row = v.data() + (by * gw + bx) * cols;
      for (long long py = 0; py < p; ++py)
        for (long long qx = 0; qx < p; ++qx) {
          const double* src = px + ((by * p + py) * w + bx * p + qx) * c;
          double* dst = row + (py * p + qx) * c;
          for (long long ch = 0; ch < c; ++ch) dst[ch] = src[ch];
        }
    }
  BackFn back;
  if (tp) {
    const int ix = OpCtx::node(x);
    back = [=](TapeState& st, const std::vector<double>& go) {
      if (ix < 0) return;
      auto& g = st.grad_of(ix);
      for (long long by = 0; by < gh; ++by)
        for (long long bx = 0; bx < gw; ++bx) {
          const double* row = go.data() + (by * gw + bx) * cols;
          for (long long py = 0; py < p; ++py)
            for (long long qx = 0; qx < p; ++qx) {
              double* dst = g.data() + ((by * p + py) * w + bx * p + qx) * c;
              const double* src = row + (py * p + qx) * c;
              for (long long ch = 0; ch < c; ++ch) dst[ch] += src[ch];
            }
        }
    };
  }
  return OpCtx::out(std::move(tp), {gh * gw, cols}, std::move(v), std::move(back));
}

Tensor bilinear_resize(const Tensor& x, long long out_h, long long out_w) {
  require(x.rank() == 3, "bilinear_resize: input must be [h x w x c], got " + shape_str(x.shape()));
  require(out_h >= 1 && out_w >= 1, "bilinear_resize: non-positive target extents");
  const long long h = x.dim(0), w = x.dim(1), c = x.dim(2);
  auto tp = OpCtx::tape_of({&x});
  // half-pixel source mapping with edge clamp; same-size is the identity and
  // constants are preserved exactly (nested-lerp form)
  const double ry = static_cast<double>(h) / static_cast<double>(out_h);
  const double rx = static_cast<double>(w) / static_cast<double>(out_w);
  struct Taps {
    long long lo, hi;
    double f;
  };
  std::vector<Taps> ty(static_cast<size_t>(out_h)), tx(static_cast<size_t>(out_w));
  auto make_taps = [](long long out_n, long long in_n, double r, std::vector<Taps>& t) {
    for (long long o = 0; o < out_n; ++o) {
      const double s = (static_cast<double>(o) + 0.5) * r - 0.5;
      double fl = std::floor(s);
      long long i0 = static_cast<long long>(fl);
      double f = s - fl;
      long long lo = std::clamp(i0, 0ll, in_n - 1);
      long long hi = std::clamp(i0 + 1, 0ll, in_n - 1);
      t[static_cast<size_t>(o)] = {lo, hi, f};
    }
  };
  make_taps(out_h, h, ry, ty);
  make_taps(out_w, w, rx, tx);
  std::vector<double> v(static_cast<size_t>(out_h * out_w * c));
  const double* px = x.data();
  for (long long oy = 0; oy < out_h; ++oy) {
    const Taps& a = ty[static_cast<size_t>(oy)];
    for (long long ox = 0; ox < out_w; ++ox) {
      const Taps& b = tx[static_cast<size_t>(ox)];
      const double* p00 = px + (a.lo * w + b.lo) * c;
      const double* p01 = px + (a.lo * w + b.hi) * c;
      const double* p10 = px + (a.hi * w + b.lo) * c;
      const double* p11 = px + (a.hi * w + b.hi) * c;
      double* o = v.data() + (oy * out_w + ox) * c;
      for (long long ch = 0; ch < c; ++ch) {
        const double top = p00[ch] + b.f * (p01[ch] - p00[ch]);
        const double bot = p10[ch] + b.f * (p11[ch] - p10[ch]);
        o[ch] = top + a.f * (bot - top);
      }
    }
  }
  BackFn back;
  if (tp) {
    const int ix = OpCtx::node(x);
    back = [=, ty = std::move(ty), tx = std::move(tx)](TapeState& st, const std::vector<double>& go) {
      if (ix < 0) return;
      auto& g = st.grad_of(ix);
      for (long long oy = 0; oy < out_h; ++oy) {
        const Taps& a = ty[static_cast<size_t>(oy)];
        for (long long ox = 0; ox < out_w; ++ox) {
          const Taps& b = tx[static_cast<size_t>(ox)];
          const double w00 = (1.0 - a.f) * (1.0 - b.f);
          const double w01 = (1.0 - a.f) * b.f;
          const double w10 = a.f * (1.0 - b.f);
          const double w11 = a.f * b.f;
          const double* gout = go.data() + (oy * out_w + ox) * c;
          for (long long ch = 0; ch < c; ++ch) {
            g[static_cast<size_t>((a.lo * w + b.lo) * c + ch)] += w00 * gout[ch];
            g[static_cast<size_t>((a.lo * w + b.hi) * c + ch)] += w01 * gout[ch];
            g[static_cast<size_t>((a.hi * w + b.lo) * c + ch)] += w10 * gout[ch];
            g[static_cast<size_t>((a.hi * w + b.hi) * c + ch)] += w11 * gout[ch];
          }
        }
      }
    };
  }
  return OpCtx::out(std::move(tp), {out_h, out_w, c}, std::move(v), std::move(back));
}

// ---------------------------------------------------------------------------
// rotary embedding

Tensor rope_rotate(const Tensor& x, double base) {
  require(x.rank() == 2, "rope_rotate: input must be [positions x d], got " + shape_str(x.shape()));
  const long long P = x.dim(0), d = x.dim(1);
  require(d % 2 == 0, "rope_rotate: width " + std::to_string(d) + " must be even");
  require(base > 0.0, "rope_rotate: base must be positive");
  const long long half = d / 2;
  std::vector<double> freq(static_cast<size_t>(half));
  for (long long m = 0; m < half; ++m)
    freq[static_cast<size_t>(m)] = dpow(base, -2.0 * static_cast<double>(m) / static_cast<double>(d));
  auto tp = OpCtx::tape_of({&x});
  auto cs = std::make_shared<std::vector<double>>(static_cast<size_t>(P * d));  // interleaved cos, sin
  std::vector<double> v(static_cast<size_t>(P * d));
  const double* px = x.data();
  for (long long p = 0; p < P; ++p) {
    const double* xi = px + p * d;
    double* o = v.data() + p * d;
    double* csr = cs->data() + p * d;
    for (long long m = 0; m < half; ++m) {
      const double ang = static_cast<double>(p) * freq[static_cast<size_t>(m)];
      const double cc = dcos(ang);
      const double ss = dsin(ang);
      csr[2 * m] = cc;
      csr[2 * m + 1] = ss;
      o[2 * m] = cc * xi[2 * m] - ss * xi[2 * m + 1];
      o[2 * m + 1] = ss * xi[2 * m] + cc * xi[2 * m + 1];
    }
  }
  BackFn back;
  if (tp) {
    const int ix = OpCtx::node(x);
    back = [ix, cs, P, d, half](TapeState& st, const std::vector<double>& go) {
      if (ix < 0) return;
      auto& g = st.grad_of(ix);
      for (long long p = 0; p < P; ++p) {
        const double* csr = cs->data() + p * d;
        const double* gr = go.data() + p * d;
        double* gx = g.data() + p * d;
        for (long long m = 0; m < half; ++m) {
          const double cc = csr[2 * m];
          const double ss = csr[2 * m + 1];
          gx[2 * m] += cc * gr[2 * m] + ss * gr[2 * m + 1];
          gx[2 * m + 1] += -ss * gr[2 * m] + cc * gr[2 * m + 1];
        }
      }
    };
  }
  return OpCtx::out(std::move(tp), x.shape(), std::move(v), std::move(back));
}

// ---------------------------------------------------------------------------
// diagonal cross-entropy (contrastive head)

Tensor ce_diagonal(const Tensor& logits) {
  require(logits.rank() == 2 && logits.dim(0) == logits.dim(1),
          "ce_diagonal: logits must be square, got " + shape_str(logits.shape()));
  const long long B = logits.dim(0);
  auto tp = OpCtx::tape_of({&logits});
  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(B * B));
  const double* pl = logits.data();
  double total = 0.0;
  for (long long i = 0; i < B; ++i) {
    const double* row = pl + i * B;
    double mx = row[0];
    for (long long j = 1; j < B; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (long long j = 0; j < B; ++j) {
      const double e = dexp(row[j] - mx);
      (*probs)[static_cast<size_t>(i * B + j)] = e;
      s += e;
    }
    const double inv = 1.0 / s;
    for (long long j = 0; j < B; ++j) (*probs)[static_cast<size_t>(i * B + j)] *= inv;
    total += mx + dlog(s) - row[i];
  }
  total /= static_cast<double>(B);
  BackFn back;
  if (tp) {
    const int il = OpCtx::node(logits);
    back = [il, probs, B](TapeState& st, const std::vector<double>& go) {
      if (il < 0) return;
      auto& g = st.grad_of(il);
      const double scale = go[0] / static_cast<double>(B);
      for (long long i = 0; i < B; ++i)
        for (long long j = 0; j < B; ++j)
          g[static_cast<size_t>(i * B + j)] +=
              scale * ((*probs)[static_cast<size_t>(i * B + j)] - (i == j ? 1.0 : 0.0));
    };
  }
  return OpCtx::out(std::move(tp), {1}, {total}, std::move(back));
}

Tensor detach(const Tensor& a) {
  // value-identical view with no tape node; op outputs are never mutated, so
  // sharing the buffer is safe
  return OpCtx::share_untaped(a);
}

// ---------------------------------------------------------------------------
// finite differences

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  auto wrap = [&](const std::vector<Tensor>& ins) { return f(ins[0]); };
  return grad_check_multi(wrap, {x}, h).max_rel_err;
}

GradCheckResult grad_check_multi(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                 const std::vector<Tensor>& inputs, double h,
                                 const std::vector<std::vector<long long>>* coords,
                                 double denom_floor) {
  require(!inputs.empty(), "grad_check: no inputs");
  require(h > 0.0, "grad_check: step must be positive");
  require(denom_floor > 0.0, "grad_check: denominator floor must be positive");
  if (coords) require(coords->size() == inputs.size(), "grad_check: coordinate list count mismatch");

  Tape tape;
  std::vector<Tensor> watched;
  watched.reserve(inputs.size());
  for (const Tensor& t : inputs) watched.push_back(tape.watch(t));
  Tensor loss = f(watched);
  require(loss.size() == 1, "grad_check: f must return a scalar");
  tape.backward(loss);
  std::vector<std::vector<double>> analytic;
  for (Tensor& t : watched) analytic.push_back(tape.grad(t));

  GradCheckResult res;
  std::vector<Tensor> probe = inputs;  // plain, untaped copies are made per evaluation
  for (size_t t = 0; t < inputs.size(); ++t) {
    std::vector<long long> idx;
    if (coords && !(*coords)[t].empty()) {
      idx = (*coords)[t];
    } else {
      idx.resize(static_cast<size_t>(inputs[t].size()));
      for (long long i = 0; i < inputs[t].size(); ++i) idx[static_cast<size_t>(i)] = i;
    }
    for (long long i : idx) {
      require(i >= 0 && i < inputs[t].size(), "grad_check: coordinate out of range");
      Tensor plus = Tensor::from(inputs[t].shape(), inputs[t].values());
      plus.mutable_data()[i] += h;
      probe[t] = plus;
      const double fp = f(probe).data()[0];
      Tensor minus = Tensor::from(inputs[t].shape(), inputs[t].values());
      minus.mutable_data()[i] -= h;
      probe[t] = minus;
      const double fm = f(probe).data()[0];
      probe[t] = inputs[t];
      const double fd = (fp - fm) / (2.0 * h);
      const double g = analytic[t][static_cast<size_t>(i)];
      const double denom = std::max({std::fabs(fd), std::fabs(g), denom_floor});
      res.max_rel_err = std::max(res.max_rel_err, std::fabs(g - fd) / denom);
      res.coords_checked += 1;
    }
  }
  return res;
}

}  // namespace trajtok

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace trajtok {

using Shape = std::vector<long long>;

std::string shape_str(const Shape& s);

struct TapeState;

// Dense double-precision array, value-semantic with a shared buffer.
// A tensor is immutable once it feeds an op; mutable_data() is for leaves
// only (initialization and optimizer updates between tapes). Participation
// in differentiation is opt-in: Tape::watch returns a view of the same
// buffer carrying a tape node, and ops record backward closures only when
// an input is taped.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  long long dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  long long size() const;
  bool defined() const { return buf_ != nullptr; }

  const double* data() const { return buf_->data(); }
  double* mutable_data() { return buf_->data(); }
  const std::vector<double>& values() const { return *buf_; }

  // same buffer and tape node under a new shape (element count must match)
  Tensor reshaped(Shape shape) const;

  bool taped() const { return node_ >= 0; }
  int node() const { return node_; }

 private:
  friend class Tape;
  friend struct OpCtx;

  std::shared_ptr<std::vector<double>> buf_;
  Shape shape_;
  std::shared_ptr<TapeState> tape_;
  int node_ = -1;
};

// Wengert list. Nodes are appended in execution order (so topological order
// holds by construction) and visited exactly once, in reverse, by backward.
class Tape {
 public:
  Tape();

  // register a leaf; repeated watch of the same buffer returns the same node
  Tensor watch(const Tensor& t);

  // seed d(loss)/d(loss)=1 and propagate; loss must be a scalar on this tape
  void backward(const Tensor& loss);

  // gradient of a watched (or op-produced) tensor; zeros if the loss never
  // reached it. Valid until the tape is destroyed.
  const std::vector<double>& grad(const Tensor& t);

  size_t node_count() const;

 private:
  friend struct OpCtx;
  std::shared_ptr<TapeState> state_;
};

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor exp_t(const Tensor& a);
Tensor log_t(const Tensor& a);
Tensor sqrt_t(const Tensor& a);
Tensor tanh_t(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor pow_scalar(const Tensor& a, double p);  // requires positive entries

// ---- reductions ----
Tensor sum_all(const Tensor& a);   // -> [1]
Tensor mean_all(const Tensor& a);  // -> [1]
Tensor rowsum(const Tensor& a);    // [m x n] -> [m]

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);     // [m x k]·[k x n]
Tensor matmul_tb(const Tensor& a, const Tensor& b);  // [m x k]·[n x k]^T -> [m x n]
Tensor matmul_ta(const Tensor& a, const Tensor& b);  // [k x m]^T·[k x n] -> [m x n]
Tensor transpose2d(const Tensor& a);
Tensor add_rows(const Tensor& a, const Tensor& bias);      // bias [n] added to each row
Tensor take_rows(const Tensor& a, std::vector<long long> idx);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor l2_normalize_rows(const Tensor& a);
Tensor divide_rows(const Tensor& a, const Tensor& denom);  // row i scaled by 1/denom[i]

// ---- neural-net ops ----
Tensor softmax(const Tensor& a, int axis);
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps);

// Scaled dot-product attention over pre-projected q/k/v, given mask
// (row-major [Lq x Lk], nonzero = allowed, empty span = no mask) and an
// output projection applied to the concatenated heads. A fully masked query
// row yields a zero output row; masked-out value rows are never read, so the
// output is bit-invariant to their contents.
Tensor multihead_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                           std::span<const std::uint8_t> mask, const Tensor& w_out);

Tensor conv2d_depthwise(const Tensor& x, const Tensor& kernel, int stride, int pad);
Tensor space_to_patches(const Tensor& x, int patch);     // [h x w x c] -> [(h/p)(w/p) x p*p*c]
Tensor bilinear_resize(const Tensor& x, long long out_h, long long out_w);

// Rotary embedding over rows of [P x d]: row p is rotated pairwise by angles
// p * base^(-2m/d). Requires even d.
Tensor rope_rotate(const Tensor& x, double base);

// Mean over rows of (logsumexp(row) - row[diag]); logits must be square.
Tensor ce_diagonal(const Tensor& logits);

Tensor detach(const Tensor& a);

// ---- finite-difference verification ----
// Max relative error between tape gradients and central differences, with an
// absolute floor in the denominator so zero gradients compare against noise
// rather than against themselves. `f` must treat its argument functionally
// (watch it on a fresh tape when taped() is false is fine).
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h);

struct GradCheckResult {
  double max_rel_err = 0.0;
  long long coords_checked = 0;
};

// Same, over several inputs at once. `coords`, when given, selects the flat
// indices probed per input (empty list = all coordinates of that input).
// Deep compositions accumulate central-difference roundoff well above 1e-8;
// raise denom_floor above that noise when the function has exactly-zero
// gradient directions.
GradCheckResult grad_check_multi(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                 const std::vector<Tensor>& inputs, double h,
                                 const std::vector<std::vector<long long>>* coords = nullptr,
                                 double denom_floor = 1e-8);

}  // namespace trajtok

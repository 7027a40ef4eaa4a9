#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "vtp/errors.hpp"
#include "vtp/rng.hpp"

namespace vtp {

using Shape = std::vector<std::size_t>;

// Storage precision. Values are always held as doubles; in F32 mode every
// operation result is rounded to the nearest float so the graph carries
// 32-bit precision end to end.
enum class Precision { F64, F32 };

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // allocated lazily, same length as values
  bool requires_grad = false;
  Precision precision = Precision::F64;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  // Propagates this node's grad into the parents' grads (accumulating).
  std::function<void(TensorImpl&)> backprop;

  std::size_t size() const { return values.size(); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

}  // namespace detail

// Dense n-dimensional tensor with a reverse-mode gradient tape.
//
// Semantics: tensors are immutable once created except for their grad
// buffers (and leaf values mutated by an optimizer). Operations connect
// outputs to inputs only when some input requires a gradient, so inference
// passes build no tape. backward() accumulates (adds) gradients; callers
// zero grads explicitly between steps.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false,
                      Precision precision = Precision::F64);
  static Tensor full(Shape shape, double value, bool requires_grad = false,
                     Precision precision = Precision::F64);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false,
                            Precision precision = Precision::F64);
  static Tensor randn(Shape shape, Rng& rng, double stddev,
                      bool requires_grad = false,
                      Precision precision = Precision::F64);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t size() const { return impl_->values.size(); }
  std::size_t rank() const { return impl_->shape.size(); }
  bool requires_grad() const { return impl_->requires_grad; }
  Precision precision() const { return impl_->precision; }

  const std::vector<double>& values() const { return impl_->values; }
  double scalar() const;

  // Gradient buffer; zeros if backward never reached this tensor.
  const std::vector<double>& grad() const;
  void zero_grad();

  // Leaf mutation hooks for the optimizer and for test setup. Mutating a
  // non-leaf invalidates any live tape, so training code only touches leaves.
  std::vector<double>& mutable_values() { return impl_->values; }

  // Reverse-mode sweep from a scalar. Grads accumulate additively across
  // repeated calls; zero_grad between steps is the caller's job.
  void backward() const;

  detail::TensorImpl* impl() const { return impl_.get(); }
  std::shared_ptr<detail::TensorImpl> impl_ptr() const { return impl_; }

  static Tensor wrap(std::shared_ptr<detail::TensorImpl> impl) {
    Tensor t;
    t.impl_ = std::move(impl);
    return t;
  }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// When a NoGradScope is alive, operations record no tape and outputs do not
// require gradients. Used for inference and frozen-backbone passes.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// ---------------------------------------------------------------------------
// Multiply-accumulate instrumentation. Every matmul contraction adds its
// exact MAC count to a global tally while counting is active. Single-threaded
// by contract; nested activation is a contract error.
namespace macs {
void begin();
std::uint64_t end();
bool active();
}  // namespace macs

// ---------------------------------------------------------------------------
// Operator set. All operations are pure; gradients are registered for every
// differentiable input.

// Contraction over the last axis of a and the first non-batch axis of b.
// Accepts [m,k]x[k,n], [B,m,k]x[B,k,n] and [B,m,k]x[k,n].
Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise add. b may have a shape that is a trailing suffix of a's
// shape, in which case it broadcasts over the leading axes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);

// Elementwise multiply with the same suffix-broadcast rule as add.
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double c);
// Multiply by a single-element tensor (differentiable in both operands).
Tensor scale_by(const Tensor& a, const Tensor& s);

Tensor softmax(const Tensor& x, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor mean(const Tensor& x, int axis);
Tensor mean_all(const Tensor& x);
Tensor sum_all(const Tensor& x);

// Rows of `table` selected by id; out-of-range ids raise ContractError.
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);

Tensor permute(const Tensor& x, const std::vector<int>& perm);
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose2d(const Tensor& x);

// Concatenate along `axis`; shapes must agree on all other axes.
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& x, const std::vector<int>& rows);
// Stack 1-D tensors of equal length into a matrix.
Tensor stack_rows(const std::vector<Tensor>& rows);

// Normalize the last axis to unit Euclidean length.
Tensor l2_normalize(const Tensor& x);

// Mean negative log-likelihood of `targets` under row-wise softmax(logits).
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets);

// Mean binary cross-entropy from logits, numerically stable.
Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& labels);

// Row-wise log-sum-exp ratio loss used by the contrastive objective:
//   loss = -(1/|I|) * sum_{i in I} [ lse(x_i | num_mask) - lse(x_i | den_mask) ]
// where I is the set of rows whose numerator mask is non-empty. Masks are
// row-major byte matrices matching x's 2-D shape.
Tensor masked_lse_ratio_loss(const Tensor& x,
                             const std::vector<std::uint8_t>& num_mask,
                             const std::vector<std::uint8_t>& den_mask);

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

}  // namespace vtp

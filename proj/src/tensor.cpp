#include "vtp/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace vtp {

namespace {

using detail::TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

bool g_grad_enabled = true;

bool g_macs_active = false;
std::uint64_t g_macs_tally = 0;

double round_to(Precision p, double v) {
  return p == Precision::F32 ? static_cast<double>(static_cast<float>(v)) : v;
}

void round_buffer(Precision p, std::vector<double>& buf) {
  if (p == Precision::F32)
    for (double& v : buf) v = static_cast<double>(static_cast<float>(v));
}

Precision join_precision(const std::vector<Tensor>& inputs) {
  for (const Tensor& t : inputs)
    if (t.precision() == Precision::F64) return Precision::F64;
  return inputs.empty() ? Precision::F64 : Precision::F32;
}

// Creates the output node; records parents/backprop only when some input
// requires a gradient and grad mode is on.
Tensor make_op(Shape shape, std::vector<double> values,
               const std::vector<Tensor>& inputs,
               std::function<void(TensorImpl&)> backprop) {
  auto impl = std::make_shared<TensorImpl>();
  impl->precision = join_precision(inputs);
  round_buffer(impl->precision, values);
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  if (shape_size(impl->shape) != impl->values.size())
    throw ShapeError("make_op: value count does not match shape " +
                     shape_str(impl->shape));
  bool needs = false;
  if (g_grad_enabled)
    for (const Tensor& t : inputs)
      if (t.requires_grad()) needs = true;
  if (needs) {
    impl->requires_grad = true;
    for (const Tensor& t : inputs) impl->parents.push_back(t.impl_ptr());
    impl->backprop = std::move(backprop);
  }
  return Tensor::wrap(std::move(impl));
}

void accumulate(TensorImpl& node, const std::vector<double>& delta) {
  node.ensure_grad();
  for (std::size_t i = 0; i < delta.size(); ++i) node.grad[i] += delta[i];
}

struct BatchedDims {
  std::size_t batch, m, k, n;
  bool b_batched;
};

BatchedDims matmul_dims(const Shape& a, const Shape& b) {
  if (a.size() == 2 && b.size() == 2) {
    if (a[1] != b[0])
      throw ShapeError("matmul: inner extents disagree, " + shape_str(a) +
                       " x " + shape_str(b));
    return {1, a[0], a[1], b[1], true};
  }
  if (a.size() == 3 && b.size() == 3) {
    if (a[0] != b[0] || a[2] != b[1])
      throw ShapeError("matmul: batch/inner extents disagree, " +
                       shape_str(a) + " x " + shape_str(b));
    return {a[0], a[1], a[2], b[2], true};
  }
  if (a.size() == 3 && b.size() == 2) {
    if (a[2] != b[0])
      throw ShapeError("matmul: inner extents disagree, " + shape_str(a) +
                       " x " + shape_str(b));
    return {a[0], a[1], a[2], b[1], false};
  }
  throw ShapeError("matmul: unsupported ranks " + shape_str(a) + " x " +
                   shape_str(b));
}

// Suffix broadcast: b's shape must equal the trailing part of a's shape.
void check_suffix(const Shape& a, const Shape& b, const char* op) {
  if (b.size() > a.size())
    throw ShapeError(std::string(op) + ": operand rank exceeds target, " +
                     shape_str(a) + " vs " + shape_str(b));
  for (std::size_t i = 0; i < b.size(); ++i)
    if (b[b.size() - 1 - i] != a[a.size() - 1 - i])
      throw ShapeError(std::string(op) + ": shapes not suffix-compatible, " +
                       shape_str(a) + " vs " + shape_str(b));
}

int norm_axis(int axis, std::size_t rank) {
  int ax = axis < 0 ? axis + static_cast<int>(rank) : axis;
  if (ax < 0 || ax >= static_cast<int>(rank))
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  return ax;
}

// Decomposes a shape around `axis` into (outer, extent, inner) strides.
struct AxisView {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, int axis) {
  AxisView v;
  v.extent = shape[static_cast<std::size_t>(axis)];
  for (int i = 0; i < axis; ++i) v.outer *= shape[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i)
    v.inner *= shape[i];
  return v;
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i)
    os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor basics

Tensor Tensor::zeros(Shape shape, bool requires_grad, Precision precision) {
  const std::size_t n = shape_size(shape);
  return from_values(std::move(shape), std::vector<double>(n, 0.0),
                     requires_grad, precision);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad,
                    Precision precision) {
  const std::size_t n = shape_size(shape);
  return from_values(std::move(shape), std::vector<double>(n, value),
                     requires_grad, precision);
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values,
                           bool requires_grad, Precision precision) {
  if (shape_size(shape) != values.size())
    throw ShapeError("from_values: " + std::to_string(values.size()) +
                     " values for shape " + shape_str(shape));
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->precision = precision;
  round_buffer(precision, values);
  impl->values = std::move(values);
  impl->requires_grad = requires_grad;
  return wrap(std::move(impl));
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad,
                     Precision precision) {
  std::vector<double> values(shape_size(shape));
  for (double& v : values) v = rng.normal() * stddev;
  return from_values(std::move(shape), std::move(values), requires_grad,
                     precision);
}

double Tensor::scalar() const {
  if (size() != 1)
    throw ContractError("scalar() on tensor of shape " + shape_str(shape()));
  return impl_->values[0];
}

const std::vector<double>& Tensor::grad() const {
  impl_->ensure_grad();
  return impl_->grad;
}

void Tensor::zero_grad() {
  impl_->grad.assign(impl_->values.size(), 0.0);
}

void Tensor::backward() const {
  if (size() != 1)
    throw ContractError("backward() requires a scalar loss, got shape " +
                        shape_str(shape()));
  if (!impl_->requires_grad) return;

  // Iterative post-order DFS for topological order.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  seen.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      TensorImpl* parent = node->parents[idx].get();
      ++idx;
      if (parent->requires_grad && !seen.count(parent)) {
        seen.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  impl_->ensure_grad();
  impl_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->backprop) {
      node->ensure_grad();
      node->backprop(*node);
    }
  }
}

NoGradScope::NoGradScope() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}
NoGradScope::~NoGradScope() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

namespace macs {
void begin() {
  if (g_macs_active)
    throw ContractError("MAC instrumentation is single-threaded and already active");
  g_macs_active = true;
  g_macs_tally = 0;
}
std::uint64_t end() {
  if (!g_macs_active) throw ContractError("MAC instrumentation not active");
  g_macs_active = false;
  return g_macs_tally;
}
bool active() { return g_macs_active; }
}  // namespace macs

// ---------------------------------------------------------------------------
// matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
  const BatchedDims d = matmul_dims(a.shape(), b.shape());
  const std::size_t am = d.m * d.k, bm = d.k * d.n, cm = d.m * d.n;
  std::vector<double> out(d.batch * cm);
  for (std::size_t i = 0; i < d.batch; ++i) {
    ConstMapMat A(a.values().data() + i * am, d.m, d.k);
    ConstMapMat B(b.values().data() + (d.b_batched ? i * bm : 0), d.k, d.n);
    MapMat C(out.data() + i * cm, d.m, d.n);
    C.noalias() = A * B;
  }
  if (g_macs_active)
    g_macs_tally += static_cast<std::uint64_t>(d.batch) * d.m * d.k * d.n;

  Shape out_shape = a.shape().size() == 2 ? Shape{d.m, d.n}
                                          : Shape{d.batch, d.m, d.n};
  auto ai = a.impl_ptr(), bi = b.impl_ptr();
  return make_op(std::move(out_shape), std::move(out), {a, b},
                 [ai, bi, d, am, bm, cm](TensorImpl& node) {
                   const bool need_a = ai->requires_grad;
                   const bool need_b = bi->requires_grad;
                   if (need_a) ai->ensure_grad();
                   if (need_b) bi->ensure_grad();
                   for (std::size_t i = 0; i < d.batch; ++i) {
                     ConstMapMat G(node.grad.data() + i * cm, d.m, d.n);
                     if (need_a) {
                       ConstMapMat B(bi->values.data() + (d.b_batched ? i * bm : 0),
                                     d.k, d.n);
                       MapMat GA(ai->grad.data() + i * am, d.m, d.k);
                       GA.noalias() += G * B.transpose();
                     }
                     if (need_b) {
                       ConstMapMat A(ai->values.data() + i * am, d.m, d.k);
                       MapMat GB(bi->grad.data() + (d.b_batched ? i * bm : 0),
                                 d.k, d.n);
                       GB.noalias() += A.transpose() * G;
                     }
                   }
                 });
}

// ---------------------------------------------------------------------------
// elementwise with suffix broadcast

namespace {

Tensor broadcast_binary(const Tensor& a, const Tensor& b, const char* name,
                        bool is_mul) {
  check_suffix(a.shape(), b.shape(), name);
  const std::size_t bn = b.size();
  const std::size_t n = a.size();
  std::vector<double> out(n);
  const auto& av = a.values();
  const auto& bv = b.values();
  if (is_mul)
    for (std::size_t i = 0; i < n; ++i) out[i] = av[i] * bv[i % bn];
  else
    for (std::size_t i = 0; i < n; ++i) out[i] = av[i] + bv[i % bn];

  auto ai = a.impl_ptr(), bi = b.impl_ptr();
  return make_op(a.shape(), std::move(out), {a, b},
                 [ai, bi, bn, n, is_mul](TensorImpl& node) {
                   if (ai->requires_grad) {
                     ai->ensure_grad();
                     if (is_mul)
                       for (std::size_t i = 0; i < n; ++i)
                         ai->grad[i] += node.grad[i] * bi->values[i % bn];
                     else
                       for (std::size_t i = 0; i < n; ++i)
                         ai->grad[i] += node.grad[i];
                   }
                   if (bi->requires_grad) {
                     bi->ensure_grad();
                     if (is_mul)
                       for (std::size_t i = 0; i < n; ++i)
                         bi->grad[i % bn] += node.grad[i] * ai->values[i];
                     else
                       for (std::size_t i = 0; i < n; ++i)
                         bi->grad[i % bn] += node.grad[i];
                   }
                 });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return broadcast_binary(a, b, "add", false);
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  return broadcast_binary(a, b, "mul", true);
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * c;
  auto ai = a.impl_ptr();
  return make_op(a.shape(), std::move(out), {a}, [ai, c](TensorImpl& node) {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    for (std::size_t i = 0; i < node.grad.size(); ++i)
      ai->grad[i] += node.grad[i] * c;
  });
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
  if (s.size() != 1)
    throw ShapeError("scale_by: scaling tensor must hold one element, got " +
                     shape_str(s.shape()));
  const double c = s.values()[0];
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * c;
  auto ai = a.impl_ptr(), si = s.impl_ptr();
  return make_op(a.shape(), std::move(out), {a, s},
                 [ai, si, c](TensorImpl& node) {
                   if (ai->requires_grad) {
                     ai->ensure_grad();
                     for (std::size_t i = 0; i < node.grad.size(); ++i)
                       ai->grad[i] += node.grad[i] * c;
                   }
                   if (si->requires_grad) {
                     si->ensure_grad();
                     double g = 0.0;
                     for (std::size_t i = 0; i < node.grad.size(); ++i)
                       g += node.grad[i] * ai->values[i];
                     si->grad[0] += g;
                   }
                 });
}

// ---------------------------------------------------------------------------
// softmax / layer_norm / pointwise

Tensor softmax(const Tensor& x, int axis) {
  const int ax = norm_axis(axis, x.rank());
  const AxisView v = axis_view(x.shape(), ax);
  std::vector<double> out(x.size());
  const auto& xv = x.values();
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.extent * v.inner + in;
      double mx = -1e300;
      for (std::size_t e = 0; e < v.extent; ++e)
        mx = std::max(mx, xv[base + e * v.inner]);
      double sum = 0.0;
      for (std::size_t e = 0; e < v.extent; ++e) {
        const double val = std::exp(xv[base + e * v.inner] - mx);
        out[base + e * v.inner] = val;
        sum += val;
      }
      for (std::size_t e = 0; e < v.extent; ++e) out[base + e * v.inner] /= sum;
    }

  auto xi = x.impl_ptr();
  auto yv = std::make_shared<std::vector<double>>(out);
  return make_op(x.shape(), std::move(out), {x}, [xi, yv, v](TensorImpl& node) {
    if (!xi->requires_grad) return;
    xi->ensure_grad();
    const auto& y = *yv;
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t in = 0; in < v.inner; ++in) {
        const std::size_t base = o * v.extent * v.inner + in;
        double dot = 0.0;
        for (std::size_t e = 0; e < v.extent; ++e) {
          const std::size_t idx = base + e * v.inner;
          dot += node.grad[idx] * y[idx];
        }
        for (std::size_t e = 0; e < v.extent; ++e) {
          const std::size_t idx = base + e * v.inner;
          xi->grad[idx] += y[idx] * (node.grad[idx] - dot);
        }
      }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  const std::size_t d = x.shape().back();
  if (gain.size() != d || bias.size() != d)
    throw ShapeError("layer_norm: gain/bias must match last extent " +
                     std::to_string(d));
  const std::size_t rows = x.size() / d;
  std::vector<double> out(x.size());
  auto stats = std::make_shared<std::vector<double>>(rows * 2);  // mean, rstd
  const auto& xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* px = xv.data() + r * d;
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean += px[i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (px[i] - mean) * (px[i] - mean);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + eps);
    (*stats)[2 * r] = mean;
    (*stats)[2 * r + 1] = rstd;
    for (std::size_t i = 0; i < d; ++i)
      out[r * d + i] = (px[i] - mean) * rstd * gain.values()[i] + bias.values()[i];
  }

  auto xi = x.impl_ptr(), gi = gain.impl_ptr(), bi = bias.impl_ptr();
  return make_op(x.shape(), std::move(out), {x, gain, bias},
                 [xi, gi, bi, stats, rows, d](TensorImpl& node) {
                   for (std::size_t r = 0; r < rows; ++r) {
                     const double mean = (*stats)[2 * r];
                     const double rstd = (*stats)[2 * r + 1];
                     const double* px = xi->values.data() + r * d;
                     const double* pg = node.grad.data() + r * d;
                     if (gi->requires_grad || bi->requires_grad) {
                       if (gi->requires_grad) gi->ensure_grad();
                       if (bi->requires_grad) bi->ensure_grad();
                       for (std::size_t i = 0; i < d; ++i) {
                         const double xhat = (px[i] - mean) * rstd;
                         if (gi->requires_grad) gi->grad[i] += pg[i] * xhat;
                         if (bi->requires_grad) bi->grad[i] += pg[i];
                       }
                     }
                     if (xi->requires_grad) {
                       xi->ensure_grad();
                       double sum_g = 0.0, sum_gx = 0.0;
                       for (std::size_t i = 0; i < d; ++i) {
                         const double gy = pg[i] * gi->values[i];
                         const double xhat = (px[i] - mean) * rstd;
                         sum_g += gy;
                         sum_gx += gy * xhat;
                       }
                       const double nd = static_cast<double>(d);
                       for (std::size_t i = 0; i < d; ++i) {
                         const double gy = pg[i] * gi->values[i];
                         const double xhat = (px[i] - mean) * rstd;
                         xi->grad[r * d + i] +=
                             rstd * (gy - sum_g / nd - xhat * sum_gx / nd);
                       }
                     }
                   }
                 });
}

namespace {

constexpr double kInvSqrt2 = 0.7071067811865476;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

}  // namespace

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.values()[i];
    out[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  }
  auto xi = x.impl_ptr();
  return make_op(x.shape(), std::move(out), {x}, [xi](TensorImpl& node) {
    if (!xi->requires_grad) return;
    xi->ensure_grad();
    for (std::size_t i = 0; i < node.grad.size(); ++i) {
      const double v = xi->values[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      xi->grad[i] += node.grad[i] * (cdf + v * pdf);
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.values()[i];
    out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                      : std::exp(v) / (1.0 + std::exp(v));
  }
  auto xi = x.impl_ptr();
  auto yv = std::make_shared<std::vector<double>>(out);
  return make_op(x.shape(), std::move(out), {x}, [xi, yv](TensorImpl& node) {
    if (!xi->requires_grad) return;
    xi->ensure_grad();
    for (std::size_t i = 0; i < node.grad.size(); ++i) {
      const double s = (*yv)[i];
      xi->grad[i] += node.grad[i] * s * (1.0 - s);
    }
  });
}

Tensor mean(const Tensor& x, int axis) {
  const int ax = norm_axis(axis, x.rank());
  const AxisView v = axis_view(x.shape(), ax);
  Shape out_shape;
  for (std::size_t i = 0; i < x.rank(); ++i)
    if (static_cast<int>(i) != ax) out_shape.push_back(x.shape()[i]);
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<double> out(v.outer * v.inner, 0.0);
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t e = 0; e < v.extent; ++e)
      for (std::size_t in = 0; in < v.inner; ++in)
        out[o * v.inner + in] += x.values()[(o * v.extent + e) * v.inner + in];
  for (double& val : out) val /= static_cast<double>(v.extent);

  auto xi = x.impl_ptr();
  return make_op(std::move(out_shape), std::move(out), {x},
                 [xi, v](TensorImpl& node) {
                   if (!xi->requires_grad) return;
                   xi->ensure_grad();
                   const double inv = 1.0 / static_cast<double>(v.extent);
                   for (std::size_t o = 0; o < v.outer; ++o)
                     for (std::size_t e = 0; e < v.extent; ++e)
                       for (std::size_t in = 0; in < v.inner; ++in)
                         xi->grad[(o * v.extent + e) * v.inner + in] +=
                             node.grad[o * v.inner + in] * inv;
                 });
}

namespace {

Tensor reduce_all(const Tensor& x, bool take_mean) {
  double sum = 0.0;
  for (double v : x.values()) sum += v;
  const double denom = take_mean ? static_cast<double>(x.size()) : 1.0;
  auto xi = x.impl_ptr();
  return make_op({1}, {sum / denom}, {x}, [xi, denom](TensorImpl& node) {
    if (!xi->requires_grad) return;
    xi->ensure_grad();
    const double g = node.grad[0] / denom;
    for (double& gv : xi->grad) gv += g;
  });
}

}  // namespace

Tensor mean_all(const Tensor& x) { return reduce_all(x, true); }
Tensor sum_all(const Tensor& x) { return reduce_all(x, false); }

// ---------------------------------------------------------------------------
// indexing / reshaping

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  if (table.rank() != 2)
    throw ShapeError("embedding_lookup: table must be 2-D, got " +
                     shape_str(table.shape()));
  const std::size_t rows = table.shape()[0], d = table.shape()[1];
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows)
      throw ContractError("embedding_lookup: id " + std::to_string(ids[i]) +
                          " out of range [0," + std::to_string(rows) + ")");
    std::copy_n(table.values().data() + static_cast<std::size_t>(ids[i]) * d, d,
                out.data() + i * d);
  }
  auto ti = table.impl_ptr();
  return make_op({ids.size(), d}, std::move(out), {table},
                 [ti, ids, d](TensorImpl& node) {
                   if (!ti->requires_grad) return;
                   ti->ensure_grad();
                   for (std::size_t i = 0; i < ids.size(); ++i)
                     for (std::size_t j = 0; j < d; ++j)
                       ti->grad[static_cast<std::size_t>(ids[i]) * d + j] +=
                           node.grad[i * d + j];
                 });
}

namespace {

std::vector<std::size_t> row_major_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
    strides[static_cast<std::size_t>(i)] =
        strides[static_cast<std::size_t>(i) + 1] * shape[static_cast<std::size_t>(i) + 1];
  return strides;
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
  if (perm.size() != x.rank())
    throw ShapeError("permute: perm size must equal rank");
  Shape out_shape(x.rank());
  for (std::size_t i = 0; i < perm.size(); ++i)
    out_shape[i] = x.shape()[static_cast<std::size_t>(perm[i])];
  const auto in_strides = row_major_strides(x.shape());
  const auto out_strides = row_major_strides(out_shape);
  // Mapping from output flat index to input flat index.
  auto map = std::make_shared<std::vector<std::size_t>>(x.size());
  for (std::size_t oi = 0; oi < x.size(); ++oi) {
    std::size_t rem = oi, ii = 0;
    for (std::size_t a = 0; a < out_shape.size(); ++a) {
      const std::size_t coord = rem / out_strides[a];
      rem %= out_strides[a];
      ii += coord * in_strides[static_cast<std::size_t>(perm[a])];
    }
    (*map)[oi] = ii;
  }
  std::vector<double> out(x.size());
  for (std::size_t oi = 0; oi < out.size(); ++oi)
    out[oi] = x.values()[(*map)[oi]];
  auto xi = x.impl_ptr();
  return make_op(std::move(out_shape), std::move(out), {x},
                 [xi, map](TensorImpl& node) {
                   if (!xi->requires_grad) return;
                   xi->ensure_grad();
                   for (std::size_t oi = 0; oi < node.grad.size(); ++oi)
                     xi->grad[(*map)[oi]] += node.grad[oi];
                 });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  auto xi = x.impl_ptr();
  std::vector<double> out = x.values();
  return make_op(std::move(shape), std::move(out), {x}, [xi](TensorImpl& node) {
    if (!xi->requires_grad) return;
    xi->ensure_grad();
    for (std::size_t i = 0; i < node.grad.size(); ++i)
      xi->grad[i] += node.grad[i];
  });
}

Tensor transpose2d(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("transpose2d: rank-2 only");
  return permute(x, {1, 0});
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: empty input");
  const int ax = norm_axis(axis, parts[0].rank());
  Shape out_shape = parts[0].shape();
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != parts[0].rank())
      throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < p.rank(); ++i)
      if (static_cast<int>(i) != ax && p.shape()[i] != out_shape[i])
        throw ShapeError("concat: extent mismatch off the concat axis, " +
                         shape_str(p.shape()) + " vs " + shape_str(out_shape));
    total += p.shape()[static_cast<std::size_t>(ax)];
  }
  out_shape[static_cast<std::size_t>(ax)] = total;

  const AxisView ov = axis_view(out_shape, ax);
  std::vector<double> out(shape_size(out_shape));
  std::vector<std::size_t> offsets(parts.size());
  std::size_t off = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    offsets[p] = off;
    const std::size_t ext = parts[p].shape()[static_cast<std::size_t>(ax)];
    const std::size_t chunk = ext * ov.inner;
    for (std::size_t o = 0; o < ov.outer; ++o)
      std::copy_n(parts[p].values().data() + o * chunk, chunk,
                  out.data() + (o * ov.extent + off) * ov.inner);
    off += ext;
  }

  std::vector<std::shared_ptr<TensorImpl>> impls;
  for (const Tensor& p : parts) impls.push_back(p.impl_ptr());
  return make_op(std::move(out_shape), std::move(out), parts,
                 [impls, offsets, ov, ax](TensorImpl& node) {
                   for (std::size_t p = 0; p < impls.size(); ++p) {
                     auto& pi = impls[p];
                     if (!pi->requires_grad) continue;
                     pi->ensure_grad();
                     const std::size_t ext =
                         pi->shape[static_cast<std::size_t>(ax)];
                     const std::size_t chunk = ext * ov.inner;
                     for (std::size_t o = 0; o < ov.outer; ++o) {
                       const double* src =
                           node.grad.data() + (o * ov.extent + offsets[p]) * ov.inner;
                       double* dst = pi->grad.data() + o * chunk;
                       for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                     }
                   }
                 });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.rank() < 1 || begin > end || end > x.shape()[0])
    throw ShapeError("slice_rows: invalid range [" + std::to_string(begin) +
                     "," + std::to_string(end) + ") for " + shape_str(x.shape()));
  Shape out_shape = x.shape();
  out_shape[0] = end - begin;
  const std::size_t inner = x.size() / x.shape()[0];
  std::vector<double> out((end - begin) * inner);
  std::copy_n(x.values().data() + begin * inner, out.size(), out.data());
  auto xi = x.impl_ptr();
  return make_op(std::move(out_shape), std::move(out), {x},
                 [xi, begin, inner](TensorImpl& node) {
                   if (!xi->requires_grad) return;
                   xi->ensure_grad();
                   for (std::size_t i = 0; i < node.grad.size(); ++i)
                     xi->grad[begin * inner + i] += node.grad[i];
                 });
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& rows) {
  if (x.rank() < 1) throw ShapeError("gather_rows: rank must be >= 1");
  const std::size_t nrows = x.shape()[0];
  const std::size_t inner = x.size() / nrows;
  Shape out_shape = x.shape();
  out_shape[0] = rows.size();
  std::vector<double> out(rows.size() * inner);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || static_cast<std::size_t>(rows[i]) >= nrows)
      throw ContractError("gather_rows: row " + std::to_string(rows[i]) +
                          " out of range");
    std::copy_n(x.values().data() + static_cast<std::size_t>(rows[i]) * inner,
                inner, out.data() + i * inner);
  }
  auto xi = x.impl_ptr();
  return make_op(std::move(out_shape), std::move(out), {x},
                 [xi, rows, inner](TensorImpl& node) {
                   if (!xi->requires_grad) return;
                   xi->ensure_grad();
                   for (std::size_t i = 0; i < rows.size(); ++i)
                     for (std::size_t j = 0; j < inner; ++j)
                       xi->grad[static_cast<std::size_t>(rows[i]) * inner + j] +=
                           node.grad[i * inner + j];
                 });
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: empty input");
  const std::size_t d = rows[0].size();
  for (const Tensor& r : rows)
    if (r.rank() != 1 || r.size() != d)
      throw ShapeError("stack_rows: all rows must be 1-D of equal length");
  std::vector<double> out(rows.size() * d);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(rows[i].values().data(), d, out.data() + i * d);
  std::vector<std::shared_ptr<TensorImpl>> impls;
  for (const Tensor& r : rows) impls.push_back(r.impl_ptr());
  return make_op({rows.size(), d}, std::move(out), rows,
                 [impls, d](TensorImpl& node) {
                   for (std::size_t i = 0; i < impls.size(); ++i) {
                     if (!impls[i]->requires_grad) continue;
                     impls[i]->ensure_grad();
                     for (std::size_t j = 0; j < d; ++j)
                       impls[i]->grad[j] += node.grad[i * d + j];
                   }
                 });
}

Tensor l2_normalize(const Tensor& x) {
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.size() / d;
  std::vector<double> out(x.size());
  auto norms = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* px = x.values().data() + r * d;
    double sq = 0.0;
    for (std::size_t i = 0; i < d; ++i) sq += px[i] * px[i];
    const double norm = std::sqrt(sq);
    if (norm == 0.0)
      throw ContractError("l2_normalize: zero-length row " + std::to_string(r));
    (*norms)[r] = norm;
    for (std::size_t i = 0; i < d; ++i) out[r * d + i] = px[i] / norm;
  }
  auto xi = x.impl_ptr();
  return make_op(x.shape(), std::move(out), {x},
                 [xi, norms, rows, d](TensorImpl& node) {
                   if (!xi->requires_grad) return;
                   xi->ensure_grad();
                   for (std::size_t r = 0; r < rows; ++r) {
                     const double norm = (*norms)[r];
                     const double* px = xi->values.data() + r * d;
                     const double* pg = node.grad.data() + r * d;
                     double dot = 0.0;
                     for (std::size_t i = 0; i < d; ++i) dot += pg[i] * px[i];
                     dot /= (norm * norm);
                     for (std::size_t i = 0; i < d; ++i)
                       xi->grad[r * d + i] += (pg[i] - px[i] * dot) / norm;
                   }
                 });
}

// ---------------------------------------------------------------------------
// losses

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
  if (logits.rank() != 2)
    throw ShapeError("cross_entropy: logits must be 2-D");
  const std::size_t rows = logits.shape()[0], cols = logits.shape()[1];
  if (targets.size() != rows)
    throw ShapeError("cross_entropy: one target per row required");
  if (rows == 0) return Tensor::from_values({1}, {0.0});
  auto probs = std::make_shared<std::vector<double>>(logits.size());
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= cols)
      throw ContractError("cross_entropy: target out of range");
    const double* px = logits.values().data() + r * cols;
    double mx = px[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, px[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      (*probs)[r * cols + c] = std::exp(px[c] - mx);
      sum += (*probs)[r * cols + c];
    }
    for (std::size_t c = 0; c < cols; ++c) (*probs)[r * cols + c] /= sum;
    loss -= std::log((*probs)[r * cols + static_cast<std::size_t>(targets[r])]);
  }
  loss /= static_cast<double>(rows);
  auto li = logits.impl_ptr();
  return make_op({1}, {loss}, {logits},
                 [li, probs, targets, rows, cols](TensorImpl& node) {
                   if (!li->requires_grad) return;
                   li->ensure_grad();
                   const double g = node.grad[0] / static_cast<double>(rows);
                   for (std::size_t r = 0; r < rows; ++r)
                     for (std::size_t c = 0; c < cols; ++c) {
                       double delta = (*probs)[r * cols + c];
                       if (static_cast<std::size_t>(targets[r]) == c) delta -= 1.0;
                       li->grad[r * cols + c] += g * delta;
                     }
                 });
}

Tensor bce_with_logits(const Tensor& logits,
                       const std::vector<double>& labels) {
  if (logits.size() != labels.size())
    throw ShapeError("bce_with_logits: one label per logit required");
  const std::size_t n = logits.size();
  if (n == 0) return Tensor::from_values({1}, {0.0});
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = logits.values()[i];
    const double y = labels[i];
    // max(x,0) - x*y + log(1 + exp(-|x|))
    loss += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
  }
  loss /= static_cast<double>(n);
  auto li = logits.impl_ptr();
  return make_op({1}, {loss}, {logits}, [li, labels, n](TensorImpl& node) {
    if (!li->requires_grad) return;
    li->ensure_grad();
    const double g = node.grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double x = li->values[i];
      const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                : std::exp(x) / (1.0 + std::exp(x));
      li->grad[i] += g * (s - labels[i]);
    }
  });
}

Tensor masked_lse_ratio_loss(const Tensor& x,
                             const std::vector<std::uint8_t>& num_mask,
                             const std::vector<std::uint8_t>& den_mask) {
  if (x.rank() != 2) throw ShapeError("masked_lse_ratio_loss: 2-D input only");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  if (num_mask.size() != x.size() || den_mask.size() != x.size())
    throw ShapeError("masked_lse_ratio_loss: masks must match input shape");

  auto lse = [&](std::size_t r, const std::vector<std::uint8_t>& mask,
                 bool& any) {
    const double* px = x.values().data() + r * cols;
    double mx = -1e300;
    any = false;
    for (std::size_t c = 0; c < cols; ++c)
      if (mask[r * cols + c]) {
        any = true;
        mx = std::max(mx, px[c]);
      }
    if (!any) return 0.0;
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c)
      if (mask[r * cols + c]) sum += std::exp(px[c] - mx);
    return mx + std::log(sum);
  };

  auto active_rows = std::make_shared<std::vector<std::size_t>>();
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    bool any_num = false, any_den = false;
    const double num = lse(r, num_mask, any_num);
    if (!any_num) continue;  // row contributes no positive pair
    const double den = lse(r, den_mask, any_den);
    if (!any_den)
      throw ContractError("masked_lse_ratio_loss: empty denominator row " +
                          std::to_string(r));
    active_rows->push_back(r);
    total += den - num;
  }
  if (active_rows->empty())
    throw ContractError("masked_lse_ratio_loss: no row has a positive entry");
  const double inv = 1.0 / static_cast<double>(active_rows->size());
  const double loss = total * inv;

  auto xi = x.impl_ptr();
  return make_op({1}, {loss}, {x},
                 [xi, active_rows, num_mask, den_mask, cols,
                  inv](TensorImpl& node) {
                   if (!xi->requires_grad) return;
                   xi->ensure_grad();
                   const double g = node.grad[0] * inv;
                   auto apply = [&](std::size_t r,
                                    const std::vector<std::uint8_t>& mask,
                                    double sign) {
                     const double* px = xi->values.data() + r * cols;
                     double mx = -1e300;
                     for (std::size_t c = 0; c < cols; ++c)
                       if (mask[r * cols + c]) mx = std::max(mx, px[c]);
                     double sum = 0.0;
                     for (std::size_t c = 0; c < cols; ++c)
                       if (mask[r * cols + c]) sum += std::exp(px[c] - mx);
                     for (std::size_t c = 0; c < cols; ++c)
                       if (mask[r * cols + c])
                         xi->grad[r * cols + c] +=
                             g * sign * std::exp(px[c] - mx) / sum;
                   };
                   for (std::size_t r : *active_rows) {
                     apply(r, den_mask, 1.0);   // d(lse_den)
                     apply(r, num_mask, -1.0);  // -d(lse_num)
                   }
                 });
}

}  // namespace vtp

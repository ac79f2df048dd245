#pragma once

#include "metapix/tensor.hpp"

#include <Eigen/Core>

#include <cmath>
#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace metapix {

template <class Scalar>
class Tape;

/// Handle to a node recorded on a Tape.
template <class Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<Scalar>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape->requires_grad(id); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node list
/// is already a topological order and backward is a single reverse sweep.
///
/// Parameters enter through leaf(); their gradients are accumulated into the
/// owning Tensor's grad buffer when backward() runs. The referenced tensors
/// must outlive the tape and must not be mutated while it is alive.
template <class Scalar>
class Tape {
 public:
  using Vector = typename Tensor<Scalar>::Vector;
  using BackwardFn = std::function<void(Tape&, const Vector&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> leaf(Tensor<Scalar>& param) {
    Node node;
    node.external = &param;
    node.requires_grad = param.requires_grad();
    node.param = param.requires_grad() ? &param : nullptr;
    return push(std::move(node));
  }

  /// Read-only view of an external tensor; never receives gradients.
  Var<Scalar> reference(const Tensor<Scalar>& value) {
    Node node;
    node.external = &value;
    return push(std::move(node));
  }

  Var<Scalar> constant(Tensor<Scalar> value) {
    Node node;
    node.owned = std::move(value);
    return push(std::move(node));
  }

  /// Records an operation result. The backward rule is kept only when some
  /// input requires a gradient.
  Var<Scalar> record(Tensor<Scalar> value, std::vector<std::size_t> inputs, BackwardFn backward) {
    Node node;
    node.owned = std::move(value);
    for (std::size_t in : inputs) {
      if (in >= nodes_.size()) throw std::logic_error("tape input recorded out of order");
      node.requires_grad = node.requires_grad || nodes_[in].requires_grad;
    }
    if (node.requires_grad) {
      node.inputs = std::move(inputs);
      node.backward = std::move(backward);
    }
    return push(std::move(node));
  }

  const Tensor<Scalar>& value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.external ? *n.external : n.owned;
  }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient accumulator of a node, zero-initialized on first use.
  Vector& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Vector::Zero(value(id).size());
    return n.grad;
  }

  std::size_t size() const noexcept { return nodes_.size(); }

  /// Writes d(loss)/d(param) into every requires_grad leaf. Repeated calls
  /// accumulate into the parameter gradients.
  void backward(Var<Scalar> loss) {
    if (loss.tape != this) throw std::invalid_argument("loss was recorded on a different tape");
    if (value(loss.id).size() != 1) {
      throw std::invalid_argument("backward requires a scalar loss, got shape " +
                                  shape_str(value(loss.id).shape()));
    }
    for (Node& n : nodes_) n.grad.resize(0);
    if (!nodes_[loss.id].requires_grad) return;
    grad(loss.id).setConstant(Scalar(1));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      if (n.backward) {
        Vector g = std::move(n.grad);
        n.backward(*this, g);
        n.grad.resize(0);
      } else if (n.param) {
        n.param->grad_buffer() += n.grad;
      }
    }
  }

 private:
  struct Node {
    Tensor<Scalar> owned;
    const Tensor<Scalar>* external = nullptr;
    Tensor<Scalar>* param = nullptr;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Vector grad;
  };

  Var<Scalar> push(Node node) {
    nodes_.push_back(std::move(node));
    return Var<Scalar>{this, nodes_.size() - 1};
  }

  std::deque<Node> nodes_;  // stable addresses across push_back
};

// ---------------------------------------------------------------------------
// Elementwise

enum class UnaryKind { relu, leaky_relu, tanh, sigmoid, neg };
enum class BinaryKind { add, sub, mul };

namespace detail {

template <class Scalar>
void require_same_tape(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.tape != b.tape) throw std::invalid_argument("operands live on different tapes");
}

template <class Scalar>
void accumulate(Tape<Scalar>& tape, std::size_t id, const typename Tape<Scalar>::Vector& g) {
  if (tape.requires_grad(id)) tape.grad(id) += g;
}

inline void require_rank4(const Shape& s, const char* what) {
  if (s.size() != 4) throw std::invalid_argument(std::string(what) + " expects a rank-4 tensor, got " + shape_str(s));
}

}  // namespace detail

template <class Scalar>
Var<Scalar> unary(UnaryKind kind, Var<Scalar> x, Scalar alpha = Scalar(0.2)) {
  using Vector = typename Tape<Scalar>::Vector;
  const auto& in = x.value().data().array();
  Vector out;
  switch (kind) {
    case UnaryKind::relu: out = in.max(Scalar(0)); break;
    case UnaryKind::leaky_relu: out = (in > 0).select(in, alpha * in); break;
    case UnaryKind::tanh: out = in.tanh(); break;
    case UnaryKind::sigmoid: out = (Scalar(1) + (-in).exp()).inverse(); break;
    case UnaryKind::neg: out = -in; break;
  }
  const std::size_t xi = x.id;
  return x.tape->record(Tensor<Scalar>(x.shape(), std::move(out)), {xi},
                        [xi, kind, alpha, out_id = x.tape->size()](Tape<Scalar>& t, const Vector& g) {
                          const auto& xv = t.value(xi).data().array();
                          const auto& yv = t.value(out_id).data().array();
                          Vector dx;
                          switch (kind) {
                            case UnaryKind::relu: dx = (xv > 0).select(g.array(), Scalar(0)); break;
                            case UnaryKind::leaky_relu: dx = (xv > 0).select(g.array(), alpha * g.array()); break;
                            case UnaryKind::tanh: dx = g.array() * (Scalar(1) - yv.square()); break;
                            case UnaryKind::sigmoid: dx = g.array() * yv * (Scalar(1) - yv); break;
                            case UnaryKind::neg: dx = -g; break;
                          }
                          t.grad(xi) += dx;
                        });
}

template <class Scalar> Var<Scalar> relu(Var<Scalar> x) { return unary(UnaryKind::relu, x); }
template <class Scalar> Var<Scalar> leaky_relu(Var<Scalar> x, Scalar alpha) { return unary(UnaryKind::leaky_relu, x, alpha); }
template <class Scalar> Var<Scalar> tanh(Var<Scalar> x) { return unary(UnaryKind::tanh, x); }
template <class Scalar> Var<Scalar> sigmoid(Var<Scalar> x) { return unary(UnaryKind::sigmoid, x); }

/// Binary elementwise op. Shapes must match, or one side must hold a single
/// element which is broadcast.
template <class Scalar>
Var<Scalar> binary(BinaryKind kind, Var<Scalar> a, Var<Scalar> b) {
  using Vector = typename Tape<Scalar>::Vector;
  detail::require_same_tape(a, b);
  const Tensor<Scalar>& av = a.value();
  const Tensor<Scalar>& bv = b.value();
  const bool a_scalar = av.size() == 1 && bv.size() != 1;
  const bool b_scalar = bv.size() == 1 && av.size() != 1;
  if (!a_scalar && !b_scalar && av.shape() != bv.shape()) {
    throw std::invalid_argument("elementwise shape mismatch: " + shape_str(av.shape()) + " vs " +
                                shape_str(bv.shape()));
  }
  const Shape out_shape = a_scalar ? bv.shape() : av.shape();
  const Index n = numel(out_shape);
  auto expand = [n](const Tensor<Scalar>& t) -> Vector {
    return t.size() == 1 ? Vector::Constant(n, t[0]) : t.data();
  };
  const Vector x = expand(av);
  const Vector y = expand(bv);
  Vector out;
  switch (kind) {
    case BinaryKind::add: out = x + y; break;
    case BinaryKind::sub: out = x - y; break;
    case BinaryKind::mul: out = x.cwiseProduct(y); break;
  }
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(
      Tensor<Scalar>(out_shape, std::move(out)), {ai, bi},
      [ai, bi, kind, a_scalar, b_scalar](Tape<Scalar>& t, const Vector& g) {
        auto reduce_to = [&](std::size_t id, bool was_scalar, const Vector& grad) {
          if (!t.requires_grad(id)) return;
          if (was_scalar) t.grad(id)[0] += grad.sum();
          else t.grad(id) += grad;
        };
        switch (kind) {
          case BinaryKind::add:
            reduce_to(ai, a_scalar, g);
            reduce_to(bi, b_scalar, g);
            break;
          case BinaryKind::sub:
            reduce_to(ai, a_scalar, g);
            reduce_to(bi, b_scalar, Vector(-g));
            break;
          case BinaryKind::mul: {
            const Tensor<Scalar>& av = t.value(ai);
            const Tensor<Scalar>& bv = t.value(bi);
            if (t.requires_grad(ai)) {
              reduce_to(ai, a_scalar, b_scalar ? Vector(g * bv[0]) : Vector(g.cwiseProduct(bv.data())));
            }
            if (t.requires_grad(bi)) {
              reduce_to(bi, b_scalar, a_scalar ? Vector(g * av[0]) : Vector(g.cwiseProduct(av.data())));
            }
            break;
          }
        }
      });
}

template <class Scalar> Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) { return binary(BinaryKind::add, a, b); }
template <class Scalar> Var<Scalar> operator-(Var<Scalar> a, Var<Scalar> b) { return binary(BinaryKind::sub, a, b); }
template <class Scalar> Var<Scalar> operator*(Var<Scalar> a, Var<Scalar> b) { return binary(BinaryKind::mul, a, b); }
template <class Scalar> Var<Scalar> operator-(Var<Scalar> a) { return unary(UnaryKind::neg, a); }

template <class Scalar>
Var<Scalar> scale(Var<Scalar> x, Scalar factor) {
  return x * x.tape->constant(Tensor<Scalar>::scalar(factor));
}

/// Cuts the gradient path: the result is a constant copy of x.
template <class Scalar>
Var<Scalar> detach(Var<Scalar> x) {
  return x.tape->constant(x.value());
}

// ---------------------------------------------------------------------------
// Spatial ops on N x C x H x W tensors

template <class Scalar>
Var<Scalar> add_channel_bias(Var<Scalar> x, Var<Scalar> bias) {
  using Vector = typename Tape<Scalar>::Vector;
  detail::require_same_tape(x, bias);
  const Shape& s = x.shape();
  detail::require_rank4(s, "add_channel_bias");
  if (bias.value().size() != s[1]) {
    throw std::invalid_argument("bias of shape " + shape_str(bias.shape()) + " does not match channels of " +
                                shape_str(s));
  }
  const Index n = s[0], c = s[1], hw = s[2] * s[3];
  Vector out = x.value().data();
  const Vector& b = bias.value().data();
  for (Index i = 0; i < n; ++i)
    for (Index ch = 0; ch < c; ++ch) out.segment((i * c + ch) * hw, hw).array() += b[ch];
  const std::size_t xi = x.id, bi = bias.id;
  return x.tape->record(Tensor<Scalar>(s, std::move(out)), {xi, bi},
                        [xi, bi, n, c, hw](Tape<Scalar>& t, const Vector& g) {
                          detail::accumulate(t, xi, g);
                          if (t.requires_grad(bi)) {
                            Vector& gb = t.grad(bi);
                            for (Index i = 0; i < n; ++i)
                              for (Index ch = 0; ch < c; ++ch) gb[ch] += g.segment((i * c + ch) * hw, hw).sum();
                          }
                        });
}

namespace detail {

struct ConvGeometry {
  Index n, c_in, h, w, c_out, k, stride, pad, h_out, w_out;
  Index patch() const { return c_in * k * k; }
  Index positions() const { return n * h_out * w_out; }
};

/// Patch matrix with one row per (channel, ky, kx) and one column per
/// (sample, output position).
template <class Scalar>
void im2col(const Scalar* x, const ConvGeometry& g,
            Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& cols) {
  cols.resize(g.patch(), g.positions());
  const Index plane = g.h_out * g.w_out;
  for (Index c = 0; c < g.c_in; ++c)
    for (Index ky = 0; ky < g.k; ++ky)
      for (Index kx = 0; kx < g.k; ++kx) {
        Scalar* row = cols.row((c * g.k + ky) * g.k + kx).data();
        for (Index s = 0; s < g.n; ++s) {
          const Scalar* src = x + (s * g.c_in + c) * g.h * g.w;
          Scalar* dst = row + s * plane;
          for (Index oy = 0; oy < g.h_out; ++oy) {
            const Index iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.h) {
              for (Index ox = 0; ox < g.w_out; ++ox) dst[oy * g.w_out + ox] = Scalar(0);
              continue;
            }
            for (Index ox = 0; ox < g.w_out; ++ox) {
              const Index ix = ox * g.stride - g.pad + kx;
              dst[oy * g.w_out + ox] = (ix >= 0 && ix < g.w) ? src[iy * g.w + ix] : Scalar(0);
            }
          }
        }
      }
}

template <class Scalar>
void col2im(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& cols,
            const ConvGeometry& g, Scalar* dx) {
  const Index plane = g.h_out * g.w_out;
  for (Index c = 0; c < g.c_in; ++c)
    for (Index ky = 0; ky < g.k; ++ky)
      for (Index kx = 0; kx < g.k; ++kx) {
        const Scalar* row = cols.row((c * g.k + ky) * g.k + kx).data();
        for (Index s = 0; s < g.n; ++s) {
          Scalar* dst = dx + (s * g.c_in + c) * g.h * g.w;
          const Scalar* src = row + s * plane;
          for (Index oy = 0; oy < g.h_out; ++oy) {
            const Index iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.h) continue;
            for (Index ox = 0; ox < g.w_out; ++ox) {
              const Index ix = ox * g.stride - g.pad + kx;
              if (ix >= 0 && ix < g.w) dst[iy * g.w + ix] += src[oy * g.w_out + ox];
            }
          }
        }
      }
}

}  // namespace detail

/// Cross-correlation of an N x C_in x H x W input with a C_out x C_in x k x k
/// kernel, lowered to a single GEMM over the whole batch.
template <class Scalar>
Var<Scalar> conv2d(Var<Scalar> input, Var<Scalar> kernel, Index stride = 1, Index padding = 0) {
  using Vector = typename Tape<Scalar>::Vector;
  using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  detail::require_same_tape(input, kernel);
  const Shape& xs = input.shape();
  const Shape& ks = kernel.shape();
  detail::require_rank4(xs, "conv2d input");
  detail::require_rank4(ks, "conv2d kernel");
  if (ks[1] != xs[1]) {
    throw std::invalid_argument("conv2d channel mismatch: input " + shape_str(xs) + " vs kernel " + shape_str(ks));
  }
  if (ks[2] != ks[3] || ks[2] % 2 == 0) {
    throw std::invalid_argument("conv2d kernel must be square with odd size, got " + shape_str(ks));
  }
  if (stride < 1 || padding < 0) throw std::invalid_argument("conv2d stride must be >= 1 and padding >= 0");
  detail::ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ks[0], ks[2], stride, padding, 0, 0};
  const Index span_h = g.h + 2 * padding - g.k;
  const Index span_w = g.w + 2 * padding - g.k;
  if (span_h < 0 || span_w < 0 || span_h % stride != 0 || span_w % stride != 0) {
    throw std::invalid_argument("conv2d output size is not a positive integer for input " + shape_str(xs) +
                                ", kernel " + shape_str(ks) + ", stride " + std::to_string(stride) +
                                ", padding " + std::to_string(padding));
  }
  g.h_out = span_h / stride + 1;
  g.w_out = span_w / stride + 1;

  RowMat cols;
  detail::im2col(input.value().data().data(), g, cols);
  Eigen::Map<const RowMat> weights(kernel.value().data().data(), g.c_out, g.patch());
  const RowMat product = weights * cols;  // c_out x (n * plane)

  const Index plane = g.h_out * g.w_out;
  Vector out(g.n * g.c_out * plane);
  for (Index s = 0; s < g.n; ++s)
    for (Index o = 0; o < g.c_out; ++o)
      out.segment((s * g.c_out + o) * plane, plane) = product.row(o).segment(s * plane, plane).transpose();

  const std::size_t xi = input.id, ki = kernel.id;
  return input.tape->record(
      Tensor<Scalar>({g.n, g.c_out, g.h_out, g.w_out}, std::move(out)), {xi, ki},
      [xi, ki, g, plane](Tape<Scalar>& t, const Vector& grad) {
        RowMat gout(g.c_out, g.n * plane);
        for (Index s = 0; s < g.n; ++s)
          for (Index o = 0; o < g.c_out; ++o)
            gout.row(o).segment(s * plane, plane) = grad.segment((s * g.c_out + o) * plane, plane).transpose();
        if (t.requires_grad(ki)) {
          RowMat cols;
          detail::im2col(t.value(xi).data().data(), g, cols);
          Eigen::Map<RowMat> gk(t.grad(ki).data(), g.c_out, g.patch());
          gk.noalias() += gout * cols.transpose();
        }
        if (t.requires_grad(xi)) {
          Eigen::Map<const RowMat> weights(t.value(ki).data().data(), g.c_out, g.patch());
          const RowMat dcols = weights.transpose() * gout;
          detail::col2im(dcols, g, t.grad(xi).data());
        }
      });
}

/// Nearest-neighbour 2x upsampling.
template <class Scalar>
Var<Scalar> upsample2x(Var<Scalar> x) {
  using Vector = typename Tape<Scalar>::Vector;
  const Shape& s = x.shape();
  detail::require_rank4(s, "upsample2x");
  const Index planes = s[0] * s[1], h = s[2], w = s[3];
  const Vector& in = x.value().data();
  Vector out(planes * 4 * h * w);
  for (Index p = 0; p < planes; ++p)
    for (Index y = 0; y < 2 * h; ++y)
      for (Index xx = 0; xx < 2 * w; ++xx) out[(p * 2 * h + y) * 2 * w + xx] = in[(p * h + y / 2) * w + xx / 2];
  const std::size_t xi = x.id;
  return x.tape->record(Tensor<Scalar>({s[0], s[1], 2 * h, 2 * w}, std::move(out)), {xi},
                        [xi, planes, h, w](Tape<Scalar>& t, const Vector& g) {
                          Vector& gx = t.grad(xi);
                          for (Index p = 0; p < planes; ++p)
                            for (Index y = 0; y < 2 * h; ++y)
                              for (Index xx = 0; xx < 2 * w; ++xx)
                                gx[(p * h + y / 2) * w + xx / 2] += g[(p * 2 * h + y) * 2 * w + xx];
                        });
}

/// 2x2 average pooling with stride 2; H and W must be even.
template <class Scalar>
Var<Scalar> avg_pool2x(Var<Scalar> x) {
  using Vector = typename Tape<Scalar>::Vector;
  const Shape& s = x.shape();
  detail::require_rank4(s, "avg_pool2x");
  if (s[2] % 2 || s[3] % 2) throw std::invalid_argument("avg_pool2x needs even spatial dims, got " + shape_str(s));
  const Index planes = s[0] * s[1], h = s[2] / 2, w = s[3] / 2;
  const Vector& in = x.value().data();
  Vector out = Vector::Zero(planes * h * w);
  for (Index p = 0; p < planes; ++p)
    for (Index y = 0; y < 2 * h; ++y)
      for (Index xx = 0; xx < 2 * w; ++xx) out[(p * h + y / 2) * w + xx / 2] += in[(p * 2 * h + y) * 2 * w + xx];
  out *= Scalar(0.25);
  const std::size_t xi = x.id;
  return x.tape->record(Tensor<Scalar>({s[0], s[1], h, w}, std::move(out)), {xi},
                        [xi, planes, h, w](Tape<Scalar>& t, const Vector& g) {
                          Vector& gx = t.grad(xi);
                          for (Index p = 0; p < planes; ++p)
                            for (Index y = 0; y < 2 * h; ++y)
                              for (Index xx = 0; xx < 2 * w; ++xx)
                                gx[(p * 2 * h + y) * 2 * w + xx] += Scalar(0.25) * g[(p * h + y / 2) * w + xx / 2];
                        });
}

/// Concatenates two N x C x H x W tensors along the channel axis.
template <class Scalar>
Var<Scalar> concat_channels(Var<Scalar> a, Var<Scalar> b) {
  using Vector = typename Tape<Scalar>::Vector;
  detail::require_same_tape(a, b);
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  detail::require_rank4(as, "concat_channels");
  detail::require_rank4(bs, "concat_channels");
  if (as[0] != bs[0] || as[2] != bs[2] || as[3] != bs[3]) {
    throw std::invalid_argument("concat_channels shape mismatch: " + shape_str(as) + " vs " + shape_str(bs));
  }
  const Index n = as[0], ca = as[1] * as[2] * as[3], cb = bs[1] * bs[2] * bs[3];
  Vector out(n * (ca + cb));
  for (Index s = 0; s < n; ++s) {
    out.segment(s * (ca + cb), ca) = a.value().data().segment(s * ca, ca);
    out.segment(s * (ca + cb) + ca, cb) = b.value().data().segment(s * cb, cb);
  }
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(Tensor<Scalar>({n, as[1] + bs[1], as[2], as[3]}, std::move(out)), {ai, bi},
                        [ai, bi, n, ca, cb](Tape<Scalar>& t, const Vector& g) {
                          for (Index s = 0; s < n; ++s) {
                            if (t.requires_grad(ai)) t.grad(ai).segment(s * ca, ca) += g.segment(s * (ca + cb), ca);
                            if (t.requires_grad(bi)) t.grad(bi).segment(s * cb, cb) += g.segment(s * (ca + cb) + ca, cb);
                          }
                        });
}

// ---------------------------------------------------------------------------
// Reductions to a one-element tensor

enum class ReduceKind { mean, sum, l1_distance, squared_distance };

/// mean/sum reduce `a`; the distance kinds return the mean of |a-b| or
/// (a-b)^2 over all elements.
template <class Scalar>
Var<Scalar> reduce(ReduceKind kind, Var<Scalar> a, const Var<Scalar>* b = nullptr) {
  using Vector = typename Tape<Scalar>::Vector;
  const bool distance = kind == ReduceKind::l1_distance || kind == ReduceKind::squared_distance;
  if (distance) {
    if (!b) throw std::invalid_argument("distance reduction needs two operands");
    detail::require_same_tape(a, *b);
    if (a.shape() != b->shape()) {
      throw std::invalid_argument("reduction shape mismatch: " + shape_str(a.shape()) + " vs " +
                                  shape_str(b->shape()));
    }
  }
  const Index n = a.value().size();
  const Scalar inv_n = Scalar(1) / Scalar(n);
  Scalar result = 0;
  Vector diff;
  switch (kind) {
    case ReduceKind::mean: result = a.value().data().sum() * inv_n; break;
    case ReduceKind::sum: result = a.value().data().sum(); break;
    case ReduceKind::l1_distance:
      diff = a.value().data() - b->value().data();
      result = diff.cwiseAbs().sum() * inv_n;
      break;
    case ReduceKind::squared_distance:
      diff = a.value().data() - b->value().data();
      result = diff.squaredNorm() * inv_n;
      break;
  }
  const std::size_t ai = a.id;
  const std::size_t bi = distance ? b->id : a.id;
  std::vector<std::size_t> inputs{ai};
  if (distance) inputs.push_back(bi);
  return a.tape->record(
      Tensor<Scalar>::scalar(result), std::move(inputs),
      [kind, ai, bi, n, inv_n, diff = std::move(diff)](Tape<Scalar>& t, const Vector& g) {
        const Scalar go = g[0];
        Vector da;
        switch (kind) {
          case ReduceKind::mean: da = Vector::Constant(n, go * inv_n); break;
          case ReduceKind::sum: da = Vector::Constant(n, go); break;
          case ReduceKind::l1_distance:
            da = diff.unaryExpr([](Scalar d) { return d > 0 ? Scalar(1) : (d < 0 ? Scalar(-1) : Scalar(0)); }) *
                 (go * inv_n);
            break;
          case ReduceKind::squared_distance: da = diff * (Scalar(2) * go * inv_n); break;
        }
        detail::accumulate(t, ai, da);
        if (bi != ai && t.requires_grad(bi)) t.grad(bi) -= da;
      });
}

template <class Scalar> Var<Scalar> mean(Var<Scalar> a) { return reduce(ReduceKind::mean, a); }
template <class Scalar> Var<Scalar> sum(Var<Scalar> a) { return reduce(ReduceKind::sum, a); }
template <class Scalar> Var<Scalar> l1_distance(Var<Scalar> a, Var<Scalar> b) { return reduce(ReduceKind::l1_distance, a, &b); }
template <class Scalar> Var<Scalar> squared_distance(Var<Scalar> a, Var<Scalar> b) { return reduce(ReduceKind::squared_distance, a, &b); }

/// Mean squared distance of every element of `a` to a constant target.
template <class Scalar>
Var<Scalar> squared_distance_to(Var<Scalar> a, Scalar target) {
  return squared_distance(a, a.tape->constant(Tensor<Scalar>::constant(a.shape(), target)));
}

}  // namespace metapix

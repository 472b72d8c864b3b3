#include "litsearch/errors.hpp"
#include "litsearch/tensor.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace litsearch {

using detail::accumulate;
using detail::make_result;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

namespace {

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  std::ostringstream os;
  os << op << ": shape mismatch " << to_string(a) << " vs " << to_string(b);
  throw ShapeError(os.str());
}

// Result shape for a binary elementwise op with scalar broadcasting.
Shape broadcast_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return a.shape();
  if (a.numel() == 1) return b.shape();
  if (b.numel() == 1) return a.shape();
  shape_mismatch(op, a.shape(), b.shape());
}

Eigen::ArrayXd expand(const Tensor& t, Index n) {
  if (t.numel() == n) return t.value();
  return Eigen::ArrayXd::Constant(n, t.value()[0]);
}

// Gradient for an input that may have been broadcast from a single element.
Eigen::ArrayXd reduce_to(const Eigen::ArrayXd& g, const ad::Node& input) {
  if (input.value.size() == g.size()) return g;
  return Eigen::ArrayXd::Constant(1, g.sum());
}

template <class Fwd, class Deriv>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, Deriv deriv) {
  Eigen::ArrayXd y = fwd(x.value());
  return make_result(op, x.shape(), y, {x}, [deriv](ad::Node& self) {
    ad::Node& in = *self.inputs[0];
    accumulate(in, self.grad * deriv(in.value, self.value));
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  Shape shape = broadcast_shape("add", a, b);
  const Index n = numel(shape);
  return make_result("add", shape, expand(a, n) + expand(b, n), {a, b}, [](ad::Node& self) {
    accumulate(*self.inputs[0], reduce_to(self.grad, *self.inputs[0]));
    accumulate(*self.inputs[1], reduce_to(self.grad, *self.inputs[1]));
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Shape shape = broadcast_shape("sub", a, b);
  const Index n = numel(shape);
  return make_result("sub", shape, expand(a, n) - expand(b, n), {a, b}, [](ad::Node& self) {
    accumulate(*self.inputs[0], reduce_to(self.grad, *self.inputs[0]));
    accumulate(*self.inputs[1], reduce_to(-self.grad, *self.inputs[1]));
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Shape shape = broadcast_shape("mul", a, b);
  const Index n = numel(shape);
  return make_result("mul", shape, expand(a, n) * expand(b, n), {a, b}, [n](ad::Node& self) {
    ad::Node& x = *self.inputs[0];
    ad::Node& y = *self.inputs[1];
    auto ex = [n](const ad::Node& t) -> Eigen::ArrayXd {
      return t.value.size() == n ? t.value : Eigen::ArrayXd::Constant(n, t.value[0]);
    };
    if (x.requires_grad) accumulate(x, reduce_to(self.grad * ex(y), x));
    if (y.requires_grad) accumulate(y, reduce_to(self.grad * ex(x), y));
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  Shape shape = broadcast_shape("div", a, b);
  const Index n = numel(shape);
  return make_result("div", shape, expand(a, n) / expand(b, n), {a, b}, [n](ad::Node& self) {
    ad::Node& x = *self.inputs[0];
    ad::Node& y = *self.inputs[1];
    Eigen::ArrayXd yv = y.value.size() == n ? y.value : Eigen::ArrayXd::Constant(n, y.value[0]);
    if (x.requires_grad) accumulate(x, reduce_to(self.grad / yv, x));
    if (y.requires_grad) accumulate(y, reduce_to(-self.grad * self.value / yv, y));
  });
}

Tensor operator-(const Tensor& a) {
  return unary("neg", a, [](const Eigen::ArrayXd& x) { return Eigen::ArrayXd(-x); },
               [](const Eigen::ArrayXd& x, const Eigen::ArrayXd&) { return Eigen::ArrayXd::Constant(x.size(), -1.0); });
}

Tensor leaky_relu(const Tensor& x, double alpha) {
  return unary(
      "leaky_relu", x,
      [alpha](const Eigen::ArrayXd& v) { return Eigen::ArrayXd((v > 0.0).select(v, alpha * v)); },
      [alpha](const Eigen::ArrayXd& v, const Eigen::ArrayXd&) {
        return Eigen::ArrayXd((v > 0.0).select(Eigen::ArrayXd::Ones(v.size()), alpha));
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x, [](const Eigen::ArrayXd& v) { return Eigen::ArrayXd(1.0 / (1.0 + (-v).exp())); },
      [](const Eigen::ArrayXd&, const Eigen::ArrayXd& y) { return Eigen::ArrayXd(y * (1.0 - y)); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](const Eigen::ArrayXd& v) { return Eigen::ArrayXd(v.tanh()); },
      [](const Eigen::ArrayXd&, const Eigen::ArrayXd& y) { return Eigen::ArrayXd(1.0 - y.square()); });
}

Tensor sin(const Tensor& x) {
  return unary(
      "sin", x, [](const Eigen::ArrayXd& v) { return Eigen::ArrayXd(v.sin()); },
      [](const Eigen::ArrayXd& v, const Eigen::ArrayXd&) { return Eigen::ArrayXd(v.cos()); });
}

Tensor cos(const Tensor& x) {
  return unary(
      "cos", x, [](const Eigen::ArrayXd& v) { return Eigen::ArrayXd(v.cos()); },
      [](const Eigen::ArrayXd& v, const Eigen::ArrayXd&) { return Eigen::ArrayXd(-v.sin()); });
}

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](const Eigen::ArrayXd& v) { return Eigen::ArrayXd(v.exp()); },
      [](const Eigen::ArrayXd&, const Eigen::ArrayXd& y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      "log", x, [](const Eigen::ArrayXd& v) { return Eigen::ArrayXd(v.log()); },
      [](const Eigen::ArrayXd& v, const Eigen::ArrayXd&) { return Eigen::ArrayXd(v.inverse()); });
}

Tensor sqrt(const Tensor& x) {
  return unary(
      "sqrt", x, [](const Eigen::ArrayXd& v) { return Eigen::ArrayXd(v.sqrt()); },
      [](const Eigen::ArrayXd&, const Eigen::ArrayXd& y) { return Eigen::ArrayXd(0.5 / y); });
}

Tensor square(const Tensor& x) {
  return unary(
      "square", x, [](const Eigen::ArrayXd& v) { return Eigen::ArrayXd(v.square()); },
      [](const Eigen::ArrayXd& v, const Eigen::ArrayXd&) { return Eigen::ArrayXd(2.0 * v); });
}

Tensor pow(const Tensor& x, double p) {
  return unary(
      "pow", x, [p](const Eigen::ArrayXd& v) { return Eigen::ArrayXd(v.pow(p)); },
      [p](const Eigen::ArrayXd& v, const Eigen::ArrayXd&) {
        if (p == 1.0) return Eigen::ArrayXd(Eigen::ArrayXd::Ones(v.size()));
        return Eigen::ArrayXd(p * v.pow(p - 1.0));
      });
}

Tensor clamp_min(const Tensor& x, double lo) {
  return unary(
      "clamp_min", x, [lo](const Eigen::ArrayXd& v) { return Eigen::ArrayXd(v.max(lo)); },
      [lo](const Eigen::ArrayXd& v, const Eigen::ArrayXd&) {
        return Eigen::ArrayXd((v >= lo).select(Eigen::ArrayXd::Ones(v.size()), 0.0));
      });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      "clamp", x, [lo, hi](const Eigen::ArrayXd& v) { return Eigen::ArrayXd(v.max(lo).min(hi)); },
      [lo, hi](const Eigen::ArrayXd& v, const Eigen::ArrayXd&) {
        return Eigen::ArrayXd((v >= lo && v <= hi).select(Eigen::ArrayXd::Ones(v.size()), 0.0));
      });
}

Tensor huber(const Tensor& x, double delta) {
  if (!(delta > 0.0)) throw Error("huber: delta must be positive");
  return unary(
      "huber", x,
      [delta](const Eigen::ArrayXd& v) {
        Eigen::ArrayXd a = v.abs();
        return Eigen::ArrayXd((a <= delta).select(0.5 * v.square(), delta * (a - 0.5 * delta)));
      },
      [delta](const Eigen::ArrayXd& v, const Eigen::ArrayXd&) {
        return Eigen::ArrayXd(v.max(-delta).min(delta));
      });
}

Tensor sum(const Tensor& x) {
  return make_result("sum", {}, Eigen::ArrayXd::Constant(1, x.value().sum()), {x}, [](ad::Node& self) {
    ad::Node& in = *self.inputs[0];
    accumulate(in, Eigen::ArrayXd::Constant(in.value.size(), self.grad[0]));
  });
}

Tensor mean(const Tensor& x) {
  const Index n = x.numel();
  if (n == 0) throw ShapeError("mean of empty tensor");
  return make_result("mean", {}, Eigen::ArrayXd::Constant(1, x.value().sum() / double(n)), {x},
                     [n](ad::Node& self) {
                       accumulate(*self.inputs[0], Eigen::ArrayXd::Constant(n, self.grad[0] / double(n)));
                     });
}

Tensor l2_norm(const Tensor& x) {
  const double norm = std::sqrt(x.value().square().sum());
  return make_result("l2_norm", {}, Eigen::ArrayXd::Constant(1, norm), {x}, [norm](ad::Node& self) {
    ad::Node& in = *self.inputs[0];
    if (norm == 0.0) {
      accumulate(in, Eigen::ArrayXd::Zero(in.value.size()));
    } else {
      accumulate(in, in.value * (self.grad[0] / norm));
    }
  });
}

Tensor quantile(const Tensor& x, double q) {
  const Index n = x.numel();
  if (n == 0) throw ShapeError("quantile of empty tensor");
  if (!(q >= 0.0 && q <= 1.0)) throw Error("quantile: q must lie in [0, 1]");
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  const Eigen::ArrayXd& v = x.value();
  std::stable_sort(order.begin(), order.end(), [&v](Index a, Index b) { return v[a] < v[b]; });
  const double pos = q * double(n - 1);
  const auto lo_rank = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi_rank = std::min(lo_rank + 1, static_cast<std::size_t>(n - 1));
  const double frac = pos - double(lo_rank);
  const Index lo = order[lo_rank];
  const Index hi = order[hi_rank];
  const double value = (1.0 - frac) * v[lo] + frac * v[hi];
  return make_result("quantile", {}, Eigen::ArrayXd::Constant(1, value), {x}, [lo, hi, frac](ad::Node& self) {
    ad::Node& in = *self.inputs[0];
    Eigen::ArrayXd g = Eigen::ArrayXd::Zero(in.value.size());
    g[lo] += (1.0 - frac) * self.grad[0];
    g[hi] += frac * self.grad[0];
    accumulate(in, g);
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) shape_mismatch("reshape", x.shape(), shape);
  return make_result("reshape", std::move(shape), x.value(), {x},
                     [](ad::Node& self) { accumulate(*self.inputs[0], self.grad); });
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat axis out of range for shape " + to_string(first));
  Shape out = first;
  out[axis] = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) shape_mismatch("concat", first, s);
    out[axis] += s[axis];
  }
  Index outer = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  Index inner = 1;
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

  const Index row = out[axis] * inner;
  Eigen::ArrayXd value(numel(out));
  std::vector<Index> offsets;
  Index offset = 0;
  for (const Tensor& p : parts) {
    const Index block = p.dim(axis) * inner;
    offsets.push_back(offset);
    for (Index o = 0; o < outer; ++o) value.segment(o * row + offset, block) = p.value().segment(o * block, block);
    offset += block;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_result("concat", out, std::move(value), std::move(inputs),
                     [offsets, outer, row](ad::Node& self) {
                       for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                         ad::Node& in = *self.inputs[k];
                         if (!in.requires_grad) continue;
                         const Index block = in.value.size() / outer;
                         Eigen::ArrayXd g(in.value.size());
                         for (Index o = 0; o < outer; ++o)
                           g.segment(o * block, block) = self.grad.segment(o * row + offsets[k], block);
                         accumulate(in, g);
                       }
                     });
}

Tensor slice(const Tensor& x, Index start, Index length) {
  if (x.rank() == 0) throw ShapeError("slice of a scalar");
  if (start < 0 || length < 0 || start + length > x.dim(0)) {
    std::ostringstream os;
    os << "slice [" << start << ", " << start + length << ") out of range for shape " << to_string(x.shape());
    throw IndexError(os.str());
  }
  Shape out = x.shape();
  out[0] = length;
  const Index inner = x.numel() / std::max<Index>(x.dim(0), 1);
  return make_result("slice", out, x.value().segment(start * inner, length * inner), {x},
                     [start, inner](ad::Node& self) {
                       ad::Node& in = *self.inputs[0];
                       Eigen::ArrayXd g = Eigen::ArrayXd::Zero(in.value.size());
                       g.segment(start * inner, self.grad.size()) = self.grad;
                       accumulate(in, g);
                     });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("transpose needs a matrix, got " + to_string(x.shape()));
  const Index r = x.dim(0), c = x.dim(1);
  RowMatrix t = ConstRowMap(x.value().data(), r, c).transpose();
  return make_result("transpose", {c, r}, Eigen::Map<Eigen::ArrayXd>(t.data(), t.size()), {x},
                     [r, c](ad::Node& self) {
                       RowMatrix g = ConstRowMap(self.grad.data(), c, r).transpose();
                       accumulate(*self.inputs[0], Eigen::Map<Eigen::ArrayXd>(g.data(), g.size()));
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_mismatch("matmul", a.shape(), b.shape());
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  RowMatrix c = ConstRowMap(a.value().data(), m, k) * ConstRowMap(b.value().data(), k, n);
  return make_result("matmul", {m, n}, Eigen::Map<Eigen::ArrayXd>(c.data(), c.size()), {a, b},
                     [m, k, n](ad::Node& self) {
                       ad::Node& x = *self.inputs[0];
                       ad::Node& y = *self.inputs[1];
                       ConstRowMap g(self.grad.data(), m, n);
                       if (x.requires_grad) {
                         RowMatrix gx = g * ConstRowMap(y.value.data(), k, n).transpose();
                         accumulate(x, Eigen::Map<Eigen::ArrayXd>(gx.data(), gx.size()));
                       }
                       if (y.requires_grad) {
                         RowMatrix gy = ConstRowMap(x.value.data(), m, k).transpose() * g;
                         accumulate(y, Eigen::Map<Eigen::ArrayXd>(gy.data(), gy.size()));
                       }
                     });
}

namespace {

Index source_index(Index i, Index size, Padding padding) {
  if (i >= 0 && i < size) return i;
  if (padding == Padding::Zero) return -1;
  return std::clamp<Index>(i, 0, size - 1);
}

}  // namespace

Tensor conv2d_fixed(const Tensor& input, std::shared_ptr<const ConvKernel> kernel, Conv2dOptions options) {
  if (input.rank() != 3) throw ShapeError("conv2d_fixed expects [C, H, W], got " + to_string(input.shape()));
  if (!kernel || kernel->weights.size() != kernel->out_channels * kernel->in_channels * kernel->height * kernel->width)
    throw ShapeError("conv2d_fixed: malformed kernel");
  if (options.stride < 1) throw Error("conv2d_fixed: stride must be >= 1");
  const Index C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const Index kh = kernel->height, kw = kernel->width, s = options.stride;
  const Index Ho = (H + s - 1) / s, Wo = (W + s - 1) / s;
  const Index py = (kh - 1) / 2, px = (kw - 1) / 2;
  const Padding pad = options.padding;

  if (options.depthwise) {
    if (kernel->in_channels != 1 || (kernel->out_channels != 1 && kernel->out_channels != C))
      shape_mismatch("conv2d_fixed(depthwise)", input.shape(),
                     {kernel->out_channels, kernel->in_channels, kh, kw});
    const bool shared = kernel->out_channels == 1;
    // Source offsets per output pixel and tap; -1 marks zero padding.
    std::vector<Index> taps(static_cast<std::size_t>(Ho * Wo * kh * kw));
    for (Index oy = 0; oy < Ho; ++oy)
      for (Index ox = 0; ox < Wo; ++ox)
        for (Index ky = 0; ky < kh; ++ky)
          for (Index kx = 0; kx < kw; ++kx) {
            const Index iy = source_index(oy * s + ky - py, H, pad);
            const Index ix = source_index(ox * s + kx - px, W, pad);
            taps[static_cast<std::size_t>(((oy * Wo + ox) * kh + ky) * kw + kx)] = (iy < 0 || ix < 0) ? -1 : iy * W + ix;
          }
    const Eigen::ArrayXd& x = input.value();
    Eigen::ArrayXd out = Eigen::ArrayXd::Zero(C * Ho * Wo);
    const Index K = kh * kw;
    for (Index c = 0; c < C; ++c) {
      const double* w = kernel->weights.data() + (shared ? 0 : c * K);
      const double* xc = x.data() + c * H * W;
      double* oc = out.data() + c * Ho * Wo;
      for (Index p = 0; p < Ho * Wo; ++p) {
        const Index* t = taps.data() + p * K;
        double acc = 0.0;
        for (Index k = 0; k < K; ++k)
          if (t[k] >= 0) acc += w[k] * xc[t[k]];
        oc[p] = acc;
      }
    }
    return make_result("conv2d_fixed", {C, Ho, Wo}, std::move(out), {input},
                       [kernel, taps = std::move(taps), C, H, W, Ho, Wo, K, shared](ad::Node& self) {
                         Eigen::ArrayXd g = Eigen::ArrayXd::Zero(C * H * W);
                         for (Index c = 0; c < C; ++c) {
                           const double* w = kernel->weights.data() + (shared ? 0 : c * K);
                           const double* gc = self.grad.data() + c * Ho * Wo;
                           double* gi = g.data() + c * H * W;
                           for (Index p = 0; p < Ho * Wo; ++p) {
                             const Index* t = taps.data() + p * K;
                             for (Index k = 0; k < K; ++k)
                               if (t[k] >= 0) gi[t[k]] += w[k] * gc[p];
                           }
                         }
                         accumulate(*self.inputs[0], g);
                       });
  }

  if (kernel->in_channels != C)
    shape_mismatch("conv2d_fixed", input.shape(), {kernel->out_channels, kernel->in_channels, kh, kw});
  // im2col: rows index (c, ky, kx), columns index output pixels.
  const Index R = C * kh * kw, P = Ho * Wo;
  std::vector<Index> cols(static_cast<std::size_t>(R * P));
  for (Index c = 0; c < C; ++c)
    for (Index ky = 0; ky < kh; ++ky)
      for (Index kx = 0; kx < kw; ++kx) {
        const Index r = (c * kh + ky) * kw + kx;
        for (Index oy = 0; oy < Ho; ++oy)
          for (Index ox = 0; ox < Wo; ++ox) {
            const Index iy = source_index(oy * s + ky - py, H, pad);
            const Index ix = source_index(ox * s + kx - px, W, pad);
            cols[static_cast<std::size_t>(r * P + oy * Wo + ox)] = (iy < 0 || ix < 0) ? -1 : (c * H + iy) * W + ix;
          }
      }
  RowMatrix col(R, P);
  const Eigen::ArrayXd& x = input.value();
  for (Index i = 0; i < R * P; ++i) {
    const Index src = cols[static_cast<std::size_t>(i)];
    col.data()[i] = src >= 0 ? x[src] : 0.0;
  }
  const Index Co = kernel->out_channels;
  ConstRowMap kmat(kernel->weights.data(), Co, R);
  RowMatrix out = kmat * col;
  return make_result("conv2d_fixed", {Co, Ho, Wo}, Eigen::Map<Eigen::ArrayXd>(out.data(), out.size()), {input},
                     [kernel, cols = std::move(cols), Co, R, P, n = C * H * W](ad::Node& self) {
                       ConstRowMap kmat(kernel->weights.data(), Co, R);
                       RowMatrix gcol = kmat.transpose() * ConstRowMap(self.grad.data(), Co, P);
                       Eigen::ArrayXd g = Eigen::ArrayXd::Zero(n);
                       for (Index i = 0; i < R * P; ++i) {
                         const Index src = cols[static_cast<std::size_t>(i)];
                         if (src >= 0) g[src] += gcol.data()[i];
                       }
                       accumulate(*self.inputs[0], g);
                     });
}

Tensor downsample2x(const Tensor& x) {
  if (x.rank() != 3 || x.dim(1) % 2 != 0 || x.dim(2) % 2 != 0)
    throw ShapeError("downsample2x expects [C, H, W] with even H and W, got " + to_string(x.shape()));
  const Index C = x.dim(0), H = x.dim(1), W = x.dim(2), Ho = H / 2, Wo = W / 2;
  Eigen::ArrayXd out(C * Ho * Wo);
  const Eigen::ArrayXd& v = x.value();
  for (Index c = 0; c < C; ++c)
    for (Index oy = 0; oy < Ho; ++oy)
      for (Index ox = 0; ox < Wo; ++ox) {
        const Index base = (c * H + 2 * oy) * W + 2 * ox;
        out[(c * Ho + oy) * Wo + ox] = 0.25 * (v[base] + v[base + 1] + v[base + W] + v[base + W + 1]);
      }
  return make_result("downsample2x", {C, Ho, Wo}, std::move(out), {x}, [C, H, W, Ho, Wo](ad::Node& self) {
    Eigen::ArrayXd g(C * H * W);
    for (Index c = 0; c < C; ++c)
      for (Index iy = 0; iy < H; ++iy)
        for (Index ix = 0; ix < W; ++ix)
          g[(c * H + iy) * W + ix] = 0.25 * self.grad[(c * Ho + iy / 2) * Wo + ix / 2];
    accumulate(*self.inputs[0], g);
  });
}

Tensor log_softmax(const Tensor& x) {
  const Eigen::ArrayXd& v = x.value();
  const double m = v.maxCoeff();
  const double lse = m + std::log((v - m).exp().sum());
  return make_result("log_softmax", x.shape(), v - lse, {x}, [](ad::Node& self) {
    Eigen::ArrayXd p = self.value.exp();
    accumulate(*self.inputs[0], self.grad - p * self.grad.sum());
  });
}

Tensor logdet_psd(const Tensor& n) {
  if (n.rank() != 2 || n.dim(0) != n.dim(1)) throw ShapeError("logdet_psd needs a square matrix, got " + to_string(n.shape()));
  const Index k = n.dim(0);
  Eigen::MatrixXd m = n.matrix();
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale)
    throw Error("logdet_psd: matrix is not symmetric within 1e-9");
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) throw DegenerateGram("logdet_psd: Cholesky failed, matrix not positive definite");
  const Eigen::VectorXd diag = llt.matrixL().toDenseMatrix().diagonal();
  if ((diag.array() <= 0.0).any()) throw DegenerateGram("logdet_psd: zero pivot in Cholesky factor");
  const double value = 2.0 * diag.array().log().sum();
  Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(k, k));
  inv = 0.5 * (inv + inv.transpose()).eval();
  return make_result("logdet_psd", {}, Eigen::ArrayXd::Constant(1, value), {n},
                     [inv = std::move(inv)](ad::Node& self) {
                       RowMatrix g = inv * self.grad[0];
                       accumulate(*self.inputs[0], Eigen::Map<Eigen::ArrayXd>(g.data(), g.size()));
                     });
}

}  // namespace litsearch

#include "advmark/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

namespace advmark {

template <class S>
S Var<S>::item() const {
  if (value().numel() != 1) throw DimensionError("item() on tensor of shape " + shape().str());
  return value().array()(0);
}

template <class S>
Var<S> make_op(Tensor<S> value, std::vector<Var<S>> inputs, std::function<void(Node<S>&)> bw) {
  Var<S> out(std::move(value), false);
  const bool req = std::any_of(inputs.begin(), inputs.end(),
                               [](const Var<S>& v) { return v.requires_grad(); });
  if (req) {
    auto& node = *out.node();
    node.requires_grad = true;
    node.parents.reserve(inputs.size());
    for (const auto& v : inputs) node.parents.push_back(v.node());
    node.backward = std::move(bw);
  }
  return out;
}

template <class S>
void backward(const Var<S>& root) {
  if (!root.requires_grad()) return;
  if (root.value().numel() != 1) throw DimensionError("backward() needs a scalar root");

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> seen;
  std::vector<std::pair<Node<S>*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<S>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->accumulate(Tensor<S>::Storage::Ones(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>& n = **it;
    if (n.backward && !n.grad.empty()) n.backward(n);
  }
}

namespace {

template <class S>
bool wants(const Node<S>& n, std::size_t i) {
  return n.parents[i]->requires_grad;
}

template <class S>
void check_same(const Var<S>& a, const Var<S>& b, const char* op) {
  require_same_shape(a.shape(), b.shape(), op);
}

}  // namespace

template <class S>
Var<S> operator+(const Var<S>& a, const Var<S>& b) {
  check_same(a, b, "add");
  Tensor<S> out(a.shape(), a.value().array() + b.value().array());
  return make_op<S>(std::move(out), {a, b}, [](Node<S>& n) {
    if (wants(n, 0)) n.parents[0]->accumulate(n.grad.array());
    if (wants(n, 1)) n.parents[1]->accumulate(n.grad.array());
  });
}

template <class S>
Var<S> operator-(const Var<S>& a, const Var<S>& b) {
  check_same(a, b, "sub");
  Tensor<S> out(a.shape(), a.value().array() - b.value().array());
  return make_op<S>(std::move(out), {a, b}, [](Node<S>& n) {
    if (wants(n, 0)) n.parents[0]->accumulate(n.grad.array());
    if (wants(n, 1)) n.parents[1]->accumulate(-n.grad.array());
  });
}

template <class S>
Var<S> operator*(const Var<S>& a, const Var<S>& b) {
  check_same(a, b, "mul");
  Tensor<S> out(a.shape(), a.value().array() * b.value().array());
  return make_op<S>(std::move(out), {a, b}, [](Node<S>& n) {
    const auto& av = n.parents[0]->value.array();
    const auto& bv = n.parents[1]->value.array();
    if (wants(n, 0)) n.parents[0]->accumulate(n.grad.array() * bv);
    if (wants(n, 1)) n.parents[1]->accumulate(n.grad.array() * av);
  });
}

template <class S>
Var<S> operator*(const Var<S>& a, S s) {
  Tensor<S> out(a.shape(), a.value().array() * s);
  return make_op<S>(std::move(out), {a}, [s](Node<S>& n) { n.parents[0]->accumulate(n.grad.array() * s); });
}

template <class S>
Var<S> operator+(const Var<S>& a, S s) {
  Tensor<S> out(a.shape(), a.value().array() + s);
  return make_op<S>(std::move(out), {a}, [](Node<S>& n) { n.parents[0]->accumulate(n.grad.array()); });
}

template <class S>
Var<S> operator-(S s, const Var<S>& a) {
  Tensor<S> out(a.shape(), s - a.value().array());
  return make_op<S>(std::move(out), {a}, [](Node<S>& n) { n.parents[0]->accumulate(-n.grad.array()); });
}

template <class S>
Var<S> add_const(const Var<S>& a, const Tensor<S>& c) {
  require_same_shape(a.shape(), c.shape(), "add_const");
  Tensor<S> out(a.shape(), a.value().array() + c.array());
  return make_op<S>(std::move(out), {a}, [](Node<S>& n) { n.parents[0]->accumulate(n.grad.array()); });
}

template <class S>
Var<S> mul_broadcast(const Var<S>& a, const Tensor<S>& factors) {
  const Shape s = a.shape();
  if (factors.n() != 1 || factors.c() != s.c || factors.h() != s.h || factors.w() != s.w) {
    throw DimensionError("mul_broadcast factors " + factors.shape().str() + " vs " + s.str());
  }
  const auto per = static_cast<Eigen::Index>(s.sample_size());
  Tensor<S> out(s);
  for (int i = 0; i < s.n; ++i) {
    out.array().segment(i * per, per) = a.value().array().segment(i * per, per) * factors.array();
  }
  return make_op<S>(std::move(out), {a}, [factors, per, s](Node<S>& n) {
    typename Tensor<S>::Storage g(n.grad.array().size());
    for (int i = 0; i < s.n; ++i) g.segment(i * per, per) = n.grad.array().segment(i * per, per) * factors.array();
    n.parents[0]->accumulate(g);
  });
}

template <class S>
Var<S> leaky_relu(const Var<S>& x, S slope) {
  const auto& v = x.value().array();
  Tensor<S> out(x.shape(), (v > S(0)).select(v, v * slope));
  return make_op<S>(std::move(out), {x}, [slope](Node<S>& n) {
    const auto& in = n.parents[0]->value.array();
    n.parents[0]->accumulate((in > S(0)).select(n.grad.array(), n.grad.array() * slope));
  });
}

template <class S>
Var<S> tanh(const Var<S>& x) {
  Tensor<S> out(x.shape(), x.value().array().tanh());
  return make_op<S>(std::move(out), {x}, [](Node<S>& n) {
    n.parents[0]->accumulate(n.grad.array() * (S(1) - n.value.array().square()));
  });
}

template <class S>
Var<S> sigmoid(const Var<S>& x) {
  Tensor<S> out(x.shape(), S(1) / (S(1) + (-x.value().array()).exp()));
  return make_op<S>(std::move(out), {x}, [](Node<S>& n) {
    const auto& y = n.value.array();
    n.parents[0]->accumulate(n.grad.array() * y * (S(1) - y));
  });
}

template <class S>
Var<S> abs(const Var<S>& x) {
  Tensor<S> out(x.shape(), x.value().array().abs());
  return make_op<S>(std::move(out), {x}, [](Node<S>& n) {
    const auto& in = n.parents[0]->value.array();
    n.parents[0]->accumulate(n.grad.array() * in.sign());
  });
}

template <class S>
Var<S> clamp(const Var<S>& x, S lo, S hi) {
  Tensor<S> out(x.shape(), x.value().array().max(lo).min(hi));
  return make_op<S>(std::move(out), {x}, [lo, hi](Node<S>& n) {
    const auto& in = n.parents[0]->value.array();
    n.parents[0]->accumulate(((in >= lo) && (in <= hi)).select(n.grad.array(), S(0)));
  });
}

template <class S>
Var<S> round_ste(const Var<S>& x) {
  Tensor<S> out(x.shape(), x.value().array().round());
  return make_op<S>(std::move(out), {x}, [](Node<S>& n) { n.parents[0]->accumulate(n.grad.array()); });
}

namespace {

struct ConvGeom {
  int cin, h, w, k, stride, pad, ho, wo;
};

// Output columns [lo, hi) whose input column lies inside the image.
inline void valid_range(const ConvGeom& g, int kj, int& lo, int& hi) {
  const int off = kj - g.pad;
  lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
  const int last = g.w - 1 - off;
  hi = last < 0 ? 0 : std::min(g.wo, last / g.stride + 1);
  if (hi < lo) hi = lo;
}

template <class S>
void im2col(const S* img, const ConvGeom& g, S* cols) {
  const int hw = g.ho * g.wo;
  for (int c = 0; c < g.cin; ++c) {
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        S* row = cols + static_cast<std::size_t>((c * g.k + ki) * g.k + kj) * hw;
        int lo, hi;
        valid_range(g, kj, lo, hi);
        const int off = kj - g.pad;
        for (int oh = 0; oh < g.ho; ++oh) {
          S* dst = row + oh * g.wo;
          const int ih = oh * g.stride - g.pad + ki;
          if (ih < 0 || ih >= g.h) {
            std::fill(dst, dst + g.wo, S(0));
            continue;
          }
          const S* src = img + (static_cast<std::size_t>(c) * g.h + ih) * g.w;
          std::fill(dst, dst + lo, S(0));
          if (g.stride == 1) {
            std::copy(src + lo + off, src + hi + off, dst + lo);
          } else {
            for (int ow = lo; ow < hi; ++ow) dst[ow] = src[ow * g.stride + off];
          }
          std::fill(dst + hi, dst + g.wo, S(0));
        }
      }
    }
  }
}

template <class S>
void col2im(const S* cols, const ConvGeom& g, S* img) {
  const int hw = g.ho * g.wo;
  for (int c = 0; c < g.cin; ++c) {
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        const S* row = cols + static_cast<std::size_t>((c * g.k + ki) * g.k + kj) * hw;
        int lo, hi;
        valid_range(g, kj, lo, hi);
        const int off = kj - g.pad;
        for (int oh = 0; oh < g.ho; ++oh) {
          const int ih = oh * g.stride - g.pad + ki;
          if (ih < 0 || ih >= g.h) continue;
          const S* src = row + oh * g.wo;
          S* dst = img + (static_cast<std::size_t>(c) * g.h + ih) * g.w;
          if (g.stride == 1) {
            for (int ow = lo; ow < hi; ++ow) dst[ow + off] += src[ow];
          } else {
            for (int ow = lo; ow < hi; ++ow) dst[ow * g.stride + off] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace

template <class S>
Var<S> conv2d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, int stride, int pad) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws.c != xs.c || ws.h != ws.w) {
    throw DimensionError("conv2d weight " + ws.str() + " incompatible with input " + xs.str());
  }
  const bool has_bias = static_cast<bool>(bias);
  if (has_bias && bias.value().numel() != static_cast<std::size_t>(ws.n)) {
    throw DimensionError("conv2d bias size mismatch");
  }
  ConvGeom g{xs.c, xs.h, xs.w, ws.h, stride, pad, 0, 0};
  g.ho = (xs.h + 2 * pad - g.k) / stride + 1;
  g.wo = (xs.w + 2 * pad - g.k) / stride + 1;
  if (g.ho <= 0 || g.wo <= 0) throw DimensionError("conv2d output would be empty");
  const int cout = ws.n;
  const int kdim = xs.c * g.k * g.k;
  const int hw = g.ho * g.wo;

  Tensor<S> out(Shape{xs.n, cout, g.ho, g.wo});
  RowMatrix<S> cols(kdim, hw);
  Eigen::Map<const RowMatrix<S>> wmat(weight.value().data(), cout, kdim);
  for (int i = 0; i < xs.n; ++i) {
    im2col(x.value().data() + static_cast<std::size_t>(i) * xs.sample_size(), g, cols.data());
    Eigen::Map<RowMatrix<S>> o(out.data() + static_cast<std::size_t>(i) * cout * hw, cout, hw);
    o.noalias() = wmat * cols;
    if (has_bias) {
      Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> b(bias.value().data(), cout);
      o.colwise() += b;
    }
  }
  std::vector<Var<S>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_op<S>(std::move(out), std::move(inputs), [g, cout, kdim, hw, has_bias](Node<S>& n) {
    const Node<S>& xn = *n.parents[0];
    const Node<S>& wn = *n.parents[1];
    const bool want_x = xn.requires_grad;
    const bool want_w = wn.requires_grad;
    const bool want_b = has_bias && n.parents[2]->requires_grad;
    const int batch = xn.value.n();
    const std::size_t xper = xn.value.shape().sample_size();
    Eigen::Map<const RowMatrix<S>> wmat(wn.value.data(), cout, kdim);
    RowMatrix<S> cols(kdim, hw);
    RowMatrix<S> dw = RowMatrix<S>::Zero(cout, kdim);
    Eigen::Matrix<S, Eigen::Dynamic, 1> db = Eigen::Matrix<S, Eigen::Dynamic, 1>::Zero(cout);
    Tensor<S> dx;
    if (want_x) dx = Tensor<S>(xn.value.shape());
    for (int i = 0; i < batch; ++i) {
      Eigen::Map<const RowMatrix<S>> dout(n.grad.data() + static_cast<std::size_t>(i) * cout * hw, cout, hw);
      if (want_w) {
        im2col(xn.value.data() + i * xper, g, cols.data());
        dw.noalias() += dout * cols.transpose();
      }
      if (want_b) db += dout.rowwise().sum();
      if (want_x) {
        cols.noalias() = wmat.transpose() * dout;
        col2im(cols.data(), g, dx.data() + i * xper);
      }
    }
    if (want_x) n.parents[0]->accumulate(dx.array());
    if (want_w) n.parents[1]->accumulate(Eigen::Map<const typename Tensor<S>::Storage>(dw.data(), dw.size()));
    if (want_b) n.parents[2]->accumulate(db.array());
  });
}

template <class S>
Var<S> linear(const Var<S>& x, const Var<S>& weight, const Var<S>& bias) {
  const int batch = x.shape().n;
  const int f = static_cast<int>(x.shape().sample_size());
  const int outd = weight.shape().n;
  if (static_cast<int>(weight.shape().sample_size()) != f) {
    throw DimensionError("linear weight " + weight.shape().str() + " vs input " + x.shape().str());
  }
  Tensor<S> out(Shape{batch, outd, 1, 1});
  Eigen::Map<const RowMatrix<S>> xm(x.value().data(), batch, f);
  Eigen::Map<const RowMatrix<S>> wm(weight.value().data(), outd, f);
  Eigen::Map<RowMatrix<S>> om(out.data(), batch, outd);
  // Row by row so a sample's output does not depend on the rest of the batch.
  for (int i = 0; i < batch; ++i) om.row(i).noalias() = xm.row(i) * wm.transpose();
  const bool has_bias = static_cast<bool>(bias);
  if (has_bias) {
    Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>> b(bias.value().data(), outd);
    om.rowwise() += b;
  }
  std::vector<Var<S>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_op<S>(std::move(out), std::move(inputs), [batch, f, outd, has_bias](Node<S>& n) {
    Eigen::Map<const RowMatrix<S>> dy(n.grad.data(), batch, outd);
    if (wants(n, 0)) {
      Eigen::Map<const RowMatrix<S>> wm(n.parents[1]->value.data(), outd, f);
      RowMatrix<S> dx = dy * wm;
      n.parents[0]->accumulate(Eigen::Map<const typename Tensor<S>::Storage>(dx.data(), dx.size()));
    }
    if (wants(n, 1)) {
      Eigen::Map<const RowMatrix<S>> xm(n.parents[0]->value.data(), batch, f);
      RowMatrix<S> dw = dy.transpose() * xm;
      n.parents[1]->accumulate(Eigen::Map<const typename Tensor<S>::Storage>(dw.data(), dw.size()));
    }
    if (has_bias && wants(n, 2)) {
      Eigen::Matrix<S, 1, Eigen::Dynamic> db = dy.colwise().sum();
      n.parents[2]->accumulate(db.transpose().array());
    }
  });
}

template <class S>
Var<S> reshape(const Var<S>& x, Shape s) {
  Tensor<S> out = x.value().reshaped(s);
  return make_op<S>(std::move(out), {x}, [](Node<S>& n) { n.parents[0]->accumulate(n.grad.array()); });
}

template <class S>
Var<S> upsample_nearest(const Var<S>& x, int factor) {
  const Shape s = x.shape();
  Tensor<S> out(Shape{s.n, s.c, s.h * factor, s.w * factor});
  for (int i = 0; i < s.n; ++i)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h * factor; ++y)
        for (int xx = 0; xx < s.w * factor; ++xx) out(i, c, y, xx) = x.value()(i, c, y / factor, xx / factor);
  return make_op<S>(std::move(out), {x}, [s, factor](Node<S>& n) {
    Tensor<S> g(s);
    for (int i = 0; i < s.n; ++i)
      for (int c = 0; c < s.c; ++c)
        for (int y = 0; y < s.h * factor; ++y)
          for (int xx = 0; xx < s.w * factor; ++xx) g(i, c, y / factor, xx / factor) += n.grad(i, c, y, xx);
    n.parents[0]->accumulate(g.array());
  });
}

template <class S>
Var<S> concat_channels(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape first = parts.front().shape();
  int channels = 0;
  for (const auto& p : parts) {
    const Shape s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) throw DimensionError("concat_channels shape mismatch");
    channels += s.c;
  }
  const Shape os{first.n, channels, first.h, first.w};
  const auto plane = static_cast<Eigen::Index>(first.h) * first.w;
  Tensor<S> out(os);
  for (int i = 0; i < first.n; ++i) {
    Eigen::Index dst = static_cast<Eigen::Index>(i) * channels * plane;
    for (const auto& p : parts) {
      const auto len = p.shape().c * plane;
      out.array().segment(dst, len) = p.value().array().segment(i * len, len);
      dst += len;
    }
  }
  return make_op<S>(std::move(out), parts, [channels, plane, first](Node<S>& n) {
    Eigen::Index offset = 0;
    for (auto& p : n.parents) {
      const auto len = p->value.c() * plane;
      if (p->requires_grad) {
        typename Tensor<S>::Storage g(p->value.numel());
        for (int i = 0; i < first.n; ++i) {
          g.segment(i * len, len) = n.grad.array().segment(static_cast<Eigen::Index>(i) * channels * plane + offset, len);
        }
        p->accumulate(g);
      }
      offset += len;
    }
  });
}

template <class S>
Var<S> slice_samples(const Var<S>& x, int first, int count) {
  const Shape s = x.shape();
  if (first < 0 || count < 1 || first + count > s.n) throw DimensionError("slice_samples out of range");
  Tensor<S> out = x.value().samples(first, count);
  const auto per = static_cast<Eigen::Index>(s.sample_size());
  return make_op<S>(std::move(out), {x}, [s, first, count, per](Node<S>& n) {
    typename Tensor<S>::Storage g = Tensor<S>::Storage::Zero(s.numel());
    g.segment(first * per, count * per) = n.grad.array();
    n.parents[0]->accumulate(g);
  });
}

template <class S>
Var<S> concat_samples(const std::vector<Var<S>>& parts) {
  std::vector<Tensor<S>> values;
  values.reserve(parts.size());
  for (const auto& p : parts) values.push_back(p.value());
  Tensor<S> out = stack(values);
  return make_op<S>(std::move(out), parts, [](Node<S>& n) {
    Eigen::Index off = 0;
    for (auto& p : n.parents) {
      const auto len = static_cast<Eigen::Index>(p->value.numel());
      if (p->requires_grad) p->accumulate(n.grad.array().segment(off, len));
      off += len;
    }
  });
}

template <class S>
Var<S> channel_mix(const Var<S>& x, const Eigen::Matrix<S, 3, 3>& m, const Eigen::Matrix<S, 3, 1>& offset) {
  const Shape s = x.shape();
  if (s.c != 3) throw DimensionError("channel_mix needs 3 channels, got " + s.str());
  const int hw = s.h * s.w;
  Tensor<S> out(s);
  for (int i = 0; i < s.n; ++i) {
    Eigen::Map<const RowMatrix<S>> in(x.value().data() + static_cast<std::size_t>(i) * 3 * hw, 3, hw);
    Eigen::Map<RowMatrix<S>> o(out.data() + static_cast<std::size_t>(i) * 3 * hw, 3, hw);
    o.noalias() = m * in;
    o.colwise() += offset;
  }
  return make_op<S>(std::move(out), {x}, [m, s, hw](Node<S>& n) {
    Tensor<S> g(s);
    for (int i = 0; i < s.n; ++i) {
      Eigen::Map<const RowMatrix<S>> dy(n.grad.data() + static_cast<std::size_t>(i) * 3 * hw, 3, hw);
      Eigen::Map<RowMatrix<S>> dx(g.data() + static_cast<std::size_t>(i) * 3 * hw, 3, hw);
      dx.noalias() = m.transpose() * dy;
    }
    n.parents[0]->accumulate(g.array());
  });
}

namespace {

template <class S>
const Eigen::Matrix<S, 8, 8>& dct8_matrix() {
  static const Eigen::Matrix<S, 8, 8> d = [] {
    Eigen::Matrix<S, 8, 8> m;
    for (int k = 0; k < 8; ++k) {
      const double a = k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int i = 0; i < 8; ++i) {
        m(k, i) = static_cast<S>(a * std::cos((2 * i + 1) * k * std::numbers::pi / 16.0));
      }
    }
    return m;
  }();
  return d;
}

// Applies L * block * R to every 8x8 block of every plane.
template <class S>
void blockwise(const Tensor<S>& in, Tensor<S>& out, const Eigen::Matrix<S, 8, 8>& left,
               const Eigen::Matrix<S, 8, 8>& right) {
  using Stride = Eigen::OuterStride<>;
  const Shape s = in.shape();
  for (int i = 0; i < s.n; ++i) {
    for (int c = 0; c < s.c; ++c) {
      for (int by = 0; by < s.h; by += 8) {
        for (int bx = 0; bx < s.w; bx += 8) {
          Eigen::Map<const Eigen::Matrix<S, 8, 8, Eigen::RowMajor>, 0, Stride> src(
              in.data() + in.index(i, c, by, bx), 8, 8, Stride(s.w));
          Eigen::Map<Eigen::Matrix<S, 8, 8, Eigen::RowMajor>, 0, Stride> dst(out.data() + out.index(i, c, by, bx),
                                                                              8, 8, Stride(s.w));
          dst.noalias() = left * src * right;
        }
      }
    }
  }
}

}  // namespace

template <class S>
Var<S> block_dct8(const Var<S>& x, bool inverse) {
  const Shape s = x.shape();
  if (s.h % 8 != 0 || s.w % 8 != 0) throw DimensionError("block_dct8 needs H,W multiples of 8, got " + s.str());
  const auto& d = dct8_matrix<S>();
  const Eigen::Matrix<S, 8, 8> dt = d.transpose();
  Tensor<S> out(s);
  if (inverse) {
    blockwise(x.value(), out, dt, d);
  } else {
    blockwise(x.value(), out, d, dt);
  }
  return make_op<S>(std::move(out), {x}, [inverse, s](Node<S>& n) {
    const auto& dm = dct8_matrix<S>();
    const Eigen::Matrix<S, 8, 8> dmt = dm.transpose();
    Tensor<S> g(s);
    if (inverse) {
      blockwise(n.grad, g, dm, dmt);
    } else {
      blockwise(n.grad, g, dmt, dm);
    }
    n.parents[0]->accumulate(g.array());
  });
}

namespace {

inline int reflect_index(int i, int size) {
  if (size == 1) return 0;
  const int period = 2 * (size - 1);
  i %= period;
  if (i < 0) i += period;
  return i < size ? i : period - i;
}

}  // namespace

template <class S>
Var<S> conv1d_reflect(const Var<S>& x, const std::vector<S>& kernel, int axis) {
  if (kernel.size() % 2 == 0) throw ParameterError("conv1d_reflect needs an odd kernel");
  if (axis != 2 && axis != 3) throw ParameterError("conv1d_reflect axis must be 2 or 3");
  const Shape s = x.shape();
  const int r = static_cast<int>(kernel.size() / 2);
  const int len = axis == 3 ? s.w : s.h;
  // Precomputed gather table: tap t of output position p reads input index taps[p*K+t].
  std::vector<int> taps(static_cast<std::size_t>(len) * kernel.size());
  for (int p = 0; p < len; ++p)
    for (int t = 0; t < static_cast<int>(kernel.size()); ++t) taps[p * kernel.size() + t] = reflect_index(p + t - r, len);

  auto apply = [s, axis, len, kernel, taps](const Tensor<S>& in, Tensor<S>& out, bool transpose) {
    const std::size_t k = kernel.size();
    const int lines = axis == 3 ? s.h : s.w;
    const int step = axis == 3 ? 1 : s.w;
    for (int i = 0; i < s.n; ++i) {
      for (int c = 0; c < s.c; ++c) {
        const S* src = in.data() + in.index(i, c, 0, 0);
        S* dst = out.data() + out.index(i, c, 0, 0);
        for (int line = 0; line < lines; ++line) {
          const int base = axis == 3 ? line * s.w : line;
          for (int p = 0; p < len; ++p) {
            for (std::size_t t = 0; t < k; ++t) {
              const int q = taps[p * k + t];
              if (transpose) {
                dst[base + q * step] += kernel[t] * src[base + p * step];
              } else {
                dst[base + p * step] += kernel[t] * src[base + q * step];
              }
            }
          }
        }
      }
    }
  };
  Tensor<S> out(s);
  apply(x.value(), out, false);
  return make_op<S>(std::move(out), {x}, [apply, s](Node<S>& n) {
    Tensor<S> g(s);
    apply(n.grad, g, true);
    n.parents[0]->accumulate(g.array());
  });
}

template <class S>
Var<S> channel_normalize(const Var<S>& x, S eps) {
  const Shape s = x.shape();
  const int hw = s.h * s.w;
  Tensor<S> out(s);
  Tensor<S> norms(Shape{s.n, 1, s.h, s.w});
  for (int i = 0; i < s.n; ++i) {
    Eigen::Map<const RowMatrix<S>> in(x.value().data() + static_cast<std::size_t>(i) * s.c * hw, s.c, hw);
    Eigen::Map<RowMatrix<S>> o(out.data() + static_cast<std::size_t>(i) * s.c * hw, s.c, hw);
    Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>> q(norms.data() + static_cast<std::size_t>(i) * hw, hw);
    q = (in.colwise().squaredNorm().array() + eps).sqrt().matrix();
    o = in.array().rowwise() / q.array();
  }
  return make_op<S>(std::move(out), {x}, [s, hw, norms](Node<S>& n) {
    Tensor<S> g(s);
    for (int i = 0; i < s.n; ++i) {
      const std::size_t off = static_cast<std::size_t>(i) * s.c * hw;
      Eigen::Map<const RowMatrix<S>> y(n.value.data() + off, s.c, hw);
      Eigen::Map<const RowMatrix<S>> dy(n.grad.data() + off, s.c, hw);
      Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>> q(norms.data() + static_cast<std::size_t>(i) * hw, hw);
      Eigen::Map<RowMatrix<S>> dx(g.data() + off, s.c, hw);
      // dx = (dy - y * <y, dy>) / q
      const Eigen::Array<S, 1, Eigen::Dynamic> proj = (y.array() * dy.array()).colwise().sum();
      dx = ((dy.array() - y.array().rowwise() * proj).rowwise() / q.array()).matrix();
    }
    n.parents[0]->accumulate(g.array());
  });
}

template <class S>
Var<S> sum(const Var<S>& x) {
  Tensor<S> out(Shape{1, 1, 1, 1}, x.value().array().sum());
  return make_op<S>(std::move(out), {x}, [](Node<S>& n) {
    const S g = n.grad.array()(0);
    n.parents[0]->accumulate(Tensor<S>::Storage::Constant(n.parents[0]->value.numel(), g));
  });
}

template <class S>
Var<S> mean(const Var<S>& x) {
  const auto count = static_cast<S>(x.value().numel());
  Tensor<S> out(Shape{1, 1, 1, 1}, x.value().array().sum() / count);
  return make_op<S>(std::move(out), {x}, [count](Node<S>& n) {
    const S g = n.grad.array()(0) / count;
    n.parents[0]->accumulate(Tensor<S>::Storage::Constant(n.parents[0]->value.numel(), g));
  });
}

template <class S>
Var<S> mse(const Var<S>& a, const Var<S>& b) {
  check_same(a, b, "mse");
  const auto count = static_cast<S>(a.value().numel());
  const auto diff = (a.value().array() - b.value().array()).eval();
  Tensor<S> out(Shape{1, 1, 1, 1}, diff.square().sum() / count);
  return make_op<S>(std::move(out), {a, b}, [count](Node<S>& n) {
    const S g = n.grad.array()(0) * S(2) / count;
    const auto d = (n.parents[0]->value.array() - n.parents[1]->value.array()).eval();
    if (wants(n, 0)) n.parents[0]->accumulate(d * g);
    if (wants(n, 1)) n.parents[1]->accumulate(-d * g);
  });
}

template <class S>
Var<S> mse_per_sample(const Var<S>& a, const Var<S>& b) {
  check_same(a, b, "mse_per_sample");
  const Shape s = a.shape();
  const auto per = static_cast<Eigen::Index>(s.sample_size());
  const auto diff = (a.value().array() - b.value().array()).eval();
  Tensor<S> out(Shape{s.n, 1, 1, 1});
  for (int i = 0; i < s.n; ++i) out.array()(i) = diff.segment(i * per, per).square().sum() / static_cast<S>(per);
  return make_op<S>(std::move(out), {a, b}, [per, s](Node<S>& n) {
    const auto d = (n.parents[0]->value.array() - n.parents[1]->value.array()).eval();
    typename Tensor<S>::Storage g(d.size());
    for (int i = 0; i < s.n; ++i) g.segment(i * per, per) = d.segment(i * per, per) * (S(2) * n.grad.array()(i) / static_cast<S>(per));
    if (wants(n, 0)) n.parents[0]->accumulate(g);
    if (wants(n, 1)) n.parents[1]->accumulate(-g);
  });
}

#define ADVMARK_INSTANTIATE(S)                                                                             \
  template class Var<S>;                                                                                   \
  template Var<S> make_op<S>(Tensor<S>, std::vector<Var<S>>, std::function<void(Node<S>&)>);               \
  template void backward<S>(const Var<S>&);                                                                \
  template Var<S> operator+ <S>(const Var<S>&, const Var<S>&);                                             \
  template Var<S> operator- <S>(const Var<S>&, const Var<S>&);                                             \
  template Var<S> operator* <S>(const Var<S>&, const Var<S>&);                                             \
  template Var<S> operator* <S>(const Var<S>&, S);                                                         \
  template Var<S> operator+ <S>(const Var<S>&, S);                                                         \
  template Var<S> operator- <S>(S, const Var<S>&);                                                         \
  template Var<S> add_const<S>(const Var<S>&, const Tensor<S>&);                                           \
  template Var<S> mul_broadcast<S>(const Var<S>&, const Tensor<S>&);                                       \
  template Var<S> leaky_relu<S>(const Var<S>&, S);                                                         \
  template Var<S> tanh<S>(const Var<S>&);                                                                  \
  template Var<S> sigmoid<S>(const Var<S>&);                                                               \
  template Var<S> abs<S>(const Var<S>&);                                                                   \
  template Var<S> clamp<S>(const Var<S>&, S, S);                                                           \
  template Var<S> round_ste<S>(const Var<S>&);                                                             \
  template Var<S> conv2d<S>(const Var<S>&, const Var<S>&, const Var<S>&, int, int);                        \
  template Var<S> linear<S>(const Var<S>&, const Var<S>&, const Var<S>&);                                  \
  template Var<S> reshape<S>(const Var<S>&, Shape);                                                        \
  template Var<S> upsample_nearest<S>(const Var<S>&, int);                                                 \
  template Var<S> concat_channels<S>(const std::vector<Var<S>>&);                                          \
  template Var<S> slice_samples<S>(const Var<S>&, int, int);                                               \
  template Var<S> concat_samples<S>(const std::vector<Var<S>>&);                                           \
  template Var<S> channel_mix<S>(const Var<S>&, const Eigen::Matrix<S, 3, 3>&, const Eigen::Matrix<S, 3, 1>&); \
  template Var<S> block_dct8<S>(const Var<S>&, bool);                                                      \
  template Var<S> conv1d_reflect<S>(const Var<S>&, const std::vector<S>&, int);                            \
  template Var<S> channel_normalize<S>(const Var<S>&, S);                                                  \
  template Var<S> sum<S>(const Var<S>&);                                                                   \
  template Var<S> mean<S>(const Var<S>&);                                                                  \
  template Var<S> mse<S>(const Var<S>&, const Var<S>&);                                                    \
  template Var<S> mse_per_sample<S>(const Var<S>&, const Var<S>&);

ADVMARK_INSTANTIATE(float)
ADVMARK_INSTANTIATE(double)

#undef ADVMARK_INSTANTIATE

}  // namespace advmark

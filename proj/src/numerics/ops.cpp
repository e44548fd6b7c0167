// Copyright 2026 The distileak Authors
// SPDX-License-Identifier: Apache-2.0

#include "distileak/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace distileak::numerics {

namespace {

void require_same(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

void require_rank(const Var& a, std::size_t rank, const char* op) {
  if (a.value().rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(a.shape()));
  }
}

template <class F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

Var constant(Tensor t) { return Var(std::move(t)); }

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  return make_result(zip(a.value(), b.value(), std::plus<>()), {a, b},
                     [](const Var&, const Var& g) { return std::vector<Var>{g, g}; }, "add");
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  return make_result(zip(a.value(), b.value(), std::minus<>()), {a, b},
                     [](const Var&, const Var& g) { return std::vector<Var>{g, neg(g)}; }, "sub");
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  return make_result(zip(a.value(), b.value(), std::multiplies<>()), {a, b},
                     [](const Var& self, const Var& g) {
                       return std::vector<Var>{mul(g, self.parent(1)), mul(g, self.parent(0))};
                     },
                     "mul");
}

Var div(const Var& a, const Var& b) {
  require_same(a, b, "div");
  return make_result(zip(a.value(), b.value(), std::divides<>()), {a, b},
                     [](const Var& self, const Var& g) {
                       const Var& den = self.parent(1);
                       Var ga = div(g, den);
                       return std::vector<Var>{ga, neg(mul(ga, self))};
                     },
                     "div");
}

Var neg(const Var& a) {
  return make_result(map(a.value(), std::negate<>()), {a},
                     [](const Var&, const Var& g) { return std::vector<Var>{neg(g)}; }, "neg");
}

Var scale(const Var& a, double s) {
  return make_result(map(a.value(), [s](double v) { return v * s; }), {a},
                     [s](const Var&, const Var& g) { return std::vector<Var>{scale(g, s)}; },
                     "scale");
}

Var add_scalar(const Var& a, double s) {
  return make_result(map(a.value(), [s](double v) { return v + s; }), {a},
                     [](const Var&, const Var& g) { return std::vector<Var>{g}; }, "add_scalar");
}

Var exp(const Var& a) {
  return make_result(map(a.value(), [](double v) { return std::exp(v); }), {a},
                     [](const Var& self, const Var& g) { return std::vector<Var>{mul(g, self)}; },
                     "exp");
}

Var log(const Var& a) {
  return make_result(map(a.value(), [](double v) { return std::log(v); }), {a},
                     [](const Var& self, const Var& g) {
                       return std::vector<Var>{div(g, self.parent(0))};
                     },
                     "log");
}

Var sqrt(const Var& a) {
  return make_result(map(a.value(), [](double v) { return std::sqrt(v); }), {a},
                     [](const Var& self, const Var& g) {
                       const Tensor& y = self.value();
                       const bool has_zero =
                           std::any_of(y.values().begin(), y.values().end(),
                                       [](double v) { return v == 0.0; });
                       if (!has_zero) return std::vector<Var>{div(scale(g, 0.5), self)};
                       Tensor coeff = map(y, [](double v) { return v == 0.0 ? 0.0 : 0.5 / v; });
                       return std::vector<Var>{mul(g, constant(std::move(coeff)))};
                     },
                     "sqrt");
}

Var square(const Var& a) {
  return make_result(map(a.value(), [](double v) { return v * v; }), {a},
                     [](const Var& self, const Var& g) {
                       return std::vector<Var>{mul(g, scale(self.parent(0), 2.0))};
                     },
                     "square");
}

Var relu(const Var& a) {
  return make_result(map(a.value(), [](double v) { return v > 0.0 ? v : 0.0; }), {a},
                     [](const Var& self, const Var& g) {
                       Tensor mask = map(self.parent(0).value(),
                                         [](double v) { return v > 0.0 ? 1.0 : 0.0; });
                       return std::vector<Var>{mul(g, constant(std::move(mask)))};
                     },
                     "relu");
}

Var tanh(const Var& a) {
  return make_result(map(a.value(), [](double v) { return std::tanh(v); }), {a},
                     [](const Var& self, const Var& g) {
                       Var deriv = add_scalar(neg(square(self)), 1.0);
                       return std::vector<Var>{mul(g, deriv)};
                     },
                     "tanh");
}

Var sigmoid(const Var& a) {
  return make_result(map(a.value(),
                         [](double v) {
                           if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
                           const double e = std::exp(v);
                           return e / (1.0 + e);
                         }),
                     {a},
                     [](const Var& self, const Var& g) {
                       Var deriv = mul(self, add_scalar(neg(self), 1.0));
                       return std::vector<Var>{mul(g, deriv)};
                     },
                     "sigmoid");
}

Var clamp(const Var& a, double lo, double hi) {
  return make_result(map(a.value(), [lo, hi](double v) { return std::clamp(v, lo, hi); }), {a},
                     [lo, hi](const Var& self, const Var& g) {
                       Tensor mask = map(self.parent(0).value(), [lo, hi](double v) {
                         return (v > lo && v < hi) ? 1.0 : 0.0;
                       });
                       return std::vector<Var>{mul(g, constant(std::move(mask)))};
                     },
                     "clamp");
}

Var stop_gradient(const Var& a) { return Var(a.value()); }

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return make_result(Tensor::scalar(s), {a},
                     [](const Var& self, const Var& g) {
                       return std::vector<Var>{expand_scalar(g, self.parent(0).shape())};
                     },
                     "sum");
}

Var mean(const Var& a) {
  if (a.size() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Var expand_scalar(const Var& s, const Shape& shape) {
  if (s.size() != 1) throw ShapeError("expand_scalar: operand is " + to_string(s.shape()));
  return make_result(Tensor(shape, s.value()[0]), {s},
                     [](const Var& self, const Var& g) {
                       Var total = sum(g);
                       return std::vector<Var>{reshape(total, self.parent(0).shape())};
                     },
                     "expand_scalar");
}

Var sum_rows(const Var& a) {
  require_rank(a, 2, "sum_rows");
  const Tensor& x = a.value();
  Tensor out(Shape{x.cols()});
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out[c] += x.at(r, c);
  return make_result(std::move(out), {a},
                     [](const Var& self, const Var& g) {
                       return std::vector<Var>{expand_rows(g, self.parent(0).value().rows())};
                     },
                     "sum_rows");
}

Var expand_rows(const Var& v, std::size_t n) {
  require_rank(v, 1, "expand_rows");
  const Tensor& x = v.value();
  Tensor out(Shape{n, x.size()});
  for (std::size_t r = 0; r < n; ++r)
    std::copy(x.values().begin(), x.values().end(), out.data() + r * x.size());
  return make_result(std::move(out), {v},
                     [](const Var&, const Var& g) { return std::vector<Var>{sum_rows(g)}; },
                     "expand_rows");
}

Var sum_cols(const Var& a) {
  require_rank(a, 2, "sum_cols");
  const Tensor& x = a.value();
  Tensor out(Shape{x.rows()});
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out[r] += x.at(r, c);
  return make_result(std::move(out), {a},
                     [](const Var& self, const Var& g) {
                       return std::vector<Var>{expand_cols(g, self.parent(0).value().cols())};
                     },
                     "sum_cols");
}

Var expand_cols(const Var& v, std::size_t f) {
  require_rank(v, 1, "expand_cols");
  const Tensor& x = v.value();
  Tensor out(Shape{x.size(), f});
  for (std::size_t r = 0; r < x.size(); ++r)
    std::fill_n(out.data() + r * f, f, x[r]);
  return make_result(std::move(out), {v},
                     [](const Var&, const Var& g) { return std::vector<Var>{sum_cols(g)}; },
                     "expand_cols");
}

Var group_sum_rows(const Var& a, std::size_t r) {
  require_rank(a, 2, "group_sum_rows");
  const Tensor& x = a.value();
  if (r == 0 || x.rows() % r != 0) {
    throw ShapeError("group_sum_rows: " + std::to_string(x.rows()) + " rows not divisible by " +
                     std::to_string(r));
  }
  const std::size_t n = x.rows() / r, f = x.cols();
  Tensor out(Shape{n, f});
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t c = 0; c < f; ++c) out.at(i / r, c) += x.at(i, c);
  return make_result(std::move(out), {a},
                     [r](const Var&, const Var& g) { return std::vector<Var>{repeat_rows(g, r)}; },
                     "group_sum_rows");
}

Var repeat_rows(const Var& a, std::size_t r) {
  require_rank(a, 2, "repeat_rows");
  const Tensor& x = a.value();
  const std::size_t f = x.cols();
  Tensor out(Shape{x.rows() * r, f});
  for (std::size_t i = 0; i < x.rows() * r; ++i)
    std::copy_n(x.data() + (i / r) * f, f, out.data() + i * f);
  return make_result(std::move(out), {a},
                     [r](const Var&, const Var& g) {
                       return std::vector<Var>{group_sum_rows(g, r)};
                     },
                     "repeat_rows");
}

Var matmul(const Var& a, const Var& b, bool transpose_a, bool transpose_b) {
  Tensor out = matmul(a.value(), b.value(), transpose_a, transpose_b);
  return make_result(
      std::move(out), {a, b},
      [transpose_a, transpose_b](const Var& self, const Var& g) {
        const Var& A = self.parent(0);
        const Var& B = self.parent(1);
        Var ga, gb;
        if (A.requires_grad()) {
          ga = transpose_a ? matmul(B, g, transpose_b, true) : matmul(g, B, false, !transpose_b);
        }
        if (B.requires_grad()) {
          gb = transpose_b ? matmul(g, A, true, transpose_a) : matmul(A, g, !transpose_a, false);
        }
        return std::vector<Var>{ga, gb};
      },
      "matmul");
}

Var reshape(const Var& a, Shape shape) {
  return make_result(a.value().reshaped(std::move(shape)), {a},
                     [](const Var& self, const Var& g) {
                       return std::vector<Var>{reshape(g, self.parent(0).shape())};
                     },
                     "reshape");
}

Var slice_flat(const Var& a, std::size_t offset, Shape shape) {
  const std::size_t n = element_count(shape);
  if (offset + n > a.size()) {
    throw ShapeError("slice_flat: window [" + std::to_string(offset) + ", " +
                     std::to_string(offset + n) + ") exceeds " + std::to_string(a.size()));
  }
  std::vector<double> data(a.value().data() + offset, a.value().data() + offset + n);
  return make_result(Tensor(std::move(shape), std::move(data)), {a},
                     [offset](const Var& self, const Var& g) {
                       return std::vector<Var>{pad_flat(g, offset, self.parent(0).shape())};
                     },
                     "slice_flat");
}

Var pad_flat(const Var& a, std::size_t offset, Shape full) {
  Tensor out(std::move(full));
  if (offset + a.size() > out.size()) throw ShapeError("pad_flat: window exceeds target");
  std::copy(a.value().values().begin(), a.value().values().end(), out.data() + offset);
  return make_result(std::move(out), {a},
                     [offset](const Var& self, const Var& g) {
                       return std::vector<Var>{slice_flat(g, offset, self.parent(0).shape())};
                     },
                     "pad_flat");
}

Var gather_rows(const Var& a, std::vector<std::size_t> index) {
  require_rank(a, 2, "gather_rows");
  const Tensor& x = a.value();
  const std::size_t f = x.cols();
  Tensor out(Shape{index.size(), f});
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= x.rows()) throw ShapeError("gather_rows: index out of range");
    std::copy_n(x.data() + index[i] * f, f, out.data() + i * f);
  }
  return make_result(std::move(out), {a},
                     [index](const Var& self, const Var& g) {
                       return std::vector<Var>{
                           scatter_rows(g, index, self.parent(0).value().rows())};
                     },
                     "gather_rows");
}

Var scatter_rows(const Var& a, std::vector<std::size_t> index, std::size_t n) {
  require_rank(a, 2, "scatter_rows");
  const Tensor& x = a.value();
  if (x.rows() != index.size()) throw ShapeError("scatter_rows: index length mismatch");
  const std::size_t f = x.cols();
  Tensor out(Shape{n, f});
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= n) throw ShapeError("scatter_rows: index out of range");
    for (std::size_t c = 0; c < f; ++c) out.at(index[i], c) += x.at(i, c);
  }
  return make_result(std::move(out), {a},
                     [index](const Var&, const Var& g) {
                       return std::vector<Var>{gather_rows(g, index)};
                     },
                     "scatter_rows");
}

Var log_softmax(const Var& a) {
  require_rank(a, 2, "log_softmax");
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < x.cols(); ++c) m = std::max(m, x.at(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) z += std::exp(x.at(r, c) - m);
    const double lz = m + std::log(z);
    for (std::size_t c = 0; c < x.cols(); ++c) out.at(r, c) = x.at(r, c) - lz;
  }
  return make_result(std::move(out), {a},
                     [](const Var& self, const Var& g) {
                       const std::size_t c = self.value().cols();
                       Var softmax = exp(self);
                       Var row_total = expand_cols(sum_cols(g), c);
                       return std::vector<Var>{sub(g, mul(softmax, row_total))};
                     },
                     "log_softmax");
}

namespace {

void check_geometry(const Var& a, const ConvGeometry& g, std::size_t cols, const char* op) {
  require_rank(a, 2, op);
  if (a.value().rows() != g.batch * g.height * g.width || a.value().cols() != cols) {
    throw ShapeError(std::string(op) + ": input " + to_string(a.shape()) +
                     " does not match geometry");
  }
}

// Calls f(out_row, out_col, in_row, channel) for every valid (patch element, channel).
template <class F>
void for_each_patch(const ConvGeometry& g, F f) {
  const auto k = static_cast<long>(g.kernel);
  const auto pad = static_cast<long>(g.pad);
  const auto h = static_cast<long>(g.height), w = static_cast<long>(g.width);
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (long y = 0; y < h; ++y) {
      for (long x = 0; x < w; ++x) {
        const std::size_t out_row = (n * g.height + y) * g.width + x;
        for (long ky = 0; ky < k; ++ky) {
          const long sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          for (long kx = 0; kx < k; ++kx) {
            const long sx = x + kx - pad;
            if (sx < 0 || sx >= w) continue;
            const std::size_t in_row = (n * g.height + sy) * g.width + sx;
            const std::size_t col0 = (ky * k + kx) * g.channels;
            f(out_row, col0, in_row);
          }
        }
      }
    }
  }
}

}  // namespace

Var im2col(const Var& a, const ConvGeometry& g) {
  check_geometry(a, g, g.channels, "im2col");
  const std::size_t cols = g.kernel * g.kernel * g.channels;
  const Tensor& x = a.value();
  Tensor out(Shape{x.rows(), cols});
  for_each_patch(g, [&](std::size_t out_row, std::size_t col0, std::size_t in_row) {
    std::copy_n(x.data() + in_row * g.channels, g.channels, out.data() + out_row * cols + col0);
  });
  return make_result(std::move(out), {a},
                     [g](const Var&, const Var& grad) {
                       return std::vector<Var>{col2im(grad, g)};
                     },
                     "im2col");
}

Var col2im(const Var& a, const ConvGeometry& g) {
  const std::size_t cols = g.kernel * g.kernel * g.channels;
  check_geometry(a, g, cols, "col2im");
  const Tensor& x = a.value();
  Tensor out(Shape{x.rows(), g.channels});
  for_each_patch(g, [&](std::size_t out_row, std::size_t col0, std::size_t in_row) {
    const double* src = x.data() + out_row * cols + col0;
    double* dst = out.data() + in_row * g.channels;
    for (std::size_t c = 0; c < g.channels; ++c) dst[c] += src[c];
  });
  return make_result(std::move(out), {a},
                     [g](const Var&, const Var& grad) {
                       return std::vector<Var>{im2col(grad, g)};
                     },
                     "col2im");
}

Var pool2_sum(const Var& a, std::size_t batch, std::size_t height, std::size_t width) {
  require_rank(a, 2, "pool2_sum");
  const Tensor& x = a.value();
  if (x.rows() != batch * height * width || height % 2 || width % 2) {
    throw ShapeError("pool2_sum: input " + to_string(x.shape()) + " does not match geometry");
  }
  const std::size_t c = x.cols(), oh = height / 2, ow = width / 2;
  Tensor out(Shape{batch * oh * ow, c});
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t xx = 0; xx < width; ++xx) {
        const double* src = x.data() + ((n * height + y) * width + xx) * c;
        double* dst = out.data() + ((n * oh + y / 2) * ow + xx / 2) * c;
        for (std::size_t k = 0; k < c; ++k) dst[k] += src[k];
      }
  return make_result(std::move(out), {a},
                     [batch, oh, ow](const Var&, const Var& g) {
                       return std::vector<Var>{upsample2(g, batch, oh, ow)};
                     },
                     "pool2_sum");
}

Var upsample2(const Var& a, std::size_t batch, std::size_t height, std::size_t width) {
  require_rank(a, 2, "upsample2");
  const Tensor& x = a.value();
  if (x.rows() != batch * height * width) {
    throw ShapeError("upsample2: input " + to_string(x.shape()) + " does not match geometry");
  }
  const std::size_t c = x.cols(), oh = height * 2, ow = width * 2;
  Tensor out(Shape{batch * oh * ow, c});
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const double* src = x.data() + ((n * height + y / 2) * width + xx / 2) * c;
        std::copy_n(src, c, out.data() + ((n * oh + y) * ow + xx) * c);
      }
  return make_result(std::move(out), {a},
                     [batch, oh, ow](const Var&, const Var& g) {
                       return std::vector<Var>{pool2_sum(g, batch, oh, ow)};
                     },
                     "upsample2");
}

}  // namespace distileak::numerics

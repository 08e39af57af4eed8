#include "capsfield/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "capsfield/errors.hpp"

namespace capsfield::numerics {

namespace detail {

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

namespace {

void require_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string(op) + ": non-finite input");
}

void check_matmul_shapes(const Shape& a, const Shape& b) {
  if (a.size() != 2 || b.size() != 2 || a[1] != b[0]) {
    throw ShapeError("matmul: shape mismatch " + to_string(a) + " x " + to_string(b));
  }
}

std::size_t last_dim(const Tensor& t) { return t.shape().back(); }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_matmul_shapes(a.shape(), b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out(Shape{m, n}, 0.0);
  detail::gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data().data());
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  require_finite(x, "softmax_rows");
  Tensor out(x.shape(), 0.0);
  const std::size_t cols = last_dim(x);
  const std::size_t rows = x.size() / cols;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * cols;
    double* o = out.data().data() + r * cols;
    const double peak = *std::max_element(in, in + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - peak);
      total += o[c];
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
  }
  return out;
}

double cross_entropy(const Tensor& probs, std::size_t label, double floor) {
  if (label >= probs.size()) {
    throw ConfigError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                      std::to_string(probs.size()) + " classes");
  }
  require_finite(probs, "cross_entropy");
  double total = 0.0;
  for (double p : probs.data()) total += p;
  if (std::abs(total - 1.0) > 1e-5) {
    throw NumericError("cross_entropy: probabilities sum to " + std::to_string(total));
  }
  return -std::log(std::max(probs[label], floor));
}

Var matmul(Var a, Var b) {
  Tensor out = matmul(a.value(), b.value());
  return a.tape().record(std::move(out), {a, b}, [a, b](const Tensor& g, const Tensor&, Tape& tape) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    if (tape.requires_grad(a))
      detail::gemm_nt(m, n, k, g.data().data(), bv.data().data(),
                      tape.grad_buffer(a).data().data());
    if (tape.requires_grad(b))
      detail::gemm_tn(k, m, n, av.data().data(), g.data().data(),
                      tape.grad_buffer(b).data().data());
  });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](const Tensor& g, const Tensor&, Tape& tape) {
    for (Var v : {a, b}) {
      if (!tape.requires_grad(v)) continue;
      Tensor& dv = tape.grad_buffer(v);
      for (std::size_t i = 0; i < g.size(); ++i) dv[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](const Tensor& g, const Tensor&, Tape& tape) {
    if (tape.requires_grad(a)) {
      Tensor& da = tape.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    }
    if (tape.requires_grad(b)) {
      Tensor& db = tape.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](const Tensor& g, const Tensor&, Tape& tape) {
    if (tape.requires_grad(a)) {
      Tensor& da = tape.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * b.value()[i];
    }
    if (tape.requires_grad(b)) {
      Tensor& db = tape.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * a.value()[i];
    }
  });
}

Var scale(Var x, double factor) {
  Tensor out = x.value();
  for (double& v : out.data()) v *= factor;
  return x.tape().record(std::move(out), {x}, [x, factor](const Tensor& g, const Tensor&, Tape& tape) {
    Tensor& dx = tape.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += factor * g[i];
  });
}

Var add_bias(Var x, Var bias) {
  const std::size_t cols = last_dim(x.value());
  if (bias.value().rank() != 1 || bias.value().size() != cols) {
    throw ShapeError("add_bias: bias " + to_string(bias.shape()) + " does not match " +
                     to_string(x.shape()));
  }
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias.value()[i % cols];
  return x.tape().record(std::move(out), {x, bias}, [x, bias, cols](const Tensor& g, const Tensor&, Tape& tape) {
    if (tape.requires_grad(x)) {
      Tensor& dx = tape.grad_buffer(x);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    }
    if (tape.requires_grad(bias)) {
      Tensor& db = tape.grad_buffer(bias);
      for (std::size_t i = 0; i < g.size(); ++i) db[i % cols] += g[i];
    }
  });
}

Var relu(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return x.tape().record(std::move(out), {x}, [x](const Tensor& g, const Tensor&, Tape& tape) {
    Tensor& dx = tape.grad_buffer(x);
    const Tensor& xv = x.value();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0.0) dx[i] += g[i];
  });
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return x.tape().record(Tensor::scalar(total), {x}, [x](const Tensor& g, const Tensor&, Tape& tape) {
    Tensor& dx = tape.grad_buffer(x);
    for (double& v : dx.data()) v += g[0];
  });
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  return scale(sum(x), 1.0 / n);
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape().record(std::move(out), {x}, [x](const Tensor& g, const Tensor&, Tape& tape) {
    Tensor& dx = tape.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
  });
}

Var stop_gradient(Var x) { return x.tape().constant(x.value()); }

Var softmax_rows(Var x) {
  Tensor out = softmax_rows(x.value());
  const std::size_t cols = last_dim(out);
  return x.tape().record(std::move(out), {x}, [x, cols](const Tensor& g, const Tensor& yv, Tape& tape) {
    Tensor& dx = tape.grad_buffer(x);
    const std::size_t rows = yv.size() / cols;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yr = yv.data().data() + r * cols;
      const double* gr = g.data().data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += yr[c] * gr[c];
      double* dr = dx.data().data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) dr[c] += yr[c] * (gr[c] - dot);
    }
  });
}

Var cross_entropy(Var probs, std::span<const std::size_t> labels, double floor) {
  const Tensor& p = probs.value();
  const std::size_t classes = last_dim(p);
  const std::size_t rows = p.size() / classes;
  if (labels.size() != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(rows) + " rows");
  }
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    Tensor row(Shape{classes},
               std::vector<double>(p.data().begin() + static_cast<std::ptrdiff_t>(r * classes),
                                   p.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * classes)));
    total += cross_entropy(row, labels[r], floor);
  }
  std::vector<std::size_t> saved(labels.begin(), labels.end());
  return probs.tape().record(
      Tensor::scalar(total / static_cast<double>(rows)), {probs},
      [probs, saved = std::move(saved), classes, floor](const Tensor& g, const Tensor&, Tape& tape) {
        const Tensor& pv = probs.value();
        Tensor& dp = tape.grad_buffer(probs);
        const double inv_rows = 1.0 / static_cast<double>(saved.size());
        for (std::size_t r = 0; r < saved.size(); ++r) {
          const std::size_t idx = r * classes + saved[r];
          if (pv[idx] > floor) dp[idx] -= g[0] * inv_rows / pv[idx];
        }
      });
}

namespace {

struct ConvGeometry {
  std::size_t n, c, h, w, o, k, stride, pad, ho, wo;
};

// cols: [C*k*k, Ho*Wo]
void im2col(const ConvGeometry& geo, const double* img, double* cols) {
  const std::size_t plane = geo.ho * geo.wo;
  for (std::size_t ci = 0; ci < geo.c; ++ci)
    for (std::size_t ky = 0; ky < geo.k; ++ky)
      for (std::size_t kx = 0; kx < geo.k; ++kx) {
        double* row = cols + ((ci * geo.k + ky) * geo.k + kx) * plane;
        for (std::size_t oy = 0; oy < geo.ho; ++oy) {
          const long iy = static_cast<long>(oy * geo.stride + ky) - static_cast<long>(geo.pad);
          for (std::size_t ox = 0; ox < geo.wo; ++ox) {
            const long ix = static_cast<long>(ox * geo.stride + kx) - static_cast<long>(geo.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(geo.h) &&
                                ix < static_cast<long>(geo.w);
            row[oy * geo.wo + ox] =
                inside ? img[(ci * geo.h + static_cast<std::size_t>(iy)) * geo.w +
                             static_cast<std::size_t>(ix)]
                       : 0.0;
          }
        }
      }
}

void col2im_add(const ConvGeometry& geo, const double* cols, double* img) {
  const std::size_t plane = geo.ho * geo.wo;
  for (std::size_t ci = 0; ci < geo.c; ++ci)
    for (std::size_t ky = 0; ky < geo.k; ++ky)
      for (std::size_t kx = 0; kx < geo.k; ++kx) {
        const double* row = cols + ((ci * geo.k + ky) * geo.k + kx) * plane;
        for (std::size_t oy = 0; oy < geo.ho; ++oy) {
          const long iy = static_cast<long>(oy * geo.stride + ky) - static_cast<long>(geo.pad);
          if (iy < 0 || iy >= static_cast<long>(geo.h)) continue;
          for (std::size_t ox = 0; ox < geo.wo; ++ox) {
            const long ix = static_cast<long>(ox * geo.stride + kx) - static_cast<long>(geo.pad);
            if (ix < 0 || ix >= static_cast<long>(geo.w)) continue;
            img[(ci * geo.h + static_cast<std::size_t>(iy)) * geo.w + static_cast<std::size_t>(ix)] +=
                row[oy * geo.wo + ox];
          }
        }
      }
}

}  // namespace

Var conv2d(Var x, Var weight, Var bias, std::size_t stride, std::size_t pad) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (xv.rank() != 4 || wv.rank() != 4 || wv.dim(1) != xv.dim(1) || wv.dim(2) != wv.dim(3)) {
    throw ShapeError("conv2d: shape mismatch input " + to_string(xv.shape()) + " weight " +
                     to_string(wv.shape()));
  }
  if (bias.value().rank() != 1 || bias.value().size() != wv.dim(0)) {
    throw ShapeError("conv2d: bias " + to_string(bias.shape()) + " does not match weight " +
                     to_string(wv.shape()));
  }
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  ConvGeometry geo{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0), wv.dim(2), stride, pad,
                   0, 0};
  if (geo.h + 2 * pad < geo.k || geo.w + 2 * pad < geo.k) {
    throw ShapeError("conv2d: kernel larger than padded input " + to_string(xv.shape()));
  }
  geo.ho = (geo.h + 2 * pad - geo.k) / stride + 1;
  geo.wo = (geo.w + 2 * pad - geo.k) / stride + 1;

  const std::size_t patch = geo.c * geo.k * geo.k;
  const std::size_t plane = geo.ho * geo.wo;
  Tensor out(Shape{geo.n, geo.o, geo.ho, geo.wo}, 0.0);
  std::vector<double> cols(patch * plane);
  for (std::size_t i = 0; i < geo.n; ++i) {
    im2col(geo, xv.data().data() + i * geo.c * geo.h * geo.w, cols.data());
    double* dst = out.data().data() + i * geo.o * plane;
    for (std::size_t oc = 0; oc < geo.o; ++oc)
      std::fill(dst + oc * plane, dst + (oc + 1) * plane, bias.value()[oc]);
    detail::gemm_nn(geo.o, patch, plane, wv.data().data(), cols.data(), dst);
  }

  return x.tape().record(std::move(out), {x, weight, bias}, [x, weight, bias, geo](const Tensor& g, const Tensor&, Tape& tape) {
    const std::size_t patch = geo.c * geo.k * geo.k;
    const std::size_t plane = geo.ho * geo.wo;
    const bool need_x = tape.requires_grad(x);
    const bool need_w = tape.requires_grad(weight);
    std::vector<double> cols(patch * plane);
    std::vector<double> dcols(need_x ? patch * plane : 0);
    double* dw = need_w ? tape.grad_buffer(weight).data().data() : nullptr;
    double* dx = need_x ? tape.grad_buffer(x).data().data() : nullptr;
    const double* wv = weight.value().data().data();
    for (std::size_t i = 0; i < geo.n; ++i) {
      const double* gi = g.data().data() + i * geo.o * plane;
      if (need_w) {
        im2col(geo, x.value().data().data() + i * geo.c * geo.h * geo.w, cols.data());
        detail::gemm_nt(geo.o, plane, patch, gi, cols.data(), dw);
      }
      if (need_x) {
        std::fill(dcols.begin(), dcols.end(), 0.0);
        detail::gemm_tn(patch, geo.o, plane, wv, gi, dcols.data());
        col2im_add(geo, dcols.data(), dx + i * geo.c * geo.h * geo.w);
      }
    }
    if (tape.requires_grad(bias)) {
      Tensor& db = tape.grad_buffer(bias);
      for (std::size_t i = 0; i < geo.n; ++i)
        for (std::size_t oc = 0; oc < geo.o; ++oc) {
          const double* gp = g.data().data() + (i * geo.o + oc) * plane;
          double acc = 0.0;
          for (std::size_t p = 0; p < plane; ++p) acc += gp[p];
          db[oc] += acc;
        }
    }
  });
}

Var global_avg_pool(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4) throw ShapeError("global_avg_pool: expected rank 4, got " + to_string(xv.shape()));
  const std::size_t n = xv.dim(0), c = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  Tensor out(Shape{n, c}, 0.0);
  for (std::size_t i = 0; i < n * c; ++i) {
    double acc = 0.0;
    for (std::size_t p = 0; p < plane; ++p) acc += xv[i * plane + p];
    out[i] = acc / static_cast<double>(plane);
  }
  return x.tape().record(std::move(out), {x}, [x, plane](const Tensor& g, const Tensor&, Tape& tape) {
    Tensor& dx = tape.grad_buffer(x);
    const double inv = 1.0 / static_cast<double>(plane);
    for (std::size_t i = 0; i < g.size(); ++i)
      for (std::size_t p = 0; p < plane; ++p) dx[i * plane + p] += g[i] * inv;
  });
}

}  // namespace capsfield::numerics

#include "plkrf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "plkrf/error.hpp"
#include "plkrf/parallel.hpp"

namespace plkrf::ops {

namespace {

bool want_record(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::current()) return false;
  for (const Tensor* t : inputs) {
    if (t->grad_relevant()) return true;
  }
  return false;
}

void record(Tensor& out, std::function<void()> fn) {
  out.mark_on_tape();
  Tape::current()->record(std::move(fn));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// C[i,k] += sum_j A[i,j] * B[j,k].  A: I x J, B: J x K.
void mm_nn(double* c, const double* a, const double* b, std::size_t rows, std::size_t inner,
           std::size_t cols) {
  parallel_for(rows, [=](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      double* crow = c + i * cols;
      const double* arow = a + i * inner;
      for (std::size_t j = 0; j < inner; ++j) {
        const double av = arow[j];
        const double* brow = b + j * cols;
        for (std::size_t k = 0; k < cols; ++k) crow[k] += av * brow[k];
      }
    }
  });
}

// C[i,k] += sum_j A[i,j] * B[k,j].  A: I x J, B: K x J.
void mm_nt(double* c, const double* a, const double* b, std::size_t rows, std::size_t cols,
           std::size_t inner) {
  parallel_for(rows, [=](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      double* crow = c + i * cols;
      const double* arow = a + i * inner;
      for (std::size_t k = 0; k < cols; ++k) {
        const double* brow = b + k * inner;
        double acc = 0.0;
        for (std::size_t j = 0; j < inner; ++j) acc += arow[j] * brow[j];
        crow[k] += acc;
      }
    }
  });
}

// C[j,k] += sum_i A[i,j] * B[i,k].  A: I x J, B: I x K.
void mm_tn(double* c, const double* a, const double* b, std::size_t sum_rows, std::size_t rows,
           std::size_t cols) {
  parallel_for(rows, [=](std::size_t j0, std::size_t j1) {
    for (std::size_t i = 0; i < sum_rows; ++i) {
      const double* arow = a + i * rows;
      const double* brow = b + i * cols;
      for (std::size_t j = j0; j < j1; ++j) {
        const double av = arow[j];
        double* crow = c + j * cols;
        for (std::size_t k = 0; k < cols; ++k) crow[k] += av * brow[k];
      }
    }
  });
}

struct MatmulDims {
  std::size_t batch;
  std::size_t rows;
  std::size_t inner;
  std::size_t cols;
  bool b_shared;  // right operand shared across batches
};

MatmulDims matmul_dims(const Tensor& a, const Tensor& b, bool b_transposed, const char* op) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2 || sa.size() > 3 || sb.size() > 3 || sb.size() > sa.size()) {
    throw DimensionError(std::string(op) + ": unsupported ranks " + shape_str(sa) + " x " +
                         shape_str(sb));
  }
  MatmulDims d{};
  d.batch = sa.size() == 3 ? sa[0] : 1;
  d.rows = sa[sa.size() - 2];
  d.inner = sa[sa.size() - 1];
  d.b_shared = sb.size() < sa.size();
  if (sb.size() == 3 && sb[0] != d.batch) {
    throw DimensionError(std::string(op) + ": batch mismatch " + shape_str(sa) + " x " +
                         shape_str(sb));
  }
  const std::size_t b_r = sb[sb.size() - 2];
  const std::size_t b_c = sb[sb.size() - 1];
  const std::size_t b_inner = b_transposed ? b_c : b_r;
  d.cols = b_transposed ? b_r : b_c;
  if (b_inner != d.inner) {
    throw DimensionError(std::string(op) + ": inner extent mismatch " + shape_str(sa) + " x " +
                         shape_str(sb));
  }
  return d;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape(), promote_dtype(a.dtype(), b.dtype()));
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  out.quantize_storage();
  if (want_record({&a, &b})) {
    record(out, [a, b, out]() mutable {
      if (!out.has_grad()) return;
      const double* go = out.grad();
      const std::size_t n = out.numel();
      if (a.grad_relevant()) {
        a.ensure_grad();
        double* ga = a.grad();
        for (std::size_t i = 0; i < n; ++i) ga[i] += go[i];
      }
      if (b.grad_relevant()) {
        b.ensure_grad();
        double* gb = b.grad();
        for (std::size_t i = 0; i < n; ++i) gb[i] += go[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape(), promote_dtype(a.dtype(), b.dtype()));
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  out.quantize_storage();
  if (want_record({&a, &b})) {
    record(out, [a, b, out]() mutable {
      if (!out.has_grad()) return;
      const double* go = out.grad();
      const std::size_t n = out.numel();
      if (a.grad_relevant()) {
        a.ensure_grad();
        double* ga = a.grad();
        for (std::size_t i = 0; i < n; ++i) ga[i] += go[i];
      }
      if (b.grad_relevant()) {
        b.ensure_grad();
        double* gb = b.grad();
        for (std::size_t i = 0; i < n; ++i) gb[i] -= go[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape(), promote_dtype(a.dtype(), b.dtype()));
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  out.quantize_storage();
  if (want_record({&a, &b})) {
    record(out, [a, b, out]() mutable {
      if (!out.has_grad()) return;
      const double* go = out.grad();
      const std::size_t n = out.numel();
      if (a.grad_relevant()) {
        a.ensure_grad();
        double* ga = a.grad();
        const double* pb = b.data();
        for (std::size_t i = 0; i < n; ++i) ga[i] += go[i] * pb[i];
      }
      if (b.grad_relevant()) {
        b.ensure_grad();
        double* gb = b.grad();
        const double* pa = a.data();
        for (std::size_t i = 0; i < n; ++i) gb[i] += go[i] * pa[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  const double* pa = a.data();
  double* po = out.data();
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * s;
  out.quantize_storage();
  if (want_record({&a})) {
    record(out, [a, out, s]() mutable {
      if (!out.has_grad() || !a.grad_relevant()) return;
      a.ensure_grad();
      const double* go = out.grad();
      double* ga = a.grad();
      const std::size_t n = out.numel();
      for (std::size_t i = 0; i < n; ++i) ga[i] += go[i] * s;
    });
  }
  return out;
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  if (v.rank() != 1 || a.rank() < 1 || a.shape().back() != v.shape()[0]) {
    throw DimensionError("add_rowvec: " + shape_str(a.shape()) + " + " + shape_str(v.shape()));
  }
  Tensor out = Tensor::zeros(a.shape(), promote_dtype(a.dtype(), v.dtype()));
  const std::size_t c = v.numel();
  const std::size_t rows = a.numel() / c;
  const double* pa = a.data();
  const double* pv = v.data();
  double* po = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < c; ++i) po[r * c + i] = pa[r * c + i] + pv[i];
  }
  out.quantize_storage();
  if (want_record({&a, &v})) {
    record(out, [a, v, out]() mutable {
      if (!out.has_grad()) return;
      const double* go = out.grad();
      const std::size_t c = v.numel();
      const std::size_t rows = a.numel() / c;
      if (a.grad_relevant()) {
        a.ensure_grad();
        double* ga = a.grad();
        const std::size_t n = a.numel();
        for (std::size_t i = 0; i < n; ++i) ga[i] += go[i];
      }
      if (v.grad_relevant()) {
        v.ensure_grad();
        double* gv = v.grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t i = 0; i < c; ++i) gv[i] += go[r * c + i];
        }
      }
    });
  }
  return out;
}

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

constexpr double kGeluC0 = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC1 = 0.044715;

}  // namespace

Tensor exp(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  const double* pa = a.data();
  double* po = out.data();
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) po[i] = std::exp(pa[i]);
  out.quantize_storage();
  if (want_record({&a})) {
    record(out, [a, out]() mutable {
      if (!out.has_grad() || !a.grad_relevant()) return;
      a.ensure_grad();
      const double* go = out.grad();
      const double* y = out.data();
      double* ga = a.grad();
      const std::size_t n = out.numel();
      for (std::size_t i = 0; i < n; ++i) ga[i] += go[i] * y[i];
    });
  }
  return out;
}

Tensor log(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  const double* pa = a.data();
  double* po = out.data();
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) po[i] = std::log(pa[i]);
  out.quantize_storage();
  if (want_record({&a})) {
    record(out, [a, out]() mutable {
      if (!out.has_grad() || !a.grad_relevant()) return;
      a.ensure_grad();
      const double* go = out.grad();
      const double* x = a.data();
      double* ga = a.grad();
      const std::size_t n = out.numel();
      for (std::size_t i = 0; i < n; ++i) ga[i] += go[i] / x[i];
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  const double* pa = a.data();
  double* po = out.data();
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) po[i] = stable_sigmoid(pa[i]);
  out.quantize_storage();
  if (want_record({&a})) {
    record(out, [a, out]() mutable {
      if (!out.has_grad() || !a.grad_relevant()) return;
      a.ensure_grad();
      const double* go = out.grad();
      const double* y = out.data();
      double* ga = a.grad();
      const std::size_t n = out.numel();
      for (std::size_t i = 0; i < n; ++i) ga[i] += go[i] * y[i] * (1.0 - y[i]);
    });
  }
  return out;
}

Tensor softplus(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  const double* pa = a.data();
  double* po = out.data();
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = pa[i];
    po[i] = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
  }
  out.quantize_storage();
  if (want_record({&a})) {
    record(out, [a, out]() mutable {
      if (!out.has_grad() || !a.grad_relevant()) return;
      a.ensure_grad();
      const double* go = out.grad();
      const double* x = a.data();
      double* ga = a.grad();
      const std::size_t n = out.numel();
      for (std::size_t i = 0; i < n; ++i) ga[i] += go[i] * stable_sigmoid(x[i]);
    });
  }
  return out;
}

Tensor gelu_tanh(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  const double* pa = a.data();
  double* po = out.data();
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = pa[i];
    po[i] = 0.5 * x * (1.0 + std::tanh(kGeluC0 * (x + kGeluC1 * x * x * x)));
  }
  out.quantize_storage();
  if (want_record({&a})) {
    record(out, [a, out]() mutable {
      if (!out.has_grad() || !a.grad_relevant()) return;
      a.ensure_grad();
      const double* go = out.grad();
      const double* x = a.data();
      double* ga = a.grad();
      const std::size_t n = out.numel();
      for (std::size_t i = 0; i < n; ++i) {
        const double u = kGeluC0 * (x[i] + kGeluC1 * x[i] * x[i] * x[i]);
        const double t = std::tanh(u);
        const double du = kGeluC0 * (1.0 + 3.0 * kGeluC1 * x[i] * x[i]);
        ga[i] += go[i] * (0.5 * (1.0 + t) + 0.5 * x[i] * (1.0 - t * t) * du);
      }
    });
  }
  return out;
}

Tensor softmax_lastdim(const Tensor& x) {
  if (x.rank() < 1) throw DimensionError("softmax_lastdim: rank must be >= 1");
  const std::size_t c = x.shape().back();
  const std::size_t rows = x.numel() / c;
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = px + r * c;
    double* y = po + r * c;
    double m = in[0];
    for (std::size_t i = 1; i < c; ++i) m = std::max(m, in[i]);
    double z = 0.0;
    for (std::size_t i = 0; i < c; ++i) {
      y[i] = std::exp(in[i] - m);
      z += y[i];
    }
    const double inv = 1.0 / z;
    for (std::size_t i = 0; i < c; ++i) y[i] *= inv;
  }
  out.quantize_storage();
  if (want_record({&x})) {
    record(out, [x, out]() mutable {
      if (!out.has_grad() || !x.grad_relevant()) return;
      x.ensure_grad();
      const double* go = out.grad();
      const double* y = out.data();
      double* gx = x.grad();
      const std::size_t c = x.shape().back();
      const std::size_t rows = x.numel() / c;
      for (std::size_t r = 0; r < rows; ++r) {
        const double* yr = y + r * c;
        const double* gr = go + r * c;
        double dot = 0.0;
        for (std::size_t i = 0; i < c; ++i) dot += gr[i] * yr[i];
        double* gxr = gx + r * c;
        for (std::size_t i = 0; i < c; ++i) gxr[i] += yr[i] * (gr[i] - dot);
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
  const std::size_t c = x.shape().back();
  if (gain.rank() != 1 || bias.rank() != 1 || gain.numel() != c || bias.numel() != c) {
    throw DimensionError("layer_norm: gain/bias must have the normalized extent " +
                         std::to_string(c));
  }
  const std::size_t rows = x.numel() / c;
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  const double* px = x.data();
  const double* pg = gain.data();
  const double* pb = bias.data();
  double* po = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = px + r * c;
    double* y = po + r * c;
    double mean = 0.0;
    for (std::size_t i = 0; i < c; ++i) mean += in[i];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t i = 0; i < c; ++i) var += (in[i] - mean) * (in[i] - mean);
    var /= static_cast<double>(c);
    const double inv_std = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < c; ++i) y[i] = (in[i] - mean) * inv_std * pg[i] + pb[i];
  }
  out.quantize_storage();
  if (want_record({&x, &gain, &bias})) {
    record(out, [x, gain, bias, out, eps]() mutable {
      if (!out.has_grad()) return;
      const double* go = out.grad();
      const double* px = x.data();
      const double* pg = gain.data();
      const std::size_t c = x.shape().back();
      const std::size_t rows = x.numel() / c;
      const bool need_x = x.grad_relevant();
      const bool need_g = gain.grad_relevant();
      const bool need_b = bias.grad_relevant();
      if (need_x) x.ensure_grad();
      if (need_g) gain.ensure_grad();
      if (need_b) bias.ensure_grad();
      std::vector<double> xhat(c);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* in = px + r * c;
        const double* gr = go + r * c;
        double mean = 0.0;
        for (std::size_t i = 0; i < c; ++i) mean += in[i];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t i = 0; i < c; ++i) var += (in[i] - mean) * (in[i] - mean);
        var /= static_cast<double>(c);
        const double inv_std = 1.0 / std::sqrt(var + eps);
        for (std::size_t i = 0; i < c; ++i) xhat[i] = (in[i] - mean) * inv_std;
        if (need_g) {
          double* gg = gain.grad();
          for (std::size_t i = 0; i < c; ++i) gg[i] += gr[i] * xhat[i];
        }
        if (need_b) {
          double* gb = bias.grad();
          for (std::size_t i = 0; i < c; ++i) gb[i] += gr[i];
        }
        if (need_x) {
          double* gx = x.grad() + r * c;
          double mean_dxhat = 0.0;
          double mean_dxhat_xhat = 0.0;
          for (std::size_t i = 0; i < c; ++i) {
            const double dxhat = gr[i] * pg[i];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xhat[i];
          }
          mean_dxhat /= static_cast<double>(c);
          mean_dxhat_xhat /= static_cast<double>(c);
          for (std::size_t i = 0; i < c; ++i) {
            const double dxhat = gr[i] * pg[i];
            gx[i] += (dxhat - mean_dxhat - xhat[i] * mean_dxhat_xhat) * inv_std;
          }
        }
      }
    });
  }
  return out;
}

namespace {

Tensor matmul_impl(const Tensor& a, const Tensor& b, bool b_transposed, const char* op) {
  const MatmulDims d = matmul_dims(a, b, b_transposed, op);
  Shape out_shape = a.shape().size() == 3 ? Shape{d.batch, d.rows, d.cols} : Shape{d.rows, d.cols};
  Tensor out = Tensor::zeros(std::move(out_shape), promote_dtype(a.dtype(), b.dtype()));
  const std::size_t a_stride = d.rows * d.inner;
  const std::size_t b_stride = d.b_shared ? 0 : (b_transposed ? d.cols * d.inner : d.inner * d.cols);
  const std::size_t c_stride = d.rows * d.cols;
  for (std::size_t n = 0; n < d.batch; ++n) {
    const double* pa = a.data() + n * a_stride;
    const double* pb = b.data() + n * b_stride;
    double* pc = out.data() + n * c_stride;
    if (b_transposed) {
      mm_nt(pc, pa, pb, d.rows, d.cols, d.inner);
    } else {
      mm_nn(pc, pa, pb, d.rows, d.inner, d.cols);
    }
  }
  out.quantize_storage();
  if (want_record({&a, &b})) {
    record(out, [a, b, out, d, b_transposed, a_stride, b_stride, c_stride]() mutable {
      if (!out.has_grad()) return;
      const bool need_a = a.grad_relevant();
      const bool need_b = b.grad_relevant();
      if (need_a) a.ensure_grad();
      if (need_b) b.ensure_grad();
      for (std::size_t n = 0; n < d.batch; ++n) {
        const double* gc = out.grad() + n * c_stride;
        const double* pa = a.data() + n * a_stride;
        const double* pb = b.data() + n * b_stride;
        if (need_a) {
          double* ga = a.grad() + n * a_stride;
          if (b_transposed) {
            // dA = dC * B
            mm_nn(ga, gc, pb, d.rows, d.cols, d.inner);
          } else {
            // dA = dC * B^T
            mm_nt(ga, gc, pb, d.rows, d.inner, d.cols);
          }
        }
        if (need_b) {
          double* gb = b.grad() + n * b_stride;
          if (b_transposed) {
            // dB[k,j] = sum_i dC[i,k] A[i,j]
            mm_tn(gb, gc, pa, d.rows, d.cols, d.inner);
          } else {
            // dB[j,k] = sum_i A[i,j] dC[i,k]
            mm_tn(gb, pa, gc, d.rows, d.inner, d.cols);
          }
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) { return matmul_impl(a, b, false, "matmul"); }

Tensor matmul_nt(const Tensor& a, const Tensor& b) { return matmul_impl(a, b, true, "matmul_nt"); }

Tensor transposed_conv_2x(const Tensor& x, const Tensor& kernel) {
  const Shape& sx = x.shape();
  const Shape& sk = kernel.shape();
  if (sx.size() != 3 || sx[1] != sx[2]) {
    throw DimensionError("transposed_conv_2x: input must be [C,N,N], got " + shape_str(sx));
  }
  if (sk.size() != 4 || sk[0] != sx[0] || sk[2] != 2 || sk[3] != 2) {
    throw DimensionError("transposed_conv_2x: kernel must be [C_in,C_out,2,2], got " +
                         shape_str(sk));
  }
  const std::size_t cin = sx[0];
  const std::size_t n = sx[1];
  const std::size_t cout = sk[1];
  const std::size_t m = 2 * n;
  Tensor out = Tensor::zeros({cout, m, m}, promote_dtype(x.dtype(), kernel.dtype()));
  const double* px = x.data();
  const double* pk = kernel.data();
  double* po = out.data();
  parallel_for(cout, [=](std::size_t c0, std::size_t c1) {
    for (std::size_t co = c0; co < c1; ++co) {
      double* plane = po + co * m * m;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double* kk = pk + (ci * cout + co) * 4;
        const double* xin = px + ci * n * n;
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            const double v = xin[i * n + j];
            double* block = plane + (2 * i) * m + 2 * j;
            block[0] += v * kk[0];
            block[1] += v * kk[1];
            block[m] += v * kk[2];
            block[m + 1] += v * kk[3];
          }
        }
      }
    }
  });
  out.quantize_storage();
  if (want_record({&x, &kernel})) {
    record(out, [x, kernel, out, cin, cout, n, m]() mutable {
      if (!out.has_grad()) return;
      const double* go = out.grad();
      if (x.grad_relevant()) {
        x.ensure_grad();
        double* gx = x.grad();
        const double* pk = kernel.data();
        for (std::size_t ci = 0; ci < cin; ++ci) {
          double* gplane = gx + ci * n * n;
          for (std::size_t co = 0; co < cout; ++co) {
            const double* kk = pk + (ci * cout + co) * 4;
            const double* gout = go + co * m * m;
            for (std::size_t i = 0; i < n; ++i) {
              for (std::size_t j = 0; j < n; ++j) {
                const double* block = gout + (2 * i) * m + 2 * j;
                gplane[i * n + j] +=
                    block[0] * kk[0] + block[1] * kk[1] + block[m] * kk[2] + block[m + 1] * kk[3];
              }
            }
          }
        }
      }
      if (kernel.grad_relevant()) {
        kernel.ensure_grad();
        double* gk = kernel.grad();
        const double* px = x.data();
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const double* xin = px + ci * n * n;
          for (std::size_t co = 0; co < cout; ++co) {
            double* kk = gk + (ci * cout + co) * 4;
            const double* gout = go + co * m * m;
            for (std::size_t i = 0; i < n; ++i) {
              for (std::size_t j = 0; j < n; ++j) {
                const double v = xin[i * n + j];
                const double* block = gout + (2 * i) * m + 2 * j;
                kk[0] += v * block[0];
                kk[1] += v * block[1];
                kk[2] += v * block[m];
                kk[3] += v * block[m + 1];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
  }
  Tensor out = Tensor::from_data(std::move(shape), {a.data(), a.data() + a.numel()}, a.dtype());
  if (want_record({&a})) {
    record(out, [a, out]() mutable {
      if (!out.has_grad() || !a.grad_relevant()) return;
      a.ensure_grad();
      const double* go = out.grad();
      double* ga = a.grad();
      const std::size_t n = a.numel();
      for (std::size_t i = 0; i < n; ++i) ga[i] += go[i];
    });
  }
  return out;
}

Tensor permute3(const Tensor& a, int p0, int p1, int p2) {
  if (a.rank() != 3) throw DimensionError("permute3: rank 3 required, got " + shape_str(a.shape()));
  const int perm[3] = {p0, p1, p2};
  bool seen[3] = {false, false, false};
  for (int p : perm) {
    if (p < 0 || p > 2 || seen[p]) throw ContractError("permute3: invalid permutation");
    seen[p] = true;
  }
  const Shape& s = a.shape();
  const Shape out_shape{s[static_cast<std::size_t>(p0)], s[static_cast<std::size_t>(p1)],
                        s[static_cast<std::size_t>(p2)]};
  Tensor out = Tensor::zeros(out_shape, a.dtype());
  const double* pa = a.data();
  double* po = out.data();
  const std::size_t d0 = s[0], d1 = s[1], d2 = s[2];
  std::size_t in_idx[3];
  for (std::size_t i = 0; i < d0; ++i) {
    in_idx[0] = i;
    for (std::size_t j = 0; j < d1; ++j) {
      in_idx[1] = j;
      for (std::size_t k = 0; k < d2; ++k) {
        in_idx[2] = k;
        const std::size_t o = (in_idx[static_cast<std::size_t>(p0)] * out_shape[1] +
                               in_idx[static_cast<std::size_t>(p1)]) *
                                  out_shape[2] +
                              in_idx[static_cast<std::size_t>(p2)];
        po[o] = pa[(i * d1 + j) * d2 + k];
      }
    }
  }
  out.quantize_storage();
  if (want_record({&a})) {
    record(out, [a, out, p0, p1, p2]() mutable {
      if (!out.has_grad() || !a.grad_relevant()) return;
      a.ensure_grad();
      const double* go = out.grad();
      double* ga = a.grad();
      const Shape& s = a.shape();
      const Shape& os = out.shape();
      const std::size_t d0 = s[0], d1 = s[1], d2 = s[2];
      std::size_t in_idx[3];
      for (std::size_t i = 0; i < d0; ++i) {
        in_idx[0] = i;
        for (std::size_t j = 0; j < d1; ++j) {
          in_idx[1] = j;
          for (std::size_t k = 0; k < d2; ++k) {
            in_idx[2] = k;
            const std::size_t o = (in_idx[static_cast<std::size_t>(p0)] * os[1] +
                                   in_idx[static_cast<std::size_t>(p1)]) *
                                      os[2] +
                                  in_idx[static_cast<std::size_t>(p2)];
            ga[(i * d1 + j) * d2 + k] += go[o];
          }
        }
      }
    });
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const std::size_t cols = parts[0].shape().back();
  std::size_t rows = 0;
  Dtype dt = parts[0].dtype();
  for (const Tensor& p : parts) {
    if (p.rank() != 2 || p.shape()[1] != cols) {
      throw DimensionError("concat_rows: column extents must match");
    }
    rows += p.shape()[0];
    dt = promote_dtype(dt, p.dtype());
  }
  Tensor out = Tensor::zeros({rows, cols}, dt);
  double* po = out.data();
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    std::memcpy(po + offset, p.data(), p.numel() * sizeof(double));
    offset += p.numel();
  }
  out.quantize_storage();
  bool any = false;
  for (const Tensor& p : parts) any = any || p.grad_relevant();
  if (Tape::current() && any) {
    record(out, [parts, out]() mutable {
      if (!out.has_grad()) return;
      const double* go = out.grad();
      std::size_t offset = 0;
      for (Tensor p : parts) {
        const std::size_t n = p.numel();
        if (p.grad_relevant()) {
          p.ensure_grad();
          double* gp = p.grad();
          for (std::size_t i = 0; i < n; ++i) gp[i] += go[offset + i];
        }
        offset += n;
      }
    });
  }
  return out;
}

Tensor concat_lastdim(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[0] != b.shape()[0]) {
    throw DimensionError("concat_lastdim: row extents must match");
  }
  const std::size_t rows = a.shape()[0];
  const std::size_t ca = a.shape()[1];
  const std::size_t cb = b.shape()[1];
  Tensor out = Tensor::zeros({rows, ca + cb}, promote_dtype(a.dtype(), b.dtype()));
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::memcpy(po + r * (ca + cb), pa + r * ca, ca * sizeof(double));
    std::memcpy(po + r * (ca + cb) + ca, pb + r * cb, cb * sizeof(double));
  }
  out.quantize_storage();
  if (want_record({&a, &b})) {
    record(out, [a, b, out]() mutable {
      if (!out.has_grad()) return;
      const double* go = out.grad();
      const std::size_t rows = a.shape()[0];
      const std::size_t ca = a.shape()[1];
      const std::size_t cb = b.shape()[1];
      if (a.grad_relevant()) {
        a.ensure_grad();
        double* ga = a.grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t i = 0; i < ca; ++i) ga[r * ca + i] += go[r * (ca + cb) + i];
        }
      }
      if (b.grad_relevant()) {
        b.ensure_grad();
        double* gb = b.grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t i = 0; i < cb; ++i) gb[r * cb + i] += go[r * (ca + cb) + ca + i];
        }
      }
    });
  }
  return out;
}

Tensor slice_lastdim(const Tensor& a, std::size_t begin, std::size_t count) {
  if (a.rank() < 1) throw DimensionError("slice_lastdim: rank must be >= 1");
  const std::size_t c = a.shape().back();
  if (begin + count > c || count == 0) {
    throw DimensionError("slice_lastdim: range [" + std::to_string(begin) + "," +
                         std::to_string(begin + count) + ") out of extent " + std::to_string(c));
  }
  Shape out_shape = a.shape();
  out_shape.back() = count;
  const std::size_t rows = a.numel() / c;
  Tensor out = Tensor::zeros(out_shape, a.dtype());
  const double* pa = a.data();
  double* po = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::memcpy(po + r * count, pa + r * c + begin, count * sizeof(double));
  }
  out.quantize_storage();
  if (want_record({&a})) {
    record(out, [a, out, begin, count]() mutable {
      if (!out.has_grad() || !a.grad_relevant()) return;
      a.ensure_grad();
      const double* go = out.grad();
      double* ga = a.grad();
      const std::size_t c = a.shape().back();
      const std::size_t rows = a.numel() / c;
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < count; ++i) ga[r * c + begin + i] += go[r * count + i];
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
  if (a.rank() != 2) throw DimensionError("slice_rows: rank 2 required");
  const std::size_t rows = a.shape()[0];
  const std::size_t cols = a.shape()[1];
  if (begin + count > rows || count == 0) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + "," +
                         std::to_string(begin + count) + ") out of extent " + std::to_string(rows));
  }
  Tensor out = Tensor::zeros({count, cols}, a.dtype());
  std::memcpy(out.data(), a.data() + begin * cols, count * cols * sizeof(double));
  out.quantize_storage();
  if (want_record({&a})) {
    record(out, [a, out, begin, cols, count]() mutable {
      if (!out.has_grad() || !a.grad_relevant()) return;
      a.ensure_grad();
      const double* go = out.grad();
      double* ga = a.grad() + begin * cols;
      const std::size_t n = count * cols;
      for (std::size_t i = 0; i < n; ++i) ga[i] += go[i];
    });
  }
  return out;
}

Tensor scatter_rows(const Tensor& canvas, const Tensor& rows,
                    const std::vector<std::size_t>& row_indices) {
  if (canvas.rank() != 2 || rows.rank() != 2 || canvas.shape()[1] != rows.shape()[1]) {
    throw DimensionError("scatter_rows: column extents must match");
  }
  if (rows.shape()[0] != row_indices.size()) {
    throw DimensionError("scatter_rows: one index per source row required");
  }
  const std::size_t cols = canvas.shape()[1];
  Tensor out = canvas.clone();
  double* po = out.data();
  const double* pr = rows.data();
  for (std::size_t i = 0; i < row_indices.size(); ++i) {
    if (row_indices[i] >= canvas.shape()[0]) throw DimensionError("scatter_rows: index out of range");
    std::memcpy(po + row_indices[i] * cols, pr + i * cols, cols * sizeof(double));
  }
  out.quantize_storage();
  if (want_record({&rows})) {
    record(out, [rows, out, row_indices, cols]() mutable {
      if (!out.has_grad() || !rows.grad_relevant()) return;
      rows.ensure_grad();
      const double* go = out.grad();
      double* gr = rows.grad();
      for (std::size_t i = 0; i < row_indices.size(); ++i) {
        for (std::size_t ch = 0; ch < cols; ++ch) gr[i * cols + ch] += go[row_indices[i] * cols + ch];
      }
    });
  }
  return out;
}

Tensor sum_all(const Tensor& a) {
  double acc = 0.0;
  const double* pa = a.data();
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) acc += pa[i];
  Tensor out = Tensor::scalar(acc, a.dtype());
  if (want_record({&a})) {
    record(out, [a, out]() mutable {
      if (!out.has_grad() || !a.grad_relevant()) return;
      a.ensure_grad();
      const double g = out.grad()[0];
      double* ga = a.grad();
      const std::size_t n = a.numel();
      for (std::size_t i = 0; i < n; ++i) ga[i] += g;
    });
  }
  return out;
}

Tensor mean_all(const Tensor& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum_lastdim(const Tensor& a) {
  if (a.rank() < 1) throw DimensionError("sum_lastdim: rank must be >= 1");
  const std::size_t c = a.shape().back();
  const std::size_t rows = a.numel() / c;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  Tensor out = Tensor::zeros(out_shape, a.dtype());
  const double* pa = a.data();
  double* po = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t i = 0; i < c; ++i) acc += pa[r * c + i];
    po[r] = acc;
  }
  out.quantize_storage();
  if (want_record({&a})) {
    record(out, [a, out]() mutable {
      if (!out.has_grad() || !a.grad_relevant()) return;
      a.ensure_grad();
      const double* go = out.grad();
      double* ga = a.grad();
      const std::size_t c = a.shape().back();
      const std::size_t rows = a.numel() / c;
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < c; ++i) ga[r * c + i] += go[r];
      }
    });
  }
  return out;
}

Tensor cumsum_exclusive_lastdim(const Tensor& a) {
  if (a.rank() < 1) throw DimensionError("cumsum_exclusive_lastdim: rank must be >= 1");
  const std::size_t c = a.shape().back();
  const std::size_t rows = a.numel() / c;
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  const double* pa = a.data();
  double* po = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double run = 0.0;
    for (std::size_t i = 0; i < c; ++i) {
      po[r * c + i] = run;
      run += pa[r * c + i];
    }
  }
  out.quantize_storage();
  if (want_record({&a})) {
    record(out, [a, out]() mutable {
      if (!out.has_grad() || !a.grad_relevant()) return;
      a.ensure_grad();
      const double* go = out.grad();
      double* ga = a.grad();
      const std::size_t c = a.shape().back();
      const std::size_t rows = a.numel() / c;
      for (std::size_t r = 0; r < rows; ++r) {
        double run = 0.0;
        for (std::size_t i = c; i-- > 0;) {
          ga[r * c + i] += run;
          run += go[r * c + i];
        }
      }
    });
  }
  return out;
}

Tensor mse(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "mse");
  const double* pp = pred.data();
  const double* pt = target.data();
  const std::size_t n = pred.numel();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pp[i] - pt[i];
    acc += d * d;
  }
  Tensor out = Tensor::scalar(acc / static_cast<double>(n), promote_dtype(pred.dtype(), target.dtype()));
  if (want_record({&pred, &target})) {
    record(out, [pred, target, out]() mutable {
      if (!out.has_grad()) return;
      const double g = out.grad()[0];
      const std::size_t n = pred.numel();
      const double s = 2.0 * g / static_cast<double>(n);
      const double* pp = pred.data();
      const double* pt = target.data();
      if (pred.grad_relevant()) {
        pred.ensure_grad();
        double* gp = pred.grad();
        for (std::size_t i = 0; i < n; ++i) gp[i] += s * (pp[i] - pt[i]);
      }
      if (target.grad_relevant()) {
        target.ensure_grad();
        double* gt = target.grad();
        for (std::size_t i = 0; i < n; ++i) gt[i] -= s * (pp[i] - pt[i]);
      }
    });
  }
  return out;
}

Tensor sub_scaled_matrix(const Tensor& scores, const Tensor& dist, const Tensor& gamma) {
  if (dist.rank() != 2) throw DimensionError("sub_scaled_matrix: dist must be rank 2");
  if (gamma.numel() != 1) throw DimensionError("sub_scaled_matrix: gamma must be a scalar tensor");
  const std::size_t q = dist.shape()[0];
  const std::size_t k = dist.shape()[1];
  const Shape& ss = scores.shape();
  if (ss.size() < 2 || ss[ss.size() - 2] != q || ss[ss.size() - 1] != k) {
    throw DimensionError("sub_scaled_matrix: scores " + shape_str(ss) + " vs dist " +
                         shape_str(dist.shape()));
  }
  const std::size_t plane = q * k;
  const std::size_t batch = scores.numel() / plane;
  Tensor out = Tensor::zeros(ss, scores.dtype());
  const double g = gamma.item();
  const double* psc = scores.data();
  const double* pd = dist.data();
  double* po = out.data();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t i = 0; i < plane; ++i) po[n * plane + i] = psc[n * plane + i] - g * pd[i];
  }
  out.quantize_storage();
  if (want_record({&scores, &gamma})) {
    record(out, [scores, dist, gamma, out, plane, batch]() mutable {
      if (!out.has_grad()) return;
      const double* go = out.grad();
      if (scores.grad_relevant()) {
        scores.ensure_grad();
        double* gs = scores.grad();
        const std::size_t n = scores.numel();
        for (std::size_t i = 0; i < n; ++i) gs[i] += go[i];
      }
      if (gamma.grad_relevant()) {
        gamma.ensure_grad();
        const double* pd = dist.data();
        double acc = 0.0;
        for (std::size_t n = 0; n < batch; ++n) {
          for (std::size_t i = 0; i < plane; ++i) acc += go[n * plane + i] * pd[i];
        }
        gamma.grad()[0] -= acc;
      }
    });
  }
  return out;
}

namespace {

struct PlaneTap {
  std::size_t i0, j0;
  double wa, wb;
};

std::vector<PlaneTap> plane_taps(std::size_t m, const std::vector<std::array<double, 2>>& coords) {
  std::vector<PlaneTap> taps(coords.size());
  const double dm = static_cast<double>(m);
  for (std::size_t p = 0; p < coords.size(); ++p) {
    double fa = (coords[p][0] + 1.0) * 0.5 * dm - 0.5;
    double fb = (coords[p][1] + 1.0) * 0.5 * dm - 0.5;
    fa = std::clamp(fa, 0.0, dm - 1.0);
    fb = std::clamp(fb, 0.0, dm - 1.0);
    std::size_t i0 = std::min(static_cast<std::size_t>(fa), m - 2);
    std::size_t j0 = std::min(static_cast<std::size_t>(fb), m - 2);
    taps[p] = {i0, j0, fa - static_cast<double>(i0), fb - static_cast<double>(j0)};
  }
  return taps;
}

}  // namespace

Tensor sample_plane(const Tensor& grid, const std::vector<std::array<double, 2>>& coords) {
  const Shape& s = grid.shape();
  if (s.size() != 3 || s[0] != s[1] || s[0] < 2) {
    throw DimensionError("sample_plane: grid must be [M,M,C] with M >= 2, got " + shape_str(s));
  }
  const std::size_t m = s[0];
  const std::size_t c = s[2];
  std::vector<PlaneTap> taps = plane_taps(m, coords);
  Tensor out = Tensor::zeros({coords.size(), c}, grid.dtype());
  const double* pg = grid.data();
  double* po = out.data();
  for (std::size_t p = 0; p < taps.size(); ++p) {
    const PlaneTap& t = taps[p];
    const double w00 = (1.0 - t.wa) * (1.0 - t.wb);
    const double w01 = (1.0 - t.wa) * t.wb;
    const double w10 = t.wa * (1.0 - t.wb);
    const double w11 = t.wa * t.wb;
    const double* g00 = pg + (t.i0 * m + t.j0) * c;
    const double* g01 = g00 + c;
    const double* g10 = g00 + m * c;
    const double* g11 = g10 + c;
    double* row = po + p * c;
    for (std::size_t ch = 0; ch < c; ++ch) {
      row[ch] = w00 * g00[ch] + w01 * g01[ch] + w10 * g10[ch] + w11 * g11[ch];
    }
  }
  out.quantize_storage();
  if (want_record({&grid})) {
    record(out, [grid, out, taps = std::move(taps), m, c]() mutable {
      if (!out.has_grad() || !grid.grad_relevant()) return;
      grid.ensure_grad();
      const double* go = out.grad();
      double* gg = grid.grad();
      for (std::size_t p = 0; p < taps.size(); ++p) {
        const PlaneTap& t = taps[p];
        const double w00 = (1.0 - t.wa) * (1.0 - t.wb);
        const double w01 = (1.0 - t.wa) * t.wb;
        const double w10 = t.wa * (1.0 - t.wb);
        const double w11 = t.wa * t.wb;
        double* g00 = gg + (t.i0 * m + t.j0) * c;
        double* g01 = g00 + c;
        double* g10 = g00 + m * c;
        double* g11 = g10 + c;
        const double* row = go + p * c;
        for (std::size_t ch = 0; ch < c; ++ch) {
          g00[ch] += w00 * row[ch];
          g01[ch] += w01 * row[ch];
          g10[ch] += w10 * row[ch];
          g11[ch] += w11 * row[ch];
        }
      }
    });
  }
  return out;
}

Tensor composite_colors(const Tensor& weights, const Tensor& colors, const Tensor& t_final,
                        const std::array<double, 3>& background) {
  const Shape& sw = weights.shape();
  const Shape& sc = colors.shape();
  if (sw.size() != 2 || sc.size() != 3 || sc[0] != sw[0] || sc[1] != sw[1] || sc[2] != 3) {
    throw DimensionError("composite_colors: weights " + shape_str(sw) + " vs colors " +
                         shape_str(sc));
  }
  if (t_final.rank() != 1 || t_final.numel() != sw[0]) {
    throw DimensionError("composite_colors: t_final must have one entry per ray");
  }
  const std::size_t rays = sw[0];
  const std::size_t samples = sw[1];
  Tensor out = Tensor::zeros({rays, 3}, promote_dtype(weights.dtype(), colors.dtype()));
  const double* pw = weights.data();
  const double* pc = colors.data();
  const double* pt = t_final.data();
  double* po = out.data();
  for (std::size_t r = 0; r < rays; ++r) {
    double acc[3] = {0.0, 0.0, 0.0};
    for (std::size_t s = 0; s < samples; ++s) {
      const double w = pw[r * samples + s];
      const double* col = pc + (r * samples + s) * 3;
      acc[0] += w * col[0];
      acc[1] += w * col[1];
      acc[2] += w * col[2];
    }
    for (int ch = 0; ch < 3; ++ch) po[r * 3 + ch] = acc[ch] + pt[r] * background[static_cast<std::size_t>(ch)];
  }
  out.quantize_storage();
  if (want_record({&weights, &colors, &t_final})) {
    record(out, [weights, colors, t_final, out, background, rays, samples]() mutable {
      if (!out.has_grad()) return;
      const double* go = out.grad();
      const double* pw = weights.data();
      const double* pc = colors.data();
      if (weights.grad_relevant()) {
        weights.ensure_grad();
        double* gw = weights.grad();
        for (std::size_t r = 0; r < rays; ++r) {
          for (std::size_t s = 0; s < samples; ++s) {
            const double* col = pc + (r * samples + s) * 3;
            gw[r * samples + s] +=
                go[r * 3] * col[0] + go[r * 3 + 1] * col[1] + go[r * 3 + 2] * col[2];
          }
        }
      }
      if (colors.grad_relevant()) {
        colors.ensure_grad();
        double* gc = colors.grad();
        for (std::size_t r = 0; r < rays; ++r) {
          for (std::size_t s = 0; s < samples; ++s) {
            const double w = pw[r * samples + s];
            for (std::size_t ch = 0; ch < 3; ++ch) gc[(r * samples + s) * 3 + ch] += w * go[r * 3 + ch];
          }
        }
      }
      if (t_final.grad_relevant()) {
        t_final.ensure_grad();
        double* gt = t_final.grad();
        for (std::size_t r = 0; r < rays; ++r) {
          gt[r] += go[r * 3] * background[0] + go[r * 3 + 1] * background[1] +
                   go[r * 3 + 2] * background[2];
        }
      }
    });
  }
  return out;
}

}  // namespace plkrf::ops

#include "xinc/ops.hpp"

#include <algorithm>
#include <cmath>

#include "xinc/parallel.hpp"

namespace xinc {

std::string to_string(Activation kind) {
  switch (kind) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::gelu: return "gelu";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
  }
  return "identity";
}

Activation parse_activation(std::string_view name) {
  if (name == "identity") return Activation::identity;
  if (name == "relu") return Activation::relu;
  if (name == "gelu") return Activation::gelu;
  if (name == "tanh") return Activation::tanh;
  if (name == "sigmoid") return Activation::sigmoid;
  throw ArgumentError("unknown activation '" + std::string(name) + "'");
}

template <typename T>
T activate(T x, Activation kind) {
  switch (kind) {
    case Activation::identity: return x;
    case Activation::relu: return x > T(0) ? x : T(0);
    case Activation::gelu: {
      const T inner = T(kGeluScale) * (x + T(kGeluCubic) * x * x * x);
      return T(0.5) * x * (T(1) + std::tanh(inner));
    }
    case Activation::tanh: return std::tanh(x);
    case Activation::sigmoid: return T(1) / (T(1) + std::exp(-x));
  }
  return x;
}

template <typename T>
T activate_derivative(T x, Activation kind) {
  switch (kind) {
    case Activation::identity: return T(1);
    case Activation::relu: return x > T(0) ? T(1) : T(0);
    case Activation::gelu: {
      const T inner = T(kGeluScale) * (x + T(kGeluCubic) * x * x * x);
      const T t = std::tanh(inner);
      const T d_inner = T(kGeluScale) * (T(1) + T(3 * kGeluCubic) * x * x);
      return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * d_inner;
    }
    case Activation::tanh: {
      const T t = std::tanh(x);
      return T(1) - t * t;
    }
    case Activation::sigmoid: {
      const T s = T(1) / (T(1) + std::exp(-x));
      return s * (T(1) - s);
    }
  }
  return T(1);
}

template <typename T>
BasicTensor<T> activation(const BasicTensor<T>& input, Activation kind) {
  if (kind == Activation::identity) return input;
  BasicTensor<T> out(input.shape());
  const T* in = input.ptr();
  T* o = out.ptr();
  parallel_for(input.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) o[i] = activate(in[i], kind);
  }, 1 << 14);
  return out;
}

template <typename T>
BasicTensor<T> activation_grad(const BasicTensor<T>& pre, Activation kind) {
  BasicTensor<T> out(pre.shape());
  const T* in = pre.ptr();
  T* o = out.ptr();
  parallel_for(pre.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) o[i] = activate_derivative(in[i], kind);
  }, 1 << 14);
  return out;
}

template <typename T>
T fixed_dot(const T* a, const T* b, std::size_t n) {
  T lanes[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int l = 0; l < 8; ++l) lanes[l] += a[i + l] * b[i + l];
  }
  T tail = T(0);
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7])) + tail;
}

template <typename T>
T fixed_sum(const T* a, std::size_t n) {
  T lanes[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int l = 0; l < 8; ++l) lanes[l] += a[i + l];
  }
  T tail = T(0);
  for (; i < n; ++i) tail += a[i];
  return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7])) + tail;
}

namespace {

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_string(s));
  }
}

void require_odd_kernel(int k, const char* op) {
  if (k <= 0 || k % 2 == 0) {
    throw UnsupportedKernelError(std::string(op) + ": kernel size " + std::to_string(k) + " is not a positive odd number");
  }
}

// out[y][x] += sum_{ky,kx} w[ky][kx] * in[y + ky - p][x + kx - p], zero outside the plane.
template <typename T>
void correlate_accumulate(const T* in, std::size_t h, std::size_t w, const T* kernel, int k, T* out) {
  const long p = k / 2;
  const long H = static_cast<long>(h);
  const long W = static_cast<long>(w);
  for (long ky = 0; ky < k; ++ky) {
    const long dy = ky - p;
    const long y0 = std::max(0L, -dy);
    const long y1 = std::min(H, H - dy);
    for (long kx = 0; kx < k; ++kx) {
      const T wv = kernel[ky * k + kx];
      const long dx = kx - p;
      const long x0 = std::max(0L, -dx);
      const long x1 = std::min(W, W - dx);
      for (long y = y0; y < y1; ++y) {
        T* o = out + y * W;
        const T* s = in + (y + dy) * W + dx;
        for (long x = x0; x < x1; ++x) o[x] += wv * s[x];
      }
    }
  }
}

template <typename T>
void check_conv_shapes(const BasicTensor<T>& input, const BasicTensor<T>& kernels, const char* op) {
  require_rank(input.shape(), 3, op);
  require_rank(kernels.shape(), 4, op);
  if (kernels.dim(2) != kernels.dim(3)) {
    throw UnsupportedKernelError(std::string(op) + ": non-square kernel " + shape_string(kernels.shape()));
  }
  require_odd_kernel(static_cast<int>(kernels.dim(2)), op);
  if (kernels.dim(1) != input.dim(0)) {
    throw DimensionError(std::string(op) + ": kernel bank " + shape_string(kernels.shape()) +
                         " does not match input " + shape_string(input.shape()));
  }
}

}  // namespace

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a.shape(), 2, "matmul");
  require_rank(b.shape(), 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner dimensions differ: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  BasicTensor<T> out({m, n});
  const T* A = a.ptr();
  const T* B = b.ptr();
  T* O = out.ptr();
  parallel_for(m, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      T* o = O + i * n;
      const T* ar = A + i * k;
      for (std::size_t kk = 0; kk < k; ++kk) {
        const T aik = ar[kk];
        if (aik == T(0)) continue;
        const T* br = B + kk * n;
        for (std::size_t j = 0; j < n; ++j) o[j] += aik * br[j];
      }
    }
  }, 64);
  return out;
}

template <typename T>
BasicTensor<T> matmul_tn(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a.shape(), 2, "matmul_tn");
  require_rank(b.shape(), 2, "matmul_tn");
  if (a.dim(0) != b.dim(0)) {
    throw DimensionError("matmul_tn: row counts differ: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  BasicTensor<T> out({k, n});
  const T* A = a.ptr();
  const T* B = b.ptr();
  T* O = out.ptr();
  parallel_for(k, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = 0; i < m; ++i) {
      const T* ar = A + i * k;
      const T* br = B + i * n;
      for (std::size_t kk = begin; kk < end; ++kk) {
        const T aik = ar[kk];
        if (aik == T(0)) continue;
        T* o = O + kk * n;
        for (std::size_t j = 0; j < n; ++j) o[j] += aik * br[j];
      }
    }
  }, 8);
  return out;
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  require_rank(a.shape(), 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  BasicTensor<T> out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return out;
}

template <typename T>
void add_row_bias(BasicTensor<T>& z, const BasicTensor<T>& bias) {
  require_rank(z.shape(), 2, "add_row_bias");
  if (bias.size() != z.dim(1)) {
    throw DimensionError("add_row_bias: bias " + shape_string(bias.shape()) + " vs " + shape_string(z.shape()));
  }
  const std::size_t m = z.dim(0), n = z.dim(1);
  for (std::size_t i = 0; i < m; ++i) {
    T* row = z.ptr() + i * n;
    for (std::size_t j = 0; j < n; ++j) row[j] += bias[j];
  }
}

template <typename T>
BasicTensor<T> column_sums(const BasicTensor<T>& g) {
  require_rank(g.shape(), 2, "column_sums");
  const std::size_t m = g.dim(0), n = g.dim(1);
  BasicTensor<T> out({n});
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = g.ptr() + i * n;
    for (std::size_t j = 0; j < n; ++j) out[j] += row[j];
  }
  return out;
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernels, const BasicTensor<T>& bias) {
  check_conv_shapes(input, kernels, "conv2d");
  const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t cout = kernels.dim(0);
  const int k = static_cast<int>(kernels.dim(2));
  if (bias.size() != cout) {
    throw DimensionError("conv2d: bias " + shape_string(bias.shape()) + " does not match " +
                         std::to_string(cout) + " output channels");
  }
  const std::size_t plane = h * w;
  const std::size_t ksz = static_cast<std::size_t>(k * k);
  BasicTensor<T> out({cout, h, w});
  parallel_for(cout, [&](std::size_t begin, std::size_t end) {
    std::vector<T> partial(plane);
    for (std::size_t co = begin; co < end; ++co) {
      T* acc = out.ptr() + co * plane;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const T* kern = kernels.ptr() + (co * cin + ci) * ksz;
        const T* src = input.ptr() + ci * plane;
        if (ci == 0) {
          correlate_accumulate(src, h, w, kern, k, acc);
        } else {
          std::fill(partial.begin(), partial.end(), T(0));
          correlate_accumulate(src, h, w, kern, k, partial.data());
          for (std::size_t i = 0; i < plane; ++i) acc[i] += partial[i];
        }
      }
      const T b = bias[co];
      for (std::size_t i = 0; i < plane; ++i) acc[i] += b;
    }
  });
  return out;
}

template <typename T>
BasicTensor<T> conv2d_per_kernel(const BasicTensor<T>& input, const BasicTensor<T>& kernels) {
  check_conv_shapes(input, kernels, "conv2d_per_kernel");
  const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t cout = kernels.dim(0);
  const int k = static_cast<int>(kernels.dim(2));
  const std::size_t plane = h * w;
  const std::size_t ksz = static_cast<std::size_t>(k * k);
  BasicTensor<T> out({cout * cin, h, w});
  parallel_for(cout * cin, [&](std::size_t begin, std::size_t end) {
    for (std::size_t idx = begin; idx < end; ++idx) {
      const std::size_t ci = idx % cin;
      correlate_accumulate(input.ptr() + ci * plane, h, w, kernels.ptr() + idx * ksz, k, out.ptr() + idx * plane);
    }
  });
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                             const BasicTensor<T>& grad_output, bool want_input_grad) {
  check_conv_shapes(input, kernels, "conv2d_backward");
  const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t cout = kernels.dim(0);
  const int k = static_cast<int>(kernels.dim(2));
  if (grad_output.shape() != Shape{cout, h, w}) {
    throw DimensionError("conv2d_backward: gradient " + shape_string(grad_output.shape()) + " vs expected " +
                         shape_string({cout, h, w}));
  }
  const std::size_t plane = h * w;
  const std::size_t ksz = static_cast<std::size_t>(k * k);
  const long p = k / 2;
  const long H = static_cast<long>(h), W = static_cast<long>(w);

  ConvGrads<T> g;
  g.kernels = BasicTensor<T>(kernels.shape());
  g.bias = BasicTensor<T>({cout});
  parallel_for(cout, [&](std::size_t begin, std::size_t end) {
    for (std::size_t co = begin; co < end; ++co) {
      const T* go = grad_output.ptr() + co * plane;
      g.bias[co] = fixed_sum(go, plane);
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const T* src = input.ptr() + ci * plane;
        T* gk = g.kernels.ptr() + (co * cin + ci) * ksz;
        for (long ky = 0; ky < k; ++ky) {
          const long dy = ky - p;
          const long y0 = std::max(0L, -dy), y1 = std::min(H, H - dy);
          for (long kx = 0; kx < k; ++kx) {
            const long dx = kx - p;
            const long x0 = std::max(0L, -dx), x1 = std::min(W, W - dx);
            T acc = T(0);
            for (long y = y0; y < y1; ++y) {
              acc += fixed_dot(go + y * W + x0, src + (y + dy) * W + x0 + dx, static_cast<std::size_t>(x1 - x0));
            }
            gk[ky * k + kx] = acc;
          }
        }
      }
    }
  });

  if (want_input_grad) {
    g.input = BasicTensor<T>(input.shape());
    parallel_for(cin, [&](std::size_t begin, std::size_t end) {
      std::vector<T> flipped(ksz);
      for (std::size_t ci = begin; ci < end; ++ci) {
        T* gi = g.input.ptr() + ci * plane;
        for (std::size_t co = 0; co < cout; ++co) {
          const T* kern = kernels.ptr() + (co * cin + ci) * ksz;
          for (std::size_t t = 0; t < ksz; ++t) flipped[t] = kern[ksz - 1 - t];
          correlate_accumulate(grad_output.ptr() + co * plane, h, w, flipped.data(), k, gi);
        }
      }
    });
  }
  return g;
}

template <typename T>
BasicTensor<T> pixel_shuffle(const BasicTensor<T>& input, int r) {
  require_rank(input.shape(), 3, "pixel_shuffle");
  if (r < 1) throw ArgumentError("pixel_shuffle: factor must be >= 1, got " + std::to_string(r));
  const std::size_t rr = static_cast<std::size_t>(r) * r;
  if (input.dim(0) % rr != 0) {
    throw DimensionError("pixel_shuffle: " + std::to_string(input.dim(0)) + " channels not divisible by r^2 = " +
                         std::to_string(rr));
  }
  const std::size_t c = input.dim(0) / rr, h = input.dim(1), w = input.dim(2);
  const std::size_t R = static_cast<std::size_t>(r);
  BasicTensor<T> out({c, h * R, w * R});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t dy = 0; dy < R; ++dy)
      for (std::size_t dx = 0; dx < R; ++dx) {
        const T* src = input.ptr() + (ch * rr + dy * R + dx) * h * w;
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) out.at(ch, R * y + dy, R * x + dx) = src[y * w + x];
      }
  return out;
}

template <typename T>
BasicTensor<T> pixel_unshuffle(const BasicTensor<T>& input, int r) {
  require_rank(input.shape(), 3, "pixel_unshuffle");
  if (r < 1) throw ArgumentError("pixel_unshuffle: factor must be >= 1, got " + std::to_string(r));
  const std::size_t R = static_cast<std::size_t>(r), rr = R * R;
  if (input.dim(1) % R != 0 || input.dim(2) % R != 0) {
    throw DimensionError("pixel_unshuffle: spatial size " + shape_string(input.shape()) + " not divisible by " +
                         std::to_string(r));
  }
  const std::size_t c = input.dim(0), h = input.dim(1) / R, w = input.dim(2) / R;
  BasicTensor<T> out({c * rr, h, w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t dy = 0; dy < R; ++dy)
      for (std::size_t dx = 0; dx < R; ++dx) {
        T* dst = out.ptr() + (ch * rr + dy * R + dx) * h * w;
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) dst[y * w + x] = input.at(ch, R * y + dy, R * x + dx);
      }
  return out;
}

template <typename T>
BasicTensor<T> nearest_upsample(const BasicTensor<T>& input, int r) {
  require_rank(input.shape(), 3, "nearest_upsample");
  if (r < 1) throw ArgumentError("nearest_upsample: factor must be >= 1, got " + std::to_string(r));
  const std::size_t R = static_cast<std::size_t>(r);
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  BasicTensor<T> out({c, h * R, w * R});
  const std::size_t ow = w * R;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h * R; ++y) {
      const T* src = input.ptr() + (ch * h + y / R) * w;
      T* dst = out.ptr() + (ch * h * R + y) * ow;
      for (std::size_t x = 0; x < ow; ++x) dst[x] = src[x / R];
    }
  return out;
}

template <typename T>
BasicTensor<T> box_filter(const BasicTensor<T>& input, int k) {
  require_rank(input.shape(), 3, "box_filter");
  require_odd_kernel(k, "box_filter");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::vector<T> ones(static_cast<std::size_t>(k * k), T(1));
  BasicTensor<T> out(input.shape());
  parallel_for(c, [&](std::size_t begin, std::size_t end) {
    for (std::size_t ch = begin; ch < end; ++ch) {
      correlate_accumulate(input.ptr() + ch * h * w, h, w, ones.data(), k, out.ptr() + ch * h * w);
    }
  });
  return out;
}

#define XINC_INSTANTIATE_OPS(T)                                                                           \
  template T activate(T, Activation);                                                                     \
  template T activate_derivative(T, Activation);                                                          \
  template BasicTensor<T> activation(const BasicTensor<T>&, Activation);                                  \
  template BasicTensor<T> activation_grad(const BasicTensor<T>&, Activation);                             \
  template T fixed_dot(const T*, const T*, std::size_t);                                                  \
  template T fixed_sum(const T*, std::size_t);                                                            \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                           \
  template BasicTensor<T> matmul_tn(const BasicTensor<T>&, const BasicTensor<T>&);                        \
  template BasicTensor<T> transpose(const BasicTensor<T>&);                                               \
  template void add_row_bias(BasicTensor<T>&, const BasicTensor<T>&);                                     \
  template BasicTensor<T> column_sums(const BasicTensor<T>&);                                             \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);    \
  template BasicTensor<T> conv2d_per_kernel(const BasicTensor<T>&, const BasicTensor<T>&);                \
  template ConvGrads<T> conv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, \
                                        bool);                                                            \
  template BasicTensor<T> pixel_shuffle(const BasicTensor<T>&, int);                                      \
  template BasicTensor<T> pixel_unshuffle(const BasicTensor<T>&, int);                                    \
  template BasicTensor<T> nearest_upsample(const BasicTensor<T>&, int);                                   \
  template BasicTensor<T> box_filter(const BasicTensor<T>&, int);

XINC_INSTANTIATE_OPS(float)
XINC_INSTANTIATE_OPS(double)

}  // namespace xinc

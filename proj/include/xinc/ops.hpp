#pragma once

#include <string>
#include <string_view>

#include "xinc/tensor.hpp"

namespace xinc {

enum class Activation { identity, relu, gelu, tanh, sigmoid };

std::string to_string(Activation kind);
Activation parse_activation(std::string_view name);

/// sqrt(2 / pi), the constant of the tanh-form GELU.
inline constexpr double kGeluScale = 0.7978845608028654;
inline constexpr double kGeluCubic = 0.044715;

template <typename T>
T activate(T x, Activation kind);
/// Exact derivative of activate() with respect to its input.
template <typename T>
T activate_derivative(T x, Activation kind);

template <typename T>
BasicTensor<T> activation(const BasicTensor<T>& input, Activation kind);
/// Elementwise derivative evaluated at the pre-activation values.
template <typename T>
BasicTensor<T> activation_grad(const BasicTensor<T>& pre, Activation kind);

// Matrix products. Every output element accumulates its terms in increasing
// index order, independent of threading.

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// a^T * b for a [m x k], b [m x n].
template <typename T>
BasicTensor<T> matmul_tn(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a);

/// Adds bias[j] to every row of z [m x n].
template <typename T>
void add_row_bias(BasicTensor<T>& z, const BasicTensor<T>& bias);
/// Column sums of g [m x n].
template <typename T>
BasicTensor<T> column_sums(const BasicTensor<T>& g);

// Convolutions: cross-correlation, odd k, zero "same" padding.
// input [C_in x H x W], kernels [C_out x C_in x k x k].

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernels, const BasicTensor<T>& bias);

/// Un-summed output of every (output, input) kernel pair, shape [(C_out*C_in) x H x W]
/// with map index co * C_in + ci. No bias. conv2d() sums exactly these maps in
/// ci order before adding the bias.
template <typename T>
BasicTensor<T> conv2d_per_kernel(const BasicTensor<T>& input, const BasicTensor<T>& kernels);

template <typename T>
struct ConvGrads {
  BasicTensor<T> input;    // empty when not requested
  BasicTensor<T> kernels;
  BasicTensor<T> bias;
};

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                             const BasicTensor<T>& grad_output, bool want_input_grad);

/// Depth-to-space: out[c, r*y+dy, r*x+dx] = in[c*r*r + dy*r + dx, y, x].
template <typename T>
BasicTensor<T> pixel_shuffle(const BasicTensor<T>& input, int r);
/// Space-to-depth, the inverse permutation of pixel_shuffle.
template <typename T>
BasicTensor<T> pixel_unshuffle(const BasicTensor<T>& input, int r);

template <typename T>
BasicTensor<T> nearest_upsample(const BasicTensor<T>& input, int r);

/// Unnormalised k x k neighbourhood sum with zero padding.
template <typename T>
BasicTensor<T> box_filter(const BasicTensor<T>& input, int k);

/// Sum with eight interleaved partial accumulators combined pairwise at the end.
template <typename T>
T fixed_dot(const T* a, const T* b, std::size_t n);
template <typename T>
T fixed_sum(const T* a, std::size_t n);

}  // namespace xinc

#pragma once

// Layer primitives over FeatureMap batches: strided convolution and its
// transpose (im2col + GEMM), instance normalization, pointwise activations and
// channel concatenation. Every forward has a matching backward that takes the
// values the forward saved.

#include "rbtn/tensor.hpp"

namespace rbtn {

struct ConvGeometry {
    int kernel = 4;
    int stride = 2;
    int pad = 1;

    int output_extent(int input) const { return (input + 2 * pad - kernel) / stride + 1; }
    int transposed_extent(int input) const { return (input - 1) * stride - 2 * pad + kernel; }
};

// Unfolds the receptive fields of x into a (kernel^2 * C) x (batch * out_h * out_w)
// matrix. Row index is (ky * kernel + kx) * C + c.
template <typename T>
Matrix<T> im2col(const FeatureMap<T>& x, int out_h, int out_w, const ConvGeometry& g);

// Adjoint of im2col: scatters-and-adds columns back onto a (channels, batch, h, w) map.
template <typename T>
FeatureMap<T> col2im(const Matrix<T>& cols, int channels, int batch, int h, int w,
                     int out_h, int out_w, const ConvGeometry& g);

// weight: C_out x (kernel^2 * C_in), bias: C_out x 1.
template <typename T>
FeatureMap<T> conv2d(const FeatureMap<T>& x, const Matrix<T>& weight, const Matrix<T>& bias,
                     const ConvGeometry& g, Matrix<T>* saved_cols);

// Returns dL/dx when want_input_grad, and accumulates into grad_weight/grad_bias when non-null.
template <typename T>
FeatureMap<T> conv2d_backward(const FeatureMap<T>& grad_out, const Matrix<T>& saved_cols,
                              const Matrix<T>& weight, int in_h, int in_w, const ConvGeometry& g,
                              Matrix<T>* grad_weight, Matrix<T>* grad_bias, bool want_input_grad);

// weight: (kernel^2 * C_out) x C_in, bias: C_out x 1.
template <typename T>
FeatureMap<T> conv_transpose2d(const FeatureMap<T>& x, const Matrix<T>& weight, const Matrix<T>& bias,
                               const ConvGeometry& g);

template <typename T>
FeatureMap<T> conv_transpose2d_backward(const FeatureMap<T>& grad_out, const FeatureMap<T>& input,
                                        const Matrix<T>& weight, const ConvGeometry& g,
                                        Matrix<T>* grad_weight, Matrix<T>* grad_bias, bool want_input_grad);

// Per-sample, per-channel normalization over pixels followed by a channel affine.
template <typename T>
struct InstanceNormSaved {
    Matrix<T> normalized;  // same layout as input
    Matrix<T> inv_std;     // channels x batch
};

template <typename T>
FeatureMap<T> instance_norm(const FeatureMap<T>& x, const Matrix<T>& gamma, const Matrix<T>& beta,
                            InstanceNormSaved<T>* saved);

template <typename T>
FeatureMap<T> instance_norm_backward(const FeatureMap<T>& grad_out, const InstanceNormSaved<T>& saved,
                                     const Matrix<T>& gamma, Matrix<T>* grad_gamma, Matrix<T>* grad_beta);

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kNormEpsilon = 1e-5;

template <typename T>
void leaky_relu_inplace(FeatureMap<T>& x) {
    x.data = x.data.cwiseMax(x.data * T(kLeakySlope));
}

// grad *= leaky'(pre), expressed via the post-activation output (same sign as pre).
template <typename T>
void leaky_relu_backward_inplace(FeatureMap<T>& grad, const FeatureMap<T>& activated) {
    grad.data = (activated.data.array() > T(0)).select(grad.data, grad.data * T(kLeakySlope));
}

template <typename T>
void relu_inplace(FeatureMap<T>& x) {
    x.data = x.data.cwiseMax(T(0));
}

template <typename T>
void relu_backward_inplace(FeatureMap<T>& grad, const FeatureMap<T>& activated) {
    grad.data = (activated.data.array() > T(0)).select(grad.data, T(0));
}

template <typename T>
void tanh_inplace(FeatureMap<T>& x) {
    x.data = x.data.array().tanh().matrix();
}

template <typename T>
void tanh_backward_inplace(FeatureMap<T>& grad, const FeatureMap<T>& activated) {
    grad.data.array() *= (T(1) - activated.data.array().square());
}

template <typename T>
FeatureMap<T> concat_channels(const FeatureMap<T>& a, const FeatureMap<T>& b);

// Numerically stable log(sigmoid(z)).
template <typename T>
T log_sigmoid(T z) {
    using std::exp;
    using std::log1p;
    return z >= T(0) ? -log1p(exp(-z)) : z - log1p(exp(z));
}

template <typename T>
T sigmoid(T z) {
    using std::exp;
    if (z >= T(0)) return T(1) / (T(1) + exp(-z));
    const T e = exp(z);
    return e / (T(1) + e);
}

} // namespace rbtn

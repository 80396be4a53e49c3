#include "rbtn/ops.hpp"

#include "rbtn/error.hpp"
#include "rbtn/image.hpp"

#include <algorithm>
#include <cmath>

namespace rbtn {

template <typename T>
Matrix<T> im2col(const FeatureMap<T>& x, int out_h, int out_w, const ConvGeometry& g) {
    const int c = x.channels();
    const int k = g.kernel;
    Matrix<T> cols = Matrix<T>::Zero(Eigen::Index(k) * k * c, Eigen::Index(x.batch) * out_h * out_w);
    for (int b = 0; b < x.batch; ++b) {
        for (int oy = 0; oy < out_h; ++oy) {
            for (int ox = 0; ox < out_w; ++ox) {
                const Eigen::Index n = (Eigen::Index(b) * out_h + oy) * out_w + ox;
                T* dst = cols.col(n).data();
                for (int ky = 0; ky < k; ++ky) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= x.height) continue;
                    for (int kx = 0; kx < k; ++kx) {
                        const int ix = ox * g.stride - g.pad + kx;
                        if (ix < 0 || ix >= x.width) continue;
                        const T* src = x.data.col((Eigen::Index(b) * x.height + iy) * x.width + ix).data();
                        std::copy_n(src, c, dst + (ky * k + kx) * c);
                    }
                }
            }
        }
    }
    return cols;
}

template <typename T>
FeatureMap<T> col2im(const Matrix<T>& cols, int channels, int batch, int h, int w,
                     int out_h, int out_w, const ConvGeometry& g) {
    const int k = g.kernel;
    FeatureMap<T> out(channels, batch, h, w);
    for (int b = 0; b < batch; ++b) {
        for (int oy = 0; oy < out_h; ++oy) {
            for (int ox = 0; ox < out_w; ++ox) {
                const Eigen::Index n = (Eigen::Index(b) * out_h + oy) * out_w + ox;
                const T* src = cols.col(n).data();
                for (int ky = 0; ky < k; ++ky) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (int kx = 0; kx < k; ++kx) {
                        const int ix = ox * g.stride - g.pad + kx;
                        if (ix < 0 || ix >= w) continue;
                        T* dst = out.data.col((Eigen::Index(b) * h + iy) * w + ix).data();
                        const T* s = src + (ky * k + kx) * channels;
                        for (int c = 0; c < channels; ++c) dst[c] += s[c];
                    }
                }
            }
        }
    }
    return out;
}

template <typename T>
FeatureMap<T> conv2d(const FeatureMap<T>& x, const Matrix<T>& weight, const Matrix<T>& bias,
                     const ConvGeometry& g, Matrix<T>* saved_cols) {
    const int oh = g.output_extent(x.height);
    const int ow = g.output_extent(x.width);
    if (weight.cols() != Eigen::Index(g.kernel) * g.kernel * x.channels())
        throw ShapeError("conv2d: weight does not match input channels");
    Matrix<T> cols = im2col(x, oh, ow, g);
    FeatureMap<T> out;
    out.batch = x.batch;
    out.height = oh;
    out.width = ow;
    out.data.noalias() = weight * cols;
    out.data.colwise() += bias.col(0);
    if (saved_cols) *saved_cols = std::move(cols);
    return out;
}

template <typename T>
FeatureMap<T> conv2d_backward(const FeatureMap<T>& grad_out, const Matrix<T>& saved_cols,
                              const Matrix<T>& weight, int in_h, int in_w, const ConvGeometry& g,
                              Matrix<T>* grad_weight, Matrix<T>* grad_bias, bool want_input_grad) {
    if (grad_weight) grad_weight->noalias() += grad_out.data * saved_cols.transpose();
    if (grad_bias) grad_bias->col(0) += grad_out.data.rowwise().sum();
    if (!want_input_grad) return {};
    const int in_c = static_cast<int>(weight.cols()) / (g.kernel * g.kernel);
    Matrix<T> grad_cols = weight.transpose() * grad_out.data;
    return col2im(grad_cols, in_c, grad_out.batch, in_h, in_w, grad_out.height, grad_out.width, g);
}

template <typename T>
FeatureMap<T> conv_transpose2d(const FeatureMap<T>& x, const Matrix<T>& weight, const Matrix<T>& bias,
                               const ConvGeometry& g) {
    if (weight.cols() != x.channels()) throw ShapeError("conv_transpose2d: weight does not match input channels");
    const int out_c = static_cast<int>(weight.rows()) / (g.kernel * g.kernel);
    const int oh = g.transposed_extent(x.height);
    const int ow = g.transposed_extent(x.width);
    Matrix<T> cols = weight * x.data;
    FeatureMap<T> out = col2im(cols, out_c, x.batch, oh, ow, x.height, x.width, g);
    out.data.colwise() += bias.col(0);
    return out;
}

template <typename T>
FeatureMap<T> conv_transpose2d_backward(const FeatureMap<T>& grad_out, const FeatureMap<T>& input,
                                        const Matrix<T>& weight, const ConvGeometry& g,
                                        Matrix<T>* grad_weight, Matrix<T>* grad_bias, bool want_input_grad) {
    Matrix<T> grad_cols = im2col(grad_out, input.height, input.width, g);
    if (grad_weight) grad_weight->noalias() += grad_cols * input.data.transpose();
    if (grad_bias) grad_bias->col(0) += grad_out.data.rowwise().sum();
    if (!want_input_grad) return {};
    FeatureMap<T> grad_in;
    grad_in.batch = input.batch;
    grad_in.height = input.height;
    grad_in.width = input.width;
    grad_in.data.noalias() = weight.transpose() * grad_cols;
    return grad_in;
}

template <typename T>
FeatureMap<T> instance_norm(const FeatureMap<T>& x, const Matrix<T>& gamma, const Matrix<T>& beta,
                            InstanceNormSaved<T>* saved) {
    const int c = x.channels();
    FeatureMap<T> out(c, x.batch, x.height, x.width);
    Matrix<T> normalized(x.data.rows(), x.data.cols());
    Matrix<T> inv_std(c, x.batch);
    const auto n = T(x.pixels());
    for (int b = 0; b < x.batch; ++b) {
        const auto block = x.sample(b);
        const Vector<T> mean = block.rowwise().sum() / n;
        auto centered = normalized.middleCols(Eigen::Index(b) * x.pixels(), x.pixels());
        centered = block.colwise() - mean;
        const Vector<T> var = centered.array().square().rowwise().sum() / n;
        const Vector<T> istd = (var.array() + T(kNormEpsilon)).rsqrt();
        inv_std.col(b) = istd;
        centered = istd.asDiagonal() * centered;
        out.sample(b) = (gamma.col(0).asDiagonal() * centered).colwise() + beta.col(0);
    }
    if (saved) {
        saved->normalized = std::move(normalized);
        saved->inv_std = std::move(inv_std);
    }
    return out;
}

template <typename T>
FeatureMap<T> instance_norm_backward(const FeatureMap<T>& grad_out, const InstanceNormSaved<T>& saved,
                                     const Matrix<T>& gamma, Matrix<T>* grad_gamma, Matrix<T>* grad_beta) {
    FeatureMap<T> grad_in(grad_out.channels(), grad_out.batch, grad_out.height, grad_out.width);
    const int p = grad_out.pixels();
    const auto n = T(p);
    for (int b = 0; b < grad_out.batch; ++b) {
        const auto dy = grad_out.sample(b);
        const auto xhat = saved.normalized.middleCols(Eigen::Index(b) * p, p);
        if (grad_gamma) grad_gamma->col(0) += dy.cwiseProduct(xhat).rowwise().sum();
        if (grad_beta) grad_beta->col(0) += dy.rowwise().sum();
        const Matrix<T> dxhat = gamma.col(0).asDiagonal() * dy;
        const Vector<T> sum_dxhat = dxhat.rowwise().sum();
        const Vector<T> sum_dxhat_xhat = dxhat.cwiseProduct(xhat).rowwise().sum();
        Matrix<T> g = (dxhat * n).colwise() - sum_dxhat;
        g -= sum_dxhat_xhat.asDiagonal() * xhat;
        grad_in.sample(b) = (saved.inv_std.col(b) / n).asDiagonal() * g;
    }
    return grad_in;
}

template <typename T>
FeatureMap<T> concat_channels(const FeatureMap<T>& a, const FeatureMap<T>& b) {
    if (a.batch != b.batch || a.height != b.height || a.width != b.width)
        throw ShapeError("concat_channels: spatial shapes differ");
    FeatureMap<T> out;
    out.batch = a.batch;
    out.height = a.height;
    out.width = a.width;
    out.data.resize(a.data.rows() + b.data.rows(), a.data.cols());
    out.data.topRows(a.data.rows()) = a.data;
    out.data.bottomRows(b.data.rows()) = b.data;
    return out;
}

#define RBTN_INSTANTIATE_OPS(T)                                                                              \
    template Matrix<T> im2col(const FeatureMap<T>&, int, int, const ConvGeometry&);                          \
    template FeatureMap<T> col2im(const Matrix<T>&, int, int, int, int, int, int, const ConvGeometry&);      \
    template FeatureMap<T> conv2d(const FeatureMap<T>&, const Matrix<T>&, const Matrix<T>&,                  \
                                  const ConvGeometry&, Matrix<T>*);                                          \
    template FeatureMap<T> conv2d_backward(const FeatureMap<T>&, const Matrix<T>&, const Matrix<T>&, int,    \
                                           int, const ConvGeometry&, Matrix<T>*, Matrix<T>*, bool);          \
    template FeatureMap<T> conv_transpose2d(const FeatureMap<T>&, const Matrix<T>&, const Matrix<T>&,        \
                                            const ConvGeometry&);                                            \
    template FeatureMap<T> conv_transpose2d_backward(const FeatureMap<T>&, const FeatureMap<T>&,             \
                                                     const Matrix<T>&, const ConvGeometry&, Matrix<T>*,      \
                                                     Matrix<T>*, bool);                                      \
    template FeatureMap<T> instance_norm(const FeatureMap<T>&, const Matrix<T>&, const Matrix<T>&,           \
                                         InstanceNormSaved<T>*);                                             \
    template FeatureMap<T> instance_norm_backward(const FeatureMap<T>&, const InstanceNormSaved<T>&,         \
                                                  const Matrix<T>&, Matrix<T>*, Matrix<T>*);                 \
    template FeatureMap<T> concat_channels(const FeatureMap<T>&, const FeatureMap<T>&);

RBTN_INSTANTIATE_OPS(float)
RBTN_INSTANTIATE_OPS(double)

// ---- image helpers --------------------------------------------------------

Domain parse_domain(const std::string& s) {
    if (s == "face" || s == "FACE") return Domain::face;
    if (s == "sketch" || s == "SKETCH") return Domain::sketch;
    throw UsageError("unknown domain '" + s + "' (expected face or sketch)");
}

Mask Mask::complement() const {
    Mask out(size);
    out.map = (map == 0).cast<std::uint8_t>();
    return out;
}

bool Mask::overlaps(const Mask& o) const {
    if (size != o.size) throw ShapeError("mask sizes differ");
    return ((map != 0) && (o.map != 0)).any();
}

Mask Mask::rect(int size, int x0, int y0, int w, int h) {
    Mask m(size);
    for (int y = std::max(0, y0); y < std::min(size, y0 + h); ++y)
        for (int x = std::max(0, x0); x < std::min(size, x0 + w); ++x) m.at(y, x) = 1;
    return m;
}

template <typename T>
FeatureMap<T> to_batch(std::span<const Image<T>* const> images) {
    if (images.empty()) throw ShapeError("to_batch: empty image list");
    const int s = images.front()->size;
    FeatureMap<T> out(3, static_cast<int>(images.size()), s, s);
    for (std::size_t b = 0; b < images.size(); ++b) {
        if (images[b]->size != s) throw ShapeError("to_batch: image sizes differ");
        out.sample(static_cast<int>(b)) = images[b]->pixels;
    }
    return out;
}

template <typename T>
FeatureMap<T> to_batch(const Image<T>& image) {
    const Image<T>* one[] = {&image};
    return to_batch<T>(std::span<const Image<T>* const>(one));
}

template <typename T>
FeatureMap<T> pair_batch(std::span<const Image<T>* const> faces, std::span<const Image<T>* const> sketches) {
    if (faces.size() != sketches.size()) throw ShapeError("pair_batch: list lengths differ");
    return concat_channels(to_batch<T>(faces), to_batch<T>(sketches));
}

template <typename T>
Image<T> from_batch(const FeatureMap<T>& batch, int b, Domain domain) {
    if (batch.channels() != 3 || batch.height != batch.width) throw ShapeError("from_batch: not an RGB square batch");
    Image<T> img;
    img.size = batch.height;
    img.domain = domain;
    img.pixels = batch.sample(b);
    return img;
}

template <typename T>
double mean_abs_diff(const Image<T>& a, const Image<T>& b) {
    if (a.size != b.size) throw ShapeError("mean_abs_diff: sizes differ");
    return static_cast<double>((a.pixels - b.pixels).cwiseAbs().mean());
}

#define RBTN_INSTANTIATE_IMAGE(T)                                                                       \
    template FeatureMap<T> to_batch(std::span<const Image<T>* const>);                                  \
    template FeatureMap<T> to_batch(const Image<T>&);                                                   \
    template FeatureMap<T> pair_batch(std::span<const Image<T>* const>, std::span<const Image<T>* const>); \
    template Image<T> from_batch(const FeatureMap<T>&, int, Domain);                                    \
    template double mean_abs_diff(const Image<T>&, const Image<T>&);

RBTN_INSTANTIATE_IMAGE(float)
RBTN_INSTANTIATE_IMAGE(double)

} // namespace rbtn

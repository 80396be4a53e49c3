#include "rbtn/networks.hpp"

#include "rbtn/error.hpp"
#include "rbtn/seed.hpp"

#include <cmath>
#include <string>

namespace rbtn {

namespace {

constexpr ConvGeometry kGeom{4, 2, 1};
constexpr double kInitStd = 0.02;

template <typename T>
Matrix<T> random_normal(Eigen::Index rows, Eigen::Index cols, double mean, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(mean, stddev);
    Matrix<T> m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = static_cast<T>(dist(rng));
    return m;
}


template <typename T>
void check_shape(const FeatureMap<T>& x, int channels, int size, const char* who) {
    if (x.channels() != channels || x.height != size || x.width != size)
        throw ShapeError(std::string(who) + ": expected " + std::to_string(channels) + "x" + std::to_string(size) +
                         "x" + std::to_string(size) + " input, got " + std::to_string(x.channels()) + "x" +
                         std::to_string(x.height) + "x" + std::to_string(x.width));
}

} // namespace

void ArchConfig::validate() const {
    if (image_size <= 0 || depth <= 0 || base_channels <= 0)
        throw ConfigError("arch: image_size, depth and base_channels must be positive");
    if ((image_size & (image_size - 1)) != 0 || image_size < 4)
        throw ConfigError("arch: image_size must be a power of two >= 4, got " + std::to_string(image_size));
    if (depth > 30 || (image_size >> depth) < 1)
        throw ConfigError("arch: image_size / 2^depth must be >= 1 (image_size=" + std::to_string(image_size) +
                          ", depth=" + std::to_string(depth) + ")");
}

int ArchConfig::stage_channels(int stage) const { return base_channels << std::min(stage, 3); }

// ---- ParamSet ---------------------------------------------------------------

template <typename T>
Eigen::Index ParamSet<T>::scalar_count() const {
    Eigen::Index n = 0;
    for (const auto& v : values) n += v.size();
    return n;
}

template <typename T>
std::size_t ParamSet<T>::add(std::string name, Matrix<T> value) {
    names.push_back(std::move(name));
    values.push_back(std::move(value));
    return values.size() - 1;
}

template <typename T>
ParamSet<T> ParamSet<T>::zeros_like() const {
    ParamSet out;
    out.names = names;
    for (const auto& v : values) out.values.push_back(Matrix<T>::Zero(v.rows(), v.cols()));
    return out;
}

template <typename T>
void ParamSet<T>::set_zero() {
    for (auto& v : values) v.setZero();
}

template <typename T>
bool ParamSet<T>::all_finite() const {
    for (const auto& v : values)
        if (!v.allFinite()) return false;
    return true;
}

template <typename T>
bool ParamSet<T>::operator==(const ParamSet& o) const {
    if (names != o.names || values.size() != o.values.size()) return false;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (values[i].rows() != o.values[i].rows() || values[i].cols() != o.values[i].cols()) return false;
        if (values[i] != o.values[i]) return false;
    }
    return true;
}

// ---- Generator --------------------------------------------------------------

template <typename T>
Generator<T>::Generator(const ArchConfig& arch, std::uint64_t seed) : arch_(arch) {
    arch.validate();
    std::mt19937_64 rng(seed);
    const int k2 = kGeom.kernel * kGeom.kernel;
    int in_c = 3;
    for (int i = 0; i < arch.depth; ++i) {
        const int out_c = arch.stage_channels(i);
        params_.add("enc" + std::to_string(i) + ".weight", random_normal<T>(out_c, Eigen::Index(k2) * in_c, 0.0, kInitStd, rng));
        params_.add("enc" + std::to_string(i) + ".bias", Matrix<T>::Zero(out_c, 1));
        in_c = out_c;
    }
    for (int i = 0; i < arch.depth; ++i) {
        const int ic = decoder_input_channels(i);
        const int oc = decoder_output_channels(i);
        const std::string p = "dec" + std::to_string(i);
        params_.add(p + ".weight", random_normal<T>(Eigen::Index(k2) * oc, ic, 0.0, kInitStd, rng));
        params_.add(p + ".bias", Matrix<T>::Zero(oc, 1));
        if (i + 1 < arch.depth) {
            params_.add(p + ".norm.gamma", random_normal<T>(oc, 1, 1.0, kInitStd, rng));
            params_.add(p + ".norm.beta", Matrix<T>::Zero(oc, 1));
        }
    }
}

template <typename T>
std::size_t Generator<T>::dec_base(int i) const {
    return 2 * std::size_t(arch_.depth) + 4 * std::size_t(i);
}

template <typename T>
int Generator<T>::encoder_output_channels(int stage) const {
    return arch_.stage_channels(stage);
}

template <typename T>
int Generator<T>::decoder_output_channels(int stage) const {
    return stage + 1 < arch_.depth ? arch_.stage_channels(arch_.depth - 2 - stage) : 3;
}

template <typename T>
int Generator<T>::decoder_input_channels(int stage) const {
    if (stage == 0) return encoder_output_channels(arch_.depth - 1);
    return decoder_output_channels(stage - 1) + encoder_output_channels(arch_.depth - 1 - stage);
}

template <typename T>
FeatureMap<T> Generator<T>::forward(const FeatureMap<T>& x, Tape* tape) const {
    check_shape(x, 3, arch_.image_size, "generator");
    const int d = arch_.depth;
    std::vector<FeatureMap<T>> enc(d);
    std::vector<Matrix<T>> cols(tape ? d : 0);
    const FeatureMap<T>* h = &x;
    for (int i = 0; i < d; ++i) {
        enc[i] = conv2d(*h, params_.values[enc_w(i)], params_.values[enc_w(i) + 1], kGeom, tape ? &cols[i] : nullptr);
        leaky_relu_inplace(enc[i]);
        h = &enc[i];
    }
    FeatureMap<T> cur;
    for (int i = 0; i < d; ++i) {
        FeatureMap<T> in = i == 0 ? enc[d - 1] : concat_channels(cur, enc[d - 1 - i]);
        const std::size_t base = dec_base(i);
        FeatureMap<T> u = conv_transpose2d(in, params_.values[base], params_.values[base + 1], kGeom);
        if (i + 1 == d) {
            tanh_inplace(u);
            cur = std::move(u);
        } else {
            InstanceNormSaved<T> saved;
            cur = instance_norm(u, params_.values[base + 2], params_.values[base + 3], tape ? &saved : nullptr);
            relu_inplace(cur);
            if (tape) tape->dec_norm.push_back(std::move(saved));
        }
        if (tape) {
            tape->dec_in.push_back(std::move(in));
            tape->dec_out.push_back(cur);
        }
    }
    if (tape) {
        tape->input = x;
        tape->enc_cols = std::move(cols);
        tape->enc_out = std::move(enc);
    }
    return cur;
}

template <typename T>
FeatureMap<T> Generator<T>::backward(const Tape& tape, const FeatureMap<T>& grad_out, ParamSet<T>* grads,
                                     bool want_input_grad) const {
    const int d = arch_.depth;
    auto grad_ptr = [&](std::size_t idx) -> Matrix<T>* { return grads ? &grads->values[idx] : nullptr; };

    std::vector<FeatureMap<T>> grad_enc(d);
    for (int i = 0; i < d; ++i) {
        const auto& e = tape.enc_out[i];
        grad_enc[i] = FeatureMap<T>(e.channels(), e.batch, e.height, e.width);
    }

    FeatureMap<T> g = grad_out;
    for (int i = d - 1; i >= 0; --i) {
        const std::size_t base = dec_base(i);
        if (i + 1 == d) {
            tanh_backward_inplace(g, tape.dec_out[i]);
        } else {
            relu_backward_inplace(g, tape.dec_out[i]);
            g = instance_norm_backward(g, tape.dec_norm[i], params_.values[base + 2], grad_ptr(base + 2),
                                       grad_ptr(base + 3));
        }
        FeatureMap<T> gin = conv_transpose2d_backward(g, tape.dec_in[i], params_.values[base], kGeom,
                                                      grad_ptr(base), grad_ptr(base + 1), true);
        if (i == 0) {
            grad_enc[d - 1].data += gin.data;
        } else {
            const int top = decoder_output_channels(i - 1);
            grad_enc[d - 1 - i].data += gin.data.bottomRows(gin.data.rows() - top);
            g.data = gin.data.topRows(top);
            g.batch = gin.batch;
            g.height = gin.height;
            g.width = gin.width;
        }
    }

    FeatureMap<T> grad_in;
    for (int i = d - 1; i >= 0; --i) {
        leaky_relu_backward_inplace(grad_enc[i], tape.enc_out[i]);
        const int in_size = i == 0 ? arch_.image_size : tape.enc_out[i - 1].height;
        const bool need = i > 0 || want_input_grad;
        FeatureMap<T> gin = conv2d_backward(grad_enc[i], tape.enc_cols[i], params_.values[enc_w(i)], in_size, in_size,
                                            kGeom, grad_ptr(enc_w(i)), grad_ptr(enc_w(i) + 1), need);
        if (i > 0)
            grad_enc[i - 1].data += gin.data;
        else if (want_input_grad)
            grad_in = std::move(gin);
    }
    return grad_in;
}

// ---- Discriminator ----------------------------------------------------------

template <typename T>
Discriminator<T>::Discriminator(const ArchConfig& arch, std::uint64_t seed) : arch_(arch) {
    arch.validate();
    std::mt19937_64 rng(seed);
    const int k2 = kGeom.kernel * kGeom.kernel;
    int in_c = 6;
    for (int i = 0; i < arch.depth; ++i) {
        const int out_c = arch.stage_channels(i);
        params_.add("conv" + std::to_string(i) + ".weight", random_normal<T>(out_c, Eigen::Index(k2) * in_c, 0.0, kInitStd, rng));
        params_.add("conv" + std::to_string(i) + ".bias", Matrix<T>::Zero(out_c, 1));
        in_c = out_c;
    }
    const int final_size = arch.bottleneck_size();
    params_.add("fc.weight", random_normal<T>(1, Eigen::Index(in_c) * final_size * final_size, 0.0, kInitStd, rng));
    params_.add("fc.bias", Matrix<T>::Zero(1, 1));
}

template <typename T>
Matrix<T> Discriminator<T>::forward(const FeatureMap<T>& pair, Tape* tape) const {
    check_shape(pair, 6, arch_.image_size, "discriminator");
    const int d = arch_.depth;
    std::vector<FeatureMap<T>> outs(d);
    std::vector<Matrix<T>> cols(tape ? d : 0);
    const FeatureMap<T>* h = &pair;
    for (int i = 0; i < d; ++i) {
        outs[i] = conv2d(*h, params_.values[2 * i], params_.values[2 * i + 1], kGeom, tape ? &cols[i] : nullptr);
        leaky_relu_inplace(outs[i]);
        h = &outs[i];
    }
    const FeatureMap<T>& last = outs[d - 1];
    const Eigen::Index flat = Eigen::Index(last.channels()) * last.pixels();
    Eigen::Map<const Matrix<T>> features(last.data.data(), flat, last.batch);
    Matrix<T> logits = params_.values[2 * d] * features;
    logits.array() += params_.values[2 * d + 1](0, 0);
    if (tape) {
        tape->cols = std::move(cols);
        tape->out = std::move(outs);
        tape->input_size = pair.height;
    }
    return logits;
}

template <typename T>
FeatureMap<T> Discriminator<T>::backward(const Tape& tape, const Matrix<T>& grad_logits, ParamSet<T>* grads,
                                         bool want_input_grad) const {
    const int d = arch_.depth;
    auto grad_ptr = [&](std::size_t idx) -> Matrix<T>* { return grads ? &grads->values[idx] : nullptr; };
    const FeatureMap<T>& last = tape.out[d - 1];
    const Eigen::Index flat = Eigen::Index(last.channels()) * last.pixels();
    Eigen::Map<const Matrix<T>> features(last.data.data(), flat, last.batch);
    if (grads) {
        grads->values[2 * d].noalias() += grad_logits * features.transpose();
        grads->values[2 * d + 1](0, 0) += grad_logits.sum();
    }
    FeatureMap<T> g;
    g.batch = last.batch;
    g.height = last.height;
    g.width = last.width;
    const Matrix<T> grad_flat = params_.values[2 * d].transpose() * grad_logits;  // flat x batch
    g.data = Eigen::Map<const Matrix<T>>(grad_flat.data(), last.channels(), Eigen::Index(last.batch) * last.pixels());

    for (int i = d - 1; i >= 0; --i) {
        leaky_relu_backward_inplace(g, tape.out[i]);
        const int in_size = i == 0 ? tape.input_size : tape.out[i - 1].height;
        const bool need = i > 0 || want_input_grad;
        g = conv2d_backward(g, tape.cols[i], params_.values[2 * i], in_size, in_size, kGeom, grad_ptr(2 * i),
                            grad_ptr(2 * i + 1), need);
        if (!need) return {};
    }
    return g;
}

// ---- bundle -----------------------------------------------------------------

template <typename T>
template <typename U>
ModelBundle<U> ModelBundle<T>::cast() const {
    ModelBundle<U> out = build_models<U>(arch);
    out.f.params() = f.params().template cast<U>();
    out.F.params() = F.params().template cast<U>();
    out.D.params() = D.params().template cast<U>();
    return out;
}

template <typename T>
ModelBundle<T> build_models(const ArchConfig& config) {
    config.validate();
    ModelBundle<T> b;
    b.arch = config;
    b.f = Generator<T>(config, mix_seed(config.seed, 1));
    b.F = Generator<T>(config, mix_seed(config.seed, 2));
    b.D = Discriminator<T>(config, mix_seed(config.seed, 3));
    return b;
}

namespace {

template <typename T>
void check_image(const Image<T>& x, Domain want, int size, const char* who) {
    if (x.domain != want)
        throw UsageError(std::string(who) + ": expected a " + to_string(want) + " image, got " + to_string(x.domain));
    if (x.size != size || x.pixels.rows() != 3 || x.pixels.cols() != Eigen::Index(size) * size)
        throw ShapeError(std::string(who) + ": expected " + std::to_string(size) + "x" + std::to_string(size) +
                         " image, got size " + std::to_string(x.size));
}

} // namespace

template <typename T>
Image<T> forward_f(const Image<T>& face, const ModelBundle<T>& bundle) {
    check_image(face, Domain::face, bundle.arch.image_size, "forward_f");
    return from_batch(bundle.f.forward(to_batch(face)), 0, Domain::sketch);
}

template <typename T>
Image<T> forward_F(const Image<T>& sketch, const ModelBundle<T>& bundle) {
    check_image(sketch, Domain::sketch, bundle.arch.image_size, "forward_F");
    return from_batch(bundle.F.forward(to_batch(sketch)), 0, Domain::face);
}

template <typename T>
std::vector<Image<T>> forward_batch(const Generator<T>& g, std::span<const Image<T>* const> inputs, Domain out) {
    std::vector<Image<T>> result;
    if (inputs.empty()) return result;
    const FeatureMap<T> y = g.forward(to_batch<T>(inputs));
    result.reserve(inputs.size());
    for (int b = 0; b < y.batch; ++b) result.push_back(from_batch(y, b, out));
    return result;
}

template <typename T>
T discriminator_logit(const Image<T>& face, const Image<T>& sketch, const ModelBundle<T>& bundle) {
    check_image(face, Domain::face, bundle.arch.image_size, "discriminate");
    check_image(sketch, Domain::sketch, bundle.arch.image_size, "discriminate");
    return bundle.D.forward(concat_channels(to_batch(face), to_batch(sketch)))(0, 0);
}

template <typename T>
T discriminate(const Image<T>& face, const Image<T>& sketch, const ModelBundle<T>& bundle) {
    return sigmoid(discriminator_logit(face, sketch, bundle));
}

namespace {

template <typename T>
FeatureMap<T> grad_log_d_input(const Image<T>& face, const Image<T>& sketch, const ModelBundle<T>& bundle) {
    check_image(face, Domain::face, bundle.arch.image_size, "grad_D");
    check_image(sketch, Domain::sketch, bundle.arch.image_size, "grad_D");
    typename Discriminator<T>::Tape tape;
    const Matrix<T> logit = bundle.D.forward(concat_channels(to_batch(face), to_batch(sketch)), &tape);
    // d log sigmoid(z) / dz = sigmoid(-z)
    Matrix<T> dz(1, 1);
    dz(0, 0) = sigmoid(-logit(0, 0));
    FeatureMap<T> g = bundle.D.backward(tape, dz, nullptr, true);
    if (!g.data.allFinite()) throw NumericError("grad_D: non-finite discriminator gradient");
    return g;
}

} // namespace

template <typename T>
Image<T> grad_D_wrt_sketch(const Image<T>& face, const Image<T>& sketch, const ModelBundle<T>& bundle) {
    const FeatureMap<T> g = grad_log_d_input(face, sketch, bundle);
    Image<T> out;
    out.size = sketch.size;
    out.domain = Domain::sketch;
    out.pixels = g.data.bottomRows(3);
    return out;
}

template <typename T>
Image<T> grad_D_wrt_face(const Image<T>& face, const Image<T>& sketch, const ModelBundle<T>& bundle) {
    const FeatureMap<T> g = grad_log_d_input(face, sketch, bundle);
    Image<T> out;
    out.size = face.size;
    out.domain = Domain::face;
    out.pixels = g.data.topRows(3);
    return out;
}

#define RBTN_INSTANTIATE_NETWORKS(T)                                                                        \
    template struct ParamSet<T>;                                                                            \
    template class Generator<T>;                                                                            \
    template class Discriminator<T>;                                                                        \
    template ModelBundle<T> build_models<T>(const ArchConfig&);                                             \
    template Image<T> forward_f(const Image<T>&, const ModelBundle<T>&);                                    \
    template Image<T> forward_F(const Image<T>&, const ModelBundle<T>&);                                    \
    template std::vector<Image<T>> forward_batch(const Generator<T>&, std::span<const Image<T>* const>, Domain); \
    template T discriminate(const Image<T>&, const Image<T>&, const ModelBundle<T>&);                       \
    template T discriminator_logit(const Image<T>&, const Image<T>&, const ModelBundle<T>&);                \
    template Image<T> grad_D_wrt_sketch(const Image<T>&, const Image<T>&, const ModelBundle<T>&);           \
    template Image<T> grad_D_wrt_face(const Image<T>&, const Image<T>&, const ModelBundle<T>&);

RBTN_INSTANTIATE_NETWORKS(float)
RBTN_INSTANTIATE_NETWORKS(double)

template ModelBundle<double> ModelBundle<float>::cast<double>() const;
template ModelBundle<float> ModelBundle<double>::cast<float>() const;
template ModelBundle<float> ModelBundle<float>::cast<float>() const;
template ModelBundle<double> ModelBundle<double>::cast<double>() const;

} // namespace rbtn

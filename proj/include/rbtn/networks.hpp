#pragma once

#include "rbtn/image.hpp"
#include "rbtn/ops.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace rbtn {

// Topology of the three networks. Channel width of stage i is
// base_channels * 2^min(i, 3).
struct ArchConfig {
    int image_size = 64;
    int depth = 4;
    int base_channels = 8;
    std::uint64_t seed = 0;

    void validate() const;
    int stage_channels(int stage) const;
    int bottleneck_size() const { return image_size >> depth; }
    bool operator==(const ArchConfig&) const = default;
};

// Named, ordered parameter collection.
template <typename T>
struct ParamSet {
    std::vector<std::string> names;
    std::vector<Matrix<T>> values;

    std::size_t size() const { return values.size(); }
    Eigen::Index scalar_count() const;
    std::size_t add(std::string name, Matrix<T> value);
    ParamSet zeros_like() const;
    void set_zero();
    bool all_finite() const;

    template <typename U>
    ParamSet<U> cast() const {
        ParamSet<U> out;
        out.names = names;
        for (const auto& v : values) out.values.push_back(v.template cast<U>());
        return out;
    }

    bool operator==(const ParamSet& o) const;
};

// Mirror-symmetric Conv-Deconv transformation network with skip concatenation.
//
// Encoder stage i: stride-2 conv + leaky ReLU, H/2^(i+1) spatial.
// Decoder stage i: stride-2 transposed conv, then instance norm + ReLU, or tanh
// on the last stage. Decoder stage i >= 1 consumes concat(decoder i-1 output,
// encoder stage depth-1-i output).
template <typename T>
class Generator {
public:
    struct Tape {
        FeatureMap<T> input;
        std::vector<Matrix<T>> enc_cols;
        std::vector<FeatureMap<T>> enc_out;
        std::vector<FeatureMap<T>> dec_in;
        std::vector<InstanceNormSaved<T>> dec_norm;
        std::vector<FeatureMap<T>> dec_out;
    };

    Generator() = default;
    Generator(const ArchConfig& arch, std::uint64_t seed);

    FeatureMap<T> forward(const FeatureMap<T>& x, Tape* tape = nullptr) const;

    // Backpropagates grad_out (dL/d output). Accumulates parameter gradients into
    // grads when non-null; returns dL/d input when want_input_grad.
    FeatureMap<T> backward(const Tape& tape, const FeatureMap<T>& grad_out, ParamSet<T>* grads,
                           bool want_input_grad = false) const;

    const ParamSet<T>& params() const { return params_; }
    ParamSet<T>& params() { return params_; }
    const ArchConfig& arch() const { return arch_; }

    int encoder_output_channels(int stage) const;
    int decoder_input_channels(int stage) const;
    int decoder_output_channels(int stage) const;

private:
    std::size_t enc_w(int i) const { return 2 * std::size_t(i); }
    std::size_t dec_base(int i) const;

    ArchConfig arch_;
    ParamSet<T> params_;
};

// Pair discriminator: 6-channel (face, sketch) input, stride-2 conv stages with
// leaky ReLU, then a single-output fully-connected layer. forward returns logits;
// probabilities are sigmoid(logit).
template <typename T>
class Discriminator {
public:
    struct Tape {
        std::vector<Matrix<T>> cols;
        std::vector<FeatureMap<T>> out;
        int input_size = 0;
    };

    Discriminator() = default;
    Discriminator(const ArchConfig& arch, std::uint64_t seed);

    // Returns 1 x batch logits.
    Matrix<T> forward(const FeatureMap<T>& pair, Tape* tape = nullptr) const;
    FeatureMap<T> backward(const Tape& tape, const Matrix<T>& grad_logits, ParamSet<T>* grads,
                           bool want_input_grad = false) const;

    const ParamSet<T>& params() const { return params_; }
    ParamSet<T>& params() { return params_; }
    int input_channels() const { return 6; }
    int input_size() const { return arch_.image_size; }

private:
    ArchConfig arch_;
    ParamSet<T> params_;
};

template <typename T>
struct ModelBundle {
    ArchConfig arch;
    Generator<T> f;      // face -> sketch
    Generator<T> F;      // sketch -> face
    Discriminator<T> D;  // (face, sketch) -> probability of being a real pair

    template <typename U>
    ModelBundle<U> cast() const;
};

template <typename T>
ModelBundle<T> build_models(const ArchConfig& config);

template <typename T>
Image<T> forward_f(const Image<T>& face, const ModelBundle<T>& bundle);

template <typename T>
Image<T> forward_F(const Image<T>& sketch, const ModelBundle<T>& bundle);

// Batched forward through one generator, preserving order.
template <typename T>
std::vector<Image<T>> forward_batch(const Generator<T>& g, std::span<const Image<T>* const> inputs, Domain out);

template <typename T>
T discriminate(const Image<T>& face, const Image<T>& sketch, const ModelBundle<T>& bundle);

template <typename T>
T discriminator_logit(const Image<T>& face, const Image<T>& sketch, const ModelBundle<T>& bundle);

// d log D(face, sketch) / d sketch.
template <typename T>
Image<T> grad_D_wrt_sketch(const Image<T>& face, const Image<T>& sketch, const ModelBundle<T>& bundle);

// d log D(face, sketch) / d face.
template <typename T>
Image<T> grad_D_wrt_face(const Image<T>& face, const Image<T>& sketch, const ModelBundle<T>& bundle);

} // namespace rbtn

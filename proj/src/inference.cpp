#include "rbtn/inference.hpp"

#include "rbtn/error.hpp"

#include <cmath>
#include <string>
#include <tuple>
#include <utility>

namespace rbtn {

template <typename T>
void Patch<T>::validate() const {
    if (mask.size != pixels.size) throw ShapeError("patch: mask and pixel sizes differ");
    if (!mask.binary()) throw UsageError("patch: mask is not binary");
    if (mask.empty()) throw UsageError("patch: mask is empty");
    for (Eigen::Index n = 0; n < mask.map.size(); ++n)
        if (mask.map(n) == 0 && (pixels.pixels.col(n).array() != T(0)).any())
            throw UsageError("patch: pixels outside the mask must be zero");
}

template <typename T>
Patch<T> make_patch(const Image<T>& source, const Mask& mask) {
    if (mask.size != source.size) throw ShapeError("make_patch: mask and image sizes differ");
    Patch<T> p;
    p.pixels = source;
    p.mask = mask;
    for (Eigen::Index n = 0; n < mask.map.size(); ++n)
        if (mask.map(n) == 0) p.pixels.pixels.col(n).setZero();
    p.validate();
    return p;
}

void GenerationOptions::validate() const {
    if (iterations < 1) throw ConfigError("generation: iterations must be >= 1");
    if (!(adv_step >= 0.0) || !std::isfinite(adv_step)) throw ConfigError("generation: adv_step must be >= 0");
    if (record_every < 1) throw ConfigError("generation: record_every must be >= 1");
}

template <typename T>
Image<T> apply_patch(const Image<T>& x, const Patch<T>& patch) {
    if (x.domain != patch.domain())
        throw UsageError(std::string("apply_patch: ") + to_string(patch.domain()) + " patch on a " +
                         to_string(x.domain) + " image");
    if (x.size != patch.pixels.size) throw ShapeError("apply_patch: sizes differ");
    Image<T> out = x;
    for (Eigen::Index n = 0; n < patch.mask.map.size(); ++n)
        if (patch.mask.map(n)) out.pixels.col(n) = patch.pixels.pixels.col(n);
    return out;
}

template <typename T>
void validate_patches(std::span<const Patch<T>> patches, int image_size) {
    if (patches.empty()) throw UsageError("generation: at least one patch is required");
    for (std::size_t i = 0; i < patches.size(); ++i) {
        if (patches[i].pixels.size != image_size)
            throw ShapeError("patch " + std::to_string(i) + ": size " + std::to_string(patches[i].pixels.size) +
                             " does not match model size " + std::to_string(image_size));
        try {
            patches[i].validate();
        } catch (const Error& e) {
            throw UsageError("patch " + std::to_string(i) + ": " + e.what());
        }
    }
    std::string clashes;
    for (std::size_t i = 0; i < patches.size(); ++i)
        for (std::size_t j = i + 1; j < patches.size(); ++j)
            if (patches[i].domain() == patches[j].domain() && patches[i].mask.overlaps(patches[j].mask))
                clashes += (clashes.empty() ? "" : ", ") + std::string("(") + std::to_string(i) + ", " +
                           std::to_string(j) + ")";
    if (!clashes.empty()) throw UsageError("overlapping same-domain patches: " + clashes);
}

template <typename T>
Image<T> init_canvas(std::span<const Patch<T>> patches, Domain target, int image_size) {
    validate_patches(patches, image_size);
    Image<T> canvas(image_size, target, T(1));
    for (const auto& p : patches)
        if (p.domain() == target) canvas = apply_patch(canvas, p);
    return canvas;
}

template <typename T>
Image<T> adjust_by_discriminator(const Image<T>& face, const Image<T>& sketch, const ModelBundle<T>& bundle,
                                 double step, bool descent) {
    if (!(step >= 0.0)) throw ConfigError("adjust: step must be >= 0");
    if (step == 0.0) return sketch;
    const Image<T> g = grad_D_wrt_sketch(face, sketch, bundle);
    Image<T> out = sketch;
    const T s = static_cast<T>(descent ? -step : step);
    out.pixels = (sketch.pixels + s * g.pixels).cwiseMax(T(-1)).cwiseMin(T(1));
    if (!out.pixels.allFinite()) throw NumericError("adjust: non-finite sketch");
    return out;
}

namespace {

template <typename T>
Image<T> paste_all(Image<T> x, std::span<const Patch<T>> patches) {
    for (const auto& p : patches)
        if (p.domain() == x.domain) x = apply_patch(x, p);
    return x;
}

} // namespace

namespace {

// Steps (a)-(d): the anchored face and the adjusted sketch paired with it.
template <typename T>
std::pair<Image<T>, Image<T>> anchored_pair(const Image<T>& x_I, std::span<const Patch<T>> patches,
                                            const ModelBundle<T>& bundle, const GenerationOptions& opts,
                                            bool first_iteration) {
    if (x_I.domain != Domain::face) throw UsageError("generate_step: the running estimate must be a face image");
    // Without anchoring, sketch patches still seed the first iteration, like face patches seed the canvas.
    const bool anchor_sketch = opts.use_patch_anchor || first_iteration;
    Image<T> face = opts.use_patch_anchor ? paste_all(x_I, patches) : x_I;
    Image<T> sketch = forward_f(face, bundle);
    if (anchor_sketch) sketch = paste_all(std::move(sketch), patches);
    if (opts.use_adv_adjust) {
        sketch = adjust_by_discriminator(face, sketch, bundle, opts.adv_step, opts.adv_descent);
        if (anchor_sketch) sketch = paste_all(std::move(sketch), patches);
    }
    return {std::move(face), std::move(sketch)};
}

} // namespace

template <typename T>
StepOutput<T> generate_step(const Image<T>& x_I, std::span<const Patch<T>> patches, const ModelBundle<T>& bundle,
                            const GenerationOptions& opts, bool first_iteration) {
    StepOutput<T> out;
    std::tie(out.face, out.sketch) = anchored_pair(x_I, patches, bundle, opts, first_iteration);
    out.next_face = forward_F(out.sketch, bundle);
    return out;
}

template <typename T>
ResidualStat residual_of(const Image<T>& next, const Image<T>& prev, int k) {
    const Matrix<double> r = next.pixels.template cast<double>() - prev.pixels.template cast<double>();
    const double n = static_cast<double>(r.size());
    return {k, r.sum() / n, r.cwiseAbs().sum() / n};
}

template <typename T>
GenerationTrace<T> generate(std::span<const Patch<T>> patches, const ModelBundle<T>& bundle,
                            const GenerationOptions& opts, const ProgressCallback<T>& progress) {
    opts.validate();
    GenerationTrace<T> trace;
    trace.options = opts;
    Image<T> face = init_canvas(patches, Domain::face, bundle.arch.image_size);
    Image<T> prev_face;
    for (int k = 0; k <= opts.iterations; ++k) {
        Frame<T> frame;
        frame.k = k;
        std::tie(frame.face, frame.sketch) = anchored_pair(face, patches, bundle, opts, k == 0);
        if (k > 0) trace.residuals.push_back(residual_of(frame.face, prev_face, k));
        // The last pass stops before F: it only produces the final consistent pair.
        if (k < opts.iterations) {
            prev_face = frame.face;
            face = forward_F(frame.sketch, bundle);
        }
        const bool keep = k % opts.record_every == 0 || k == opts.iterations;
        if (keep) trace.frames.push_back(frame);
        if (progress && !progress(k, keep ? &trace.frames.back() : nullptr)) {
            if (!keep) trace.frames.push_back(std::move(frame));
            trace.cancelled = true;
            break;
        }
    }
    return trace;
}

template <typename T>
GenerationTrace<T> composite(std::span<const Patch<T>> patches, const ModelBundle<T>& bundle,
                             const GenerationOptions& opts, const ProgressCallback<T>& progress) {
    validate_patches(patches, bundle.arch.image_size);
    return generate(patches, bundle, opts, progress);
}

template <typename T>
bool anchor_holds(const Image<T>& image, const Patch<T>& patch) {
    if (image.size != patch.pixels.size) return false;
    for (Eigen::Index n = 0; n < patch.mask.map.size(); ++n)
        if (patch.mask.map(n) && image.pixels.col(n) != patch.pixels.pixels.col(n)) return false;
    return true;
}

#define RBTN_INSTANTIATE_INFERENCE(T)                                                                             \
    template struct Patch<T>;                                                                                     \
    template Patch<T> make_patch(const Image<T>&, const Mask&);                                                   \
    template Image<T> apply_patch(const Image<T>&, const Patch<T>&);                                              \
    template void validate_patches(std::span<const Patch<T>>, int);                                               \
    template Image<T> init_canvas(std::span<const Patch<T>>, Domain, int);                                        \
    template Image<T> adjust_by_discriminator(const Image<T>&, const Image<T>&, const ModelBundle<T>&, double,    \
                                              bool);                                                              \
    template StepOutput<T> generate_step(const Image<T>&, std::span<const Patch<T>>, const ModelBundle<T>&,       \
                                         const GenerationOptions&, bool);                                         \
    template GenerationTrace<T> generate(std::span<const Patch<T>>, const ModelBundle<T>&,                        \
                                         const GenerationOptions&, const ProgressCallback<T>&);                   \
    template GenerationTrace<T> composite(std::span<const Patch<T>>, const ModelBundle<T>&,                       \
                                          const GenerationOptions&, const ProgressCallback<T>&);                  \
    template bool anchor_holds(const Image<T>&, const Patch<T>&);                                                 \
    template ResidualStat residual_of(const Image<T>&, const Image<T>&, int);

RBTN_INSTANTIATE_INFERENCE(float)
RBTN_INSTANTIATE_INFERENCE(double)

} // namespace rbtn

#pragma once

// Recursive test-time generation. Each iteration k:
//   (a) paste face-domain patches onto the current face estimate,
//   (b) map it to the sketch domain with f,
//   (c) paste sketch-domain patches onto the sketch,
//   (d) nudge the sketch along d log D / d sketch (sketch anchors are re-pasted),
//   (e) map the sketch back to the face domain with F.

#include "rbtn/image.hpp"
#include "rbtn/networks.hpp"

#include <functional>
#include <span>
#include <vector>

namespace rbtn {

// Masked source image: pixels = source ⊙ mask.
template <typename T>
struct Patch {
    Image<T> pixels;
    Mask mask;

    Domain domain() const { return pixels.domain; }
    void validate() const;
};

template <typename T>
Patch<T> make_patch(const Image<T>& source, const Mask& mask);

struct GenerationOptions {
    int iterations = 100;
    double adv_step = 1.0;
    bool use_patch_anchor = true;
    bool use_adv_adjust = true;
    int record_every = 1;
    // Use the literal "subtract the gradient" sign instead of ascent on log D.
    bool adv_descent = false;

    void validate() const;
};

template <typename T>
struct Frame {
    int k = 0;
    Image<T> face;    // x_I^k after anchoring
    Image<T> sketch;  // x_S^k after anchoring and adjustment
};

// r^k = x_I^k - x_I^(k-1), summarized over all pixels and channels.
struct ResidualStat {
    int k = 0;
    double mean_r = 0.0;
    double mean_abs_r = 0.0;
};

template <typename T>
struct GenerationTrace {
    std::vector<Frame<T>> frames;          // k = 0, record_every, ..., iterations
    std::vector<ResidualStat> residuals;   // k = 1 .. iterations
    GenerationOptions options;
    bool cancelled = false;

    const Frame<T>& final_frame() const { return frames.back(); }
};

// Called once per iteration; `recorded` is null when the frame is not kept.
// Returning false cancels the run.
template <typename T>
using ProgressCallback = std::function<bool(int k, const Frame<T>* recorded)>;

// x ⊙ (1 - M) + p.
template <typename T>
Image<T> apply_patch(const Image<T>& x, const Patch<T>& patch);

// Checks sizes, mask/pixel contracts and same-domain overlap. Throws UsageError
// naming the offending patch indices.
template <typename T>
void validate_patches(std::span<const Patch<T>> patches, int image_size);

// White (+1) canvas with every patch of the target domain pasted.
template <typename T>
Image<T> init_canvas(std::span<const Patch<T>> patches, Domain target, int image_size);

template <typename T>
Image<T> adjust_by_discriminator(const Image<T>& face, const Image<T>& sketch, const ModelBundle<T>& bundle,
                                 double step, bool descent = false);

template <typename T>
struct StepOutput {
    Image<T> face;       // after (a)
    Image<T> sketch;     // after (d)
    Image<T> next_face;  // after (e)
};

template <typename T>
StepOutput<T> generate_step(const Image<T>& x_I, std::span<const Patch<T>> patches, const ModelBundle<T>& bundle,
                            const GenerationOptions& opts, bool first_iteration = false);

template <typename T>
GenerationTrace<T> generate(std::span<const Patch<T>> patches, const ModelBundle<T>& bundle,
                            const GenerationOptions& opts, const ProgressCallback<T>& progress = {});

// Multi-patch, multi-domain generation. Same loop as generate; rejects
// same-domain overlap instead of blending.
template <typename T>
GenerationTrace<T> composite(std::span<const Patch<T>> patches, const ModelBundle<T>& bundle,
                             const GenerationOptions& opts, const ProgressCallback<T>& progress = {});

// True when every masked pixel of `image` equals the patch bit-exactly.
template <typename T>
bool anchor_holds(const Image<T>& image, const Patch<T>& patch);

template <typename T>
ResidualStat residual_of(const Image<T>& next, const Image<T>& prev, int k);

} // namespace rbtn

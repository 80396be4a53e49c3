#pragma once

#include "rbtn/image.hpp"

#include <span>

namespace rbtn {

// Floor applied inside every explicit log of a probability.
inline constexpr double kProbEpsilon = 1e-7;

// Sum over the two round trips of per-pixel mean absolute error:
//   mean|x_I - x_I0| + mean|x_I - x_I1| + mean|x_S - x_S0| + mean|x_S - x_S1|
template <typename T>
double reconstruction_loss(const Image<T>& x_I, const Image<T>& x_S, const Image<T>& x_I0, const Image<T>& x_I1,
                           const Image<T>& x_S0, const Image<T>& x_S1);

// mean_j log d_fake[j] - mean_i log d_real[i], each probability clamped to
// [eps, 1 - eps]. Minimized by the discriminator: fakes -> 0, reals -> 1.
// clamped (optional) receives the number of inputs that hit the clamp.
double discriminator_loss(std::span<const double> d_fake, std::span<const double> d_real, int* clamped = nullptr);

inline double discriminator_loss(std::span<const double> d_fake, double d_real, int* clamped = nullptr) {
    return discriminator_loss(d_fake, std::span<const double>(&d_real, 1), clamped);
}

// Generator side: -mean log d over the generator's fake pairs.
double generator_adversarial_loss(std::span<const double> d_fake, int* clamped = nullptr);

} // namespace rbtn

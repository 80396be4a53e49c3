#include "rbtn/losses.hpp"

#include "rbtn/error.hpp"

#include <algorithm>
#include <cmath>

namespace rbtn {

namespace {

double clamped_log(double p, int* clamped) {
    const double c = std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon);
    if (clamped && c != p) ++*clamped;
    return std::log(c);
}

double mean_log(std::span<const double> ps, int* clamped) {
    if (ps.empty()) throw UsageError("loss: empty probability list");
    double s = 0.0;
    for (double p : ps) {
        if (!(p >= 0.0 && p <= 1.0)) throw NumericError("loss: probability outside [0, 1]");
        s += clamped_log(p, clamped);
    }
    return s / static_cast<double>(ps.size());
}

} // namespace

template <typename T>
double reconstruction_loss(const Image<T>& x_I, const Image<T>& x_S, const Image<T>& x_I0, const Image<T>& x_I1,
                           const Image<T>& x_S0, const Image<T>& x_S1) {
    return mean_abs_diff(x_I, x_I0) + mean_abs_diff(x_I, x_I1) + mean_abs_diff(x_S, x_S0) + mean_abs_diff(x_S, x_S1);
}

template double reconstruction_loss(const Image<float>&, const Image<float>&, const Image<float>&, const Image<float>&,
                                    const Image<float>&, const Image<float>&);
template double reconstruction_loss(const Image<double>&, const Image<double>&, const Image<double>&,
                                    const Image<double>&, const Image<double>&, const Image<double>&);

double discriminator_loss(std::span<const double> d_fake, std::span<const double> d_real, int* clamped) {
    return mean_log(d_fake, clamped) - mean_log(d_real, clamped);
}

double generator_adversarial_loss(std::span<const double> d_fake, int* clamped) {
    return -mean_log(d_fake, clamped);
}

} // namespace rbtn

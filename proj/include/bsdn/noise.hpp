#pragma once

#include "bsdn/image.hpp"
#include "bsdn/noise_types.hpp"
#include "bsdn/rng.hpp"

namespace bsdn {

// y = x + n, n ~ N(0, sigma^2) i.i.d. per channel and pixel. sigma is on the
// [0,1] scale here (interface value / 255). Output is not clamped.
inline Image apply_gaussian(const Image& clean, double sigma, Rng& rng) {
    if (!(sigma > 0.0)) throw std::invalid_argument("apply_gaussian: sigma must be positive");
    Image out = clean;
    for (float& v : out.data) v = static_cast<float>(v + sigma * rng.normal());
    return out;
}

// y_i = Poisson(lambda * x_i) / lambda per channel.
inline Image apply_poisson(const Image& clean, double lambda, Rng& rng) {
    if (!(lambda > 0.0)) throw std::invalid_argument("apply_poisson: lambda must be positive");
    Image out = clean;
    for (float& v : out.data) {
        if (v < 0.f) throw std::invalid_argument("apply_poisson: negative clean value");
        v = static_cast<float>(rng.poisson(lambda * v) / lambda);
    }
    return out;
}

// With probability alpha the whole RGB triple is replaced by a uniform
// sample from [0,1]^3; otherwise the clean triple is copied exactly.
inline Image apply_impulse(const Image& clean, double alpha, Rng& rng) {
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("apply_impulse: alpha outside [0,1]");
    if (clean.c != 3) throw std::invalid_argument("apply_impulse: 3-channel image required");
    Image out = clean;
    const size_t plane = clean.pixels();
    for (size_t p = 0; p < plane; ++p) {
        if (rng.uniform() < alpha)
            for (int ch = 0; ch < 3; ++ch) out.data[ch * plane + p] = static_cast<float>(rng.uniform());
    }
    return out;
}

// One uniform parameter draw from the spec range, in interface units.
inline double sample_param(const NoiseSpec& spec, Rng& rng) {
    return spec.p0 + rng.uniform() * (spec.p1 - spec.p0);
}

// Dispatcher; param in interface units (sigma 8-bit, lambda, alpha).
inline Image corrupt(const Image& clean, NoiseKind kind, double param, Rng& rng) {
    switch (kind) {
        case NoiseKind::gaussian: return apply_gaussian(clean, param / 255.0, rng);
        case NoiseKind::poisson: return apply_poisson(clean, param, rng);
        case NoiseKind::impulse: return apply_impulse(clean, param, rng);
    }
    throw std::logic_error("corrupt: bad kind");
}

}  // namespace bsdn

#pragma once

#include <stdexcept>
#include <string>

#include "bsdn/mat3.hpp"

namespace bsdn {

// Per-pixel Gaussian prior N(mu_x, A_x^T A_x) over the clean RGB value.
// A is upper triangular, packed channel order (a00,a01,a02,a11,a12,a22).
inline constexpr double kPriorEps = 1e-6;    // added to Sigma_x diagonal
inline constexpr double kPoissonMuEps = 1e-4;  // clamp floor for mu in the Poisson variance
inline constexpr double kCholFloor = 1e-4;   // Cholesky diagonal floor for non-PD Sigma_y

template <typename T>
Mat3<T> unpack_upper(const T a[6]) {
    Mat3<T> A;
    A(0, 0) = a[0];
    A(0, 1) = a[1];
    A(0, 2) = a[2];
    A(1, 1) = a[3];
    A(1, 2) = a[4];
    A(2, 2) = a[5];
    return A;
}

// Sigma_x = A^T A + eps*I; positive definite by construction.
template <typename T>
Mat3<T> prior_covariance(const Mat3<T>& A, T eps = T(kPriorEps)) {
    Mat3<T> s = A.transpose().matmul(A);
    s(0, 0) += eps;
    s(1, 1) += eps;
    s(2, 2) += eps;
    return s;
}

template <typename T>
struct MarginalMoments {
    Vec3<T> mu;
    Mat3<T> cov;
};

// Additive Gaussian noise: convolution of Gaussians, covariances add.
template <typename T>
MarginalMoments<T> marginal_moments_gaussian(const Vec3<T>& mu_x, const Mat3<T>& sigma_x, T sigma) {
    MarginalMoments<T> m{mu_x, sigma_x};
    const T s2 = sigma * sigma;
    m.cov(0, 0) += s2;
    m.cov(1, 1) += s2;
    m.cov(2, 2) += s2;
    return m;
}

// Poisson approximated as signal-dependent Gaussian with the prior mean
// plugged in: Sigma_y = Sigma_x + (1/lambda) diag(clamp(mu_x)).
template <typename T>
MarginalMoments<T> marginal_moments_poisson(const Vec3<T>& mu_x, const Mat3<T>& sigma_x, T lambda) {
    if (!(lambda > T(0))) throw std::invalid_argument("marginal_moments_poisson: lambda must be positive");
    MarginalMoments<T> m{mu_x, sigma_x};
    for (int i = 0; i < 3; ++i) m.cov(i, i) += std::max(mu_x[i], T(kPoissonMuEps)) / lambda;
    return m;
}

// Raw moments of the uniform [0,1]^3 color: E[u u^T] = (1/12)*[[4,3,3],[3,4,3],[3,3,4]].
template <typename T>
Mat3<T> uniform_color_raw_moment() {
    Mat3<T> k;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) k(i, j) = (i == j ? T(4) : T(3)) / T(12);
    return k;
}

// Impulse noise: mixture of the clean Dirac (weight 1-alpha) and uniform
// color (weight alpha); raw moments interpolate linearly.
template <typename T>
MarginalMoments<T> marginal_moments_impulse(const Vec3<T>& mu_x, const Mat3<T>& sigma_x, T alpha) {
    MarginalMoments<T> m;
    Vec3<T> half{{T(0.5), T(0.5), T(0.5)}};
    m.mu = half * alpha + mu_x * (T(1) - alpha);
    Mat3<T> raw = uniform_color_raw_moment<T>() * alpha +
                  (sigma_x + Mat3<T>::outer(mu_x, mu_x)) * (T(1) - alpha);
    m.cov = raw - Mat3<T>::outer(m.mu, m.mu);
    return m;
}

// Negative log-likelihood of y under N(mu_y, Sigma_y), constant term dropped:
// 1/2 (y-mu)^T Sigma^-1 (y-mu) + 1/2 log|Sigma|.
// Throws if Sigma_y is not positive definite (the training node floors and
// counts instead; see bayes_nll_loss).
template <typename T>
T nll(const Vec3<T>& y, const Vec3<T>& mu_y, const Mat3<T>& sigma_y) {
    Mat3<T> L;
    if (cholesky33(sigma_y, L, T(kCholFloor)) != 0)
        throw std::domain_error("nll: Sigma_y not positive definite");
    Vec3<T> r = y - mu_y;
    Vec3<T> w = chol_solve(L, r);
    return T(0.5) * r.dot(w) + T(0.5) * chol_logdet(L);
}

// Posterior mean for additive Gaussian noise:
// (Sx^-1 + s^-2 I)^-1 (Sx^-1 mu + s^-2 y), evaluated in the equivalent
// stable form mu + Sx (Sx + s^2 I)^-1 (y - mu).
template <typename T>
Vec3<T> posterior_mean_gaussian(const Vec3<T>& mu_x, const Mat3<T>& sigma_x, const Vec3<T>& y, T sigma) {
    if (!(sigma > T(0))) throw std::invalid_argument("posterior_mean_gaussian: sigma must be positive");
    Mat3<T> b = sigma_x;
    const T s2 = sigma * sigma;
    b(0, 0) += s2;
    b(1, 1) += s2;
    b(2, 2) += s2;
    Mat3<T> L;
    cholesky33(b, L, T(1e-18));
    Vec3<T> z = chol_solve(L, y - mu_x);
    return mu_x + sigma_x * z;
}

// Gaussian formula with per-channel noise variances clamp(mu_x)/lambda.
template <typename T>
Vec3<T> posterior_mean_poisson(const Vec3<T>& mu_x, const Mat3<T>& sigma_x, const Vec3<T>& y, T lambda) {
    if (!(lambda > T(0))) throw std::invalid_argument("posterior_mean_poisson: lambda must be positive");
    Mat3<T> b = sigma_x;
    for (int i = 0; i < 3; ++i) b(i, i) += std::max(mu_x[i], T(kPoissonMuEps)) / lambda;
    Mat3<T> L;
    cholesky33(b, L, T(1e-18));
    Vec3<T> z = chol_solve(L, y - mu_x);
    return mu_x + sigma_x * z;
}

template <typename T>
T log_gaussian_density(const Vec3<T>& x, const Vec3<T>& mu, const Mat3<T>& sigma) {
    Mat3<T> L;
    cholesky33(sigma, L, T(1e-18));
    Vec3<T> r = x - mu;
    Vec3<T> w = chol_solve(L, r);
    const T log2pi = T(1.8378770664093454835606594728112);
    return T(-0.5) * r.dot(w) - T(0.5) * chol_logdet(L) - T(1.5) * log2pi;
}

// Impulse posterior mean: convex combination of mu_x and y weighted by
// alpha vs (1-alpha) f(y; mu_x, Sigma_x), evaluated in log space so the
// density underflow far from the prior cannot zero the denominator.
template <typename T>
Vec3<T> posterior_mean_impulse(const Vec3<T>& mu_x, const Mat3<T>& sigma_x, const Vec3<T>& y, T alpha) {
    if (alpha < T(0) || alpha > T(1)) throw std::invalid_argument("posterior_mean_impulse: alpha outside [0,1]");
    if (alpha == T(0)) return y;
    if (alpha == T(1)) return mu_x;
    const T la = std::log(alpha);
    const T lb = std::log1p(-alpha) + log_gaussian_density(y, mu_x, sigma_x);
    const T m = std::max(la, lb);
    const T wa = std::exp(la - m), wb = std::exp(lb - m);
    return (mu_x * wa + y * wb) * (T(1) / (wa + wb));
}

// Smooth parameterizations keeping learned noise parameters in-domain:
// sigma and 1/lambda via softplus, alpha via sigmoid.
template <typename T>
T softplus_scalar(T x) {
    if (x > T(20)) return x;
    if (x < T(-20)) return std::exp(x);
    return std::log1p(std::exp(x));
}
template <typename T>
T sigmoid_scalar(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    T e = std::exp(x);
    return e / (T(1) + e);
}
template <typename T>
T inv_softplus(T y) {
    if (y > T(20)) return y;
    return std::log(std::expm1(y));
}
template <typename T>
T inv_sigmoid(T p) {
    return std::log(p / (T(1) - p));
}

}  // namespace bsdn

#pragma once

// Brute-force oracles kept deliberately independent of the library's 3x3
// Cholesky path: dense Gauss-Jordan inverse and LU determinant, Monte-Carlo
// and grid integration on top.

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "bsdn/rng.hpp"

namespace oracle {

using M3 = std::array<double, 9>;
using V3 = std::array<double, 3>;

inline M3 inverse3(const M3& a) {
    double aug[3][6] = {};
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) aug[r][c] = a[static_cast<size_t>(3 * r + c)];
        aug[r][3 + r] = 1.0;
    }
    for (int col = 0; col < 3; ++col) {
        int piv = col;
        for (int r = col + 1; r < 3; ++r)
            if (std::fabs(aug[r][col]) > std::fabs(aug[piv][col])) piv = r;
        if (std::fabs(aug[piv][col]) < 1e-300) throw std::domain_error("inverse3: singular");
        if (piv != col)
            for (int c = 0; c < 6; ++c) std::swap(aug[piv][c], aug[col][c]);
        const double d = aug[col][col];
        for (int c = 0; c < 6; ++c) aug[col][c] /= d;
        for (int r = 0; r < 3; ++r) {
            if (r == col) continue;
            const double f = aug[r][col];
            for (int c = 0; c < 6; ++c) aug[r][c] -= f * aug[col][c];
        }
    }
    M3 inv;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) inv[static_cast<size_t>(3 * r + c)] = aug[r][3 + c];
    return inv;
}

inline double det3(const M3& a) {
    return a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6]) +
           a[2] * (a[3] * a[7] - a[4] * a[6]);
}

inline double log_mvn_pdf(const V3& x, const V3& mu, const M3& cov) {
    const M3 inv = inverse3(cov);
    V3 r{x[0] - mu[0], x[1] - mu[1], x[2] - mu[2]};
    double q = 0.0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) q += r[static_cast<size_t>(i)] * inv[static_cast<size_t>(3 * i + j)] * r[static_cast<size_t>(j)];
    return -0.5 * q - 0.5 * std::log(det3(cov)) - 1.5 * std::log(2.0 * 3.14159265358979323846);
}

// Lower Cholesky factor for sampling from N(mu, cov); plain dense version.
inline M3 chol_lower(const M3& a) {
    M3 L{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j <= i; ++j) {
            double s = a[static_cast<size_t>(3 * i + j)];
            for (int k = 0; k < j; ++k) s -= L[static_cast<size_t>(3 * i + k)] * L[static_cast<size_t>(3 * j + k)];
            if (i == j) {
                if (s <= 0) throw std::domain_error("chol_lower: not PD");
                L[static_cast<size_t>(3 * i + j)] = std::sqrt(s);
            } else {
                L[static_cast<size_t>(3 * i + j)] = s / L[static_cast<size_t>(3 * j + j)];
            }
        }
    return L;
}

inline V3 sample_mvn(bsdn::Rng& rng, const V3& mu, const M3& chol) {
    V3 z{rng.normal(), rng.normal(), rng.normal()};
    V3 x = mu;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j <= i; ++j) x[static_cast<size_t>(i)] += chol[static_cast<size_t>(3 * i + j)] * z[static_cast<size_t>(j)];
    return x;
}

// Self-normalized importance sampling of E[x | y] with the prior as proposal
// and a Gaussian likelihood N(y; x, noise_cov_diag) (diagonal noise).
inline V3 posterior_mean_is(const V3& mu, const M3& cov, const V3& y, const V3& noise_var, int64_t samples,
                            uint64_t seed) {
    const M3 L = chol_lower(cov);
    bsdn::Rng rng(seed);
    double wsum = 0.0;
    V3 acc{0, 0, 0};
    for (int64_t s = 0; s < samples; ++s) {
        const V3 x = sample_mvn(rng, mu, L);
        double q = 0.0;
        for (int i = 0; i < 3; ++i) {
            const double d = y[static_cast<size_t>(i)] - x[static_cast<size_t>(i)];
            q += d * d / noise_var[static_cast<size_t>(i)];
        }
        const double w = std::exp(-0.5 * q);
        wsum += w;
        for (int i = 0; i < 3; ++i) acc[static_cast<size_t>(i)] += w * x[static_cast<size_t>(i)];
    }
    for (int i = 0; i < 3; ++i) acc[static_cast<size_t>(i)] /= wsum;
    return acc;
}

// Symmetric 3x3 eigendecomposition by cyclic Jacobi rotations; V columns are
// the eigenvectors.
inline void jacobi_eigen3(const M3& a, M3& V, V3& lambda) {
    M3 m = a;
    V = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    for (int sweep = 0; sweep < 30; ++sweep) {
        double off = std::fabs(m[1]) + std::fabs(m[2]) + std::fabs(m[5]);
        if (off < 1e-300) break;
        for (int p = 0; p < 3; ++p)
            for (int q = p + 1; q < 3; ++q) {
                const double apq = m[static_cast<size_t>(3 * p + q)];
                if (std::fabs(apq) < 1e-300) continue;
                const double app = m[static_cast<size_t>(4 * p)], aqq = m[static_cast<size_t>(4 * q)];
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (int k = 0; k < 3; ++k) {
                    const double mkp = m[static_cast<size_t>(3 * k + p)], mkq = m[static_cast<size_t>(3 * k + q)];
                    m[static_cast<size_t>(3 * k + p)] = c * mkp - s * mkq;
                    m[static_cast<size_t>(3 * k + q)] = s * mkp + c * mkq;
                }
                for (int k = 0; k < 3; ++k) {
                    const double mpk = m[static_cast<size_t>(3 * p + k)], mqk = m[static_cast<size_t>(3 * q + k)];
                    m[static_cast<size_t>(3 * p + k)] = c * mpk - s * mqk;
                    m[static_cast<size_t>(3 * q + k)] = s * mpk + c * mqk;
                }
                for (int k = 0; k < 3; ++k) {
                    const double vkp = V[static_cast<size_t>(3 * k + p)], vkq = V[static_cast<size_t>(3 * k + q)];
                    V[static_cast<size_t>(3 * k + p)] = c * vkp - s * vkq;
                    V[static_cast<size_t>(3 * k + q)] = s * vkp + c * vkq;
                }
            }
    }
    lambda = {m[0], m[4], m[8]};
}

// Grid integration of the impulse-noise posterior mean over the mixture
// alpha * f(x; mu, cov) + (1-alpha) * delta(x - y) * f(y; mu, cov).
// The quadrature runs in the covariance eigenbasis so anisotropic priors are
// resolved on every axis.
inline V3 posterior_mean_impulse_grid(const V3& mu, const M3& cov, const V3& y, double alpha, int n_per_axis) {
    M3 V;
    V3 lambda;
    jacobi_eigen3(cov, V, lambda);
    V3 sd{std::sqrt(std::max(lambda[0], 0.0)), std::sqrt(std::max(lambda[1], 0.0)),
          std::sqrt(std::max(lambda[2], 0.0))};
    const double span = 8.0;
    V3 h{2.0 * span * sd[0] / n_per_axis, 2.0 * span * sd[1] / n_per_axis, 2.0 * span * sd[2] / n_per_axis};
    double mass = 0.0;
    V3 first{0, 0, 0};
    for (int i = 0; i < n_per_axis; ++i) {
        const double t0 = -span * sd[0] + (i + 0.5) * h[0];
        for (int j = 0; j < n_per_axis; ++j) {
            const double t1 = -span * sd[1] + (j + 0.5) * h[1];
            for (int k = 0; k < n_per_axis; ++k) {
                const double t2 = -span * sd[2] + (k + 0.5) * h[2];
                const double q = t0 * t0 / lambda[0] + t1 * t1 / lambda[1] + t2 * t2 / lambda[2];
                const double f = std::exp(-0.5 * q);
                mass += f;
                // x = mu + V * t
                for (int a = 0; a < 3; ++a)
                    first[static_cast<size_t>(a)] +=
                        f * (mu[static_cast<size_t>(a)] + V[static_cast<size_t>(3 * a)] * t0 +
                             V[static_cast<size_t>(3 * a + 1)] * t1 + V[static_cast<size_t>(3 * a + 2)] * t2);
            }
        }
    }
    const double norm = std::exp(-0.5 * std::log(lambda[0] * lambda[1] * lambda[2]) -
                                 1.5 * std::log(2.0 * 3.14159265358979323846));
    const double cell = h[0] * h[1] * h[2] * norm;
    mass *= cell * alpha;
    for (auto& v : first) v *= cell * alpha;
    const double fy = std::exp(log_mvn_pdf(y, mu, cov));
    const double dirac = (1.0 - alpha) * fy;
    V3 mean;
    for (int i = 0; i < 3; ++i)
        mean[static_cast<size_t>(i)] =
            (first[static_cast<size_t>(i)] + dirac * y[static_cast<size_t>(i)]) / (mass + dirac);
    return mean;
}

}  // namespace oracle

#pragma once

#include "bsdn/bayes.hpp"
#include "bsdn/noise_types.hpp"
#include "bsdn/tensor.hpp"

namespace bsdn {

// Per-pixel loss mask, 1 = contributes. Empty/absent means all pixels.
using PixelMask = std::vector<uint8_t>;

namespace detail {
inline int64_t active_pixels(const PixelMask* mask, int64_t total) {
    if (!mask || mask->empty()) return total;
    int64_t n = 0;
    for (uint8_t m : *mask) n += m ? 1 : 0;
    return n;
}
}  // namespace detail

// Mean squared error against a constant target, optionally restricted to
// masked pixels (mean over active pixel-channel elements).
template <typename T>
TensorPtr<T> mse_loss(Tape<T>& tape, const TensorPtr<T>& pred, std::vector<T> target,
                      std::shared_ptr<PixelMask> mask = nullptr) {
    if (pred->val.size() != target.size()) throw std::invalid_argument("mse_loss: target size mismatch");
    const int C = pred->c();
    const int64_t px = pred->numel() / C;
    const int64_t denom = detail::active_pixels(mask.get(), px) * C;
    auto out = detail::op_output(tape, {1}, {&pred});
    const int64_t plane = static_cast<int64_t>(pred->h()) * pred->w();
    auto at_mask = [&](int64_t i) -> bool {
        if (!mask || mask->empty()) return true;
        const int64_t n = i / (C * plane), rest = i % plane;
        return (*mask)[n * plane + rest] != 0;
    };
    double acc = 0.0;
    for (int64_t i = 0; i < pred->numel(); ++i) {
        if (!at_mask(i)) continue;
        const double d = static_cast<double>(pred->val[i]) - static_cast<double>(target[i]);
        acc += d * d;
    }
    out->val[0] = static_cast<T>(acc / static_cast<double>(denom));
    if (out->requires_grad)
        tape.record([pred, out, target = std::move(target), mask, denom, C, plane] {
            const T go = out->grad[0] / static_cast<T>(denom);
            for (int64_t i = 0; i < pred->numel(); ++i) {
                if (mask && !mask->empty()) {
                    const int64_t n = i / (C * plane), rest = i % plane;
                    if (!(*mask)[n * plane + rest]) continue;
                }
                pred->grad[i] += go * T(2) * (pred->val[i] - target[i]);
            }
        });
    return out;
}

// Annealable L_p loss: mean((d^2 + eps)^(p/2)). Exponent p == 2 reduces to
// exact L2 (no eps). Used by the N2N impulse schedule (p: 2 -> 0.5).
template <typename T>
TensorPtr<T> lp_loss(Tape<T>& tape, const TensorPtr<T>& pred, std::vector<T> target, T p,
                     std::shared_ptr<PixelMask> mask = nullptr, T eps = T(1e-8)) {
    if (p == T(2)) return mse_loss(tape, pred, std::move(target), std::move(mask));
    const int C = pred->c();
    const int64_t px = pred->numel() / C;
    const int64_t denom = detail::active_pixels(mask.get(), px) * C;
    const int64_t plane = static_cast<int64_t>(pred->h()) * pred->w();
    auto out = detail::op_output(tape, {1}, {&pred});
    double acc = 0.0;
    for (int64_t i = 0; i < pred->numel(); ++i) {
        if (mask && !mask->empty()) {
            const int64_t n = i / (C * plane), rest = i % plane;
            if (!(*mask)[n * plane + rest]) continue;
        }
        const double d = static_cast<double>(pred->val[i]) - static_cast<double>(target[i]);
        acc += std::pow(d * d + static_cast<double>(eps), static_cast<double>(p) / 2.0);
    }
    out->val[0] = static_cast<T>(acc / static_cast<double>(denom));
    if (out->requires_grad)
        tape.record([pred, out, target = std::move(target), mask, denom, C, plane, p, eps] {
            const T go = out->grad[0] / static_cast<T>(denom);
            for (int64_t i = 0; i < pred->numel(); ++i) {
                if (mask && !mask->empty()) {
                    const int64_t n = i / (C * plane), rest = i % plane;
                    if (!(*mask)[n * plane + rest]) continue;
                }
                const T d = pred->val[i] - target[i];
                pred->grad[i] += go * p * d * std::pow(d * d + eps, p / T(2) - T(1));
            }
        });
    return out;
}

// Options for the marginal negative-log-likelihood node. The noise parameter
// is either a constant per image (param_const, size N or 1) or a trainable
// tensor of shape {N} or {1} that receives gradient (param_var). Internal
// units: sigma on the [0,1] scale, inv_lambda = 1/lambda, alpha a probability.
template <typename T>
struct NllOptions {
    NoiseKind kind = NoiseKind::gaussian;
    bool diag_only = false;
    std::vector<T> param_const;
    TensorPtr<T> param_var;
    std::shared_ptr<PixelMask> mask;
    std::shared_ptr<int64_t> pd_floor_count;  // incremented per floored pixel
};

namespace detail {

// Per-pixel forward/backward of the marginal NLL. out9 channel layout:
// mu (3), upper-triangular A (6). theta is the noise parameter in internal
// units (sigma, 1/lambda, or alpha).
template <typename T>
struct NllPixel {
    Vec3<T> mu_x, mu_y, r;
    Mat3<T> A, Sx, Sy, L;
    T theta = T(0);
    int floored = 0;

    T forward(const T* mu_ch, const T* a_ch, const Vec3<T>& y, T th, NoiseKind kind, bool diag_only) {
        theta = th;
        mu_x = Vec3<T>{{mu_ch[0], mu_ch[1], mu_ch[2]}};
        T a[6] = {a_ch[0], a_ch[1], a_ch[2], a_ch[3], a_ch[4], a_ch[5]};
        if (diag_only) a[1] = a[2] = a[4] = T(0);
        A = unpack_upper(a);
        Sx = prior_covariance(A);
        switch (kind) {
            case NoiseKind::gaussian: {
                auto m = marginal_moments_gaussian(mu_x, Sx, theta);
                mu_y = m.mu;
                Sy = m.cov;
                break;
            }
            case NoiseKind::poisson: {
                MarginalMoments<T> m{mu_x, Sx};
                for (int i = 0; i < 3; ++i) m.cov(i, i) += theta * std::max(mu_x[i], T(kPoissonMuEps));
                mu_y = m.mu;
                Sy = m.cov;
                break;
            }
            case NoiseKind::impulse: {
                auto m = marginal_moments_impulse(mu_x, Sx, theta);
                mu_y = m.mu;
                Sy = m.cov;
                break;
            }
        }
        floored = cholesky33(Sy, L, T(kCholFloor));
        if (floored) Sy = L.matmul(L.transpose());  // gradient taken w.r.t. the floored factor
        r = y - mu_y;
        Vec3<T> w = chol_solve(L, r);
        return T(0.5) * r.dot(w) + T(0.5) * chol_logdet(L);
    }

    // go: upstream scale. Accumulates into the 9 output-channel grads and the
    // parameter grad.
    void backward(T go, NoiseKind kind, bool diag_only, T* g_mu, T* g_a, T* g_theta) {
        const Mat3<T> M = chol_inverse(L);
        const Vec3<T> Mr = M * r;
        const Mat3<T> G = (M - Mat3<T>::outer(Mr, Mr)) * T(0.5);
        Vec3<T> g_mu_x;
        Mat3<T> GSx;
        T gt = T(0);
        switch (kind) {
            case NoiseKind::gaussian: {
                g_mu_x = Mr * T(-1);
                GSx = G;
                gt = G.trace() * T(2) * theta;  // d/d sigma of sigma^2 * I
                break;
            }
            case NoiseKind::poisson: {
                g_mu_x = Mr * T(-1);
                for (int i = 0; i < 3; ++i) {
                    if (mu_x[i] > T(kPoissonMuEps)) g_mu_x[i] += theta * G(i, i);
                    gt += G(i, i) * std::max(mu_x[i], T(kPoissonMuEps));
                }
                GSx = G;
                break;
            }
            case NoiseKind::impulse: {
                const T one_m_a = T(1) - theta;
                // total d/d mu_y: direct residual term plus the -mu_y mu_y^T term
                Vec3<T> g_mu_y = (Mr + (G * mu_y) * T(2)) * T(-1);
                g_mu_x = (g_mu_y + (G * mu_x) * T(2)) * one_m_a;
                GSx = G * one_m_a;
                Vec3<T> dmu_da{{T(0.5) - mu_x[0], T(0.5) - mu_x[1], T(0.5) - mu_x[2]}};
                gt = g_mu_y.dot(dmu_da);
                const Mat3<T> dcov_da =
                    uniform_color_raw_moment<T>() - (Sx + Mat3<T>::outer(mu_x, mu_x));
                for (int i = 0; i < 9; ++i) gt += G.m[static_cast<size_t>(i)] * dcov_da.m[static_cast<size_t>(i)];
                break;
            }
        }
        // Sigma_x = A^T A + eps I  =>  dL/dA = A (GSx + GSx^T)
        const Mat3<T> gA = A.matmul(GSx + GSx.transpose());
        for (int i = 0; i < 3; ++i) g_mu[i] += go * g_mu_x[i];
        g_a[0] += go * gA(0, 0);
        if (!diag_only) {
            g_a[1] += go * gA(0, 1);
            g_a[2] += go * gA(0, 2);
            g_a[4] += go * gA(1, 2);
        }
        g_a[3] += go * gA(1, 1);
        g_a[5] += go * gA(2, 2);
        *g_theta += go * gt;
    }
};

}  // namespace detail

// Marginal NLL of observed noisy pixels under the per-pixel prior pushed
// through the noise model; mean over (masked) pixels and batch. out9 is the
// 9-channel network output, y the observed noisy values (same image that fed
// the network).
template <typename T>
TensorPtr<T> bayes_nll_loss(Tape<T>& tape, const TensorPtr<T>& out9, std::vector<T> y, NllOptions<T> opts) {
    if (out9->c() != 9) throw std::invalid_argument("bayes_nll_loss: 9-channel output required");
    const int N = out9->n(), H = out9->h(), W = out9->w();
    if (static_cast<int64_t>(y.size()) != static_cast<int64_t>(N) * 3 * H * W)
        throw std::invalid_argument("bayes_nll_loss: y size mismatch");
    const bool var_param = static_cast<bool>(opts.param_var);
    if (!var_param && opts.param_const.empty()) throw std::invalid_argument("bayes_nll_loss: missing noise parameter");
    if (var_param && opts.param_var->numel() != N && opts.param_var->numel() != 1)
        throw std::invalid_argument("bayes_nll_loss: param tensor must have shape {N} or {1}");

    const int64_t plane = static_cast<int64_t>(H) * W;
    const int64_t denom = detail::active_pixels(opts.mask.get(), static_cast<int64_t>(N) * plane);
    if (denom == 0) throw std::invalid_argument("bayes_nll_loss: empty pixel mask");

    auto out = var_param ? detail::op_output(tape, {1}, {&out9, &opts.param_var})
                         : detail::op_output(tape, Shape{1}, {&out9});

    auto theta_of = [&](int n) -> T {
        if (var_param) return opts.param_var->val[opts.param_var->numel() == 1 ? 0 : n];
        return opts.param_const[opts.param_const.size() == 1 ? 0 : static_cast<size_t>(n)];
    };

    double acc = 0.0;
    int64_t floors = 0;
    for (int n = 0; n < N; ++n) {
        const T theta = theta_of(n);
        for (int64_t p = 0; p < plane; ++p) {
            if (opts.mask && !opts.mask->empty() && !(*opts.mask)[n * plane + p]) continue;
            const int64_t base9 = (static_cast<int64_t>(n) * 9) * plane + p;
            const int64_t base3 = (static_cast<int64_t>(n) * 3) * plane + p;
            T mu_ch[3], a_ch[6];
            for (int c = 0; c < 3; ++c) mu_ch[c] = out9->val[base9 + c * plane];
            for (int c = 0; c < 6; ++c) a_ch[c] = out9->val[base9 + (3 + c) * plane];
            Vec3<T> yv{{y[base3], y[base3 + plane], y[base3 + 2 * plane]}};
            detail::NllPixel<T> px;
            acc += static_cast<double>(px.forward(mu_ch, a_ch, yv, theta, opts.kind, opts.diag_only));
            if (px.floored) ++floors;
        }
    }
    if (opts.pd_floor_count) *opts.pd_floor_count += floors;
    out->val[0] = static_cast<T>(acc / static_cast<double>(denom));

    if (out->requires_grad)
        tape.record([out9, out, y = std::move(y), opts, denom, plane, N] {
            auto theta_at = [&opts](int n) -> T {
                if (opts.param_var) return opts.param_var->val[opts.param_var->numel() == 1 ? 0 : n];
                return opts.param_const[opts.param_const.size() == 1 ? 0 : static_cast<size_t>(n)];
            };
            const T go = out->grad[0] / static_cast<T>(denom);
            for (int n = 0; n < N; ++n) {
                const T theta = theta_at(n);
                T g_theta = T(0);
                for (int64_t p = 0; p < plane; ++p) {
                    if (opts.mask && !opts.mask->empty() && !(*opts.mask)[n * plane + p]) continue;
                    const int64_t base9 = (static_cast<int64_t>(n) * 9) * plane + p;
                    const int64_t base3 = (static_cast<int64_t>(n) * 3) * plane + p;
                    T mu_ch[3], a_ch[6];
                    for (int c = 0; c < 3; ++c) mu_ch[c] = out9->val[base9 + c * plane];
                    for (int c = 0; c < 6; ++c) a_ch[c] = out9->val[base9 + (3 + c) * plane];
                    Vec3<T> yv{{y[base3], y[base3 + plane], y[base3 + 2 * plane]}};
                    detail::NllPixel<T> px;
                    px.forward(mu_ch, a_ch, yv, theta, opts.kind, opts.diag_only);
                    T g_mu[3] = {};
                    T g_a[6] = {};
                    px.backward(go, opts.kind, opts.diag_only, g_mu, g_a, &g_theta);
                    if (out9->requires_grad) {
                        for (int c = 0; c < 3; ++c) out9->grad[base9 + c * plane] += g_mu[c];
                        for (int c = 0; c < 6; ++c) out9->grad[base9 + (3 + c) * plane] += g_a[c];
                    }
                }
                if (opts.param_var && opts.param_var->requires_grad)
                    opts.param_var->grad[opts.param_var->numel() == 1 ? 0 : n] += g_theta;
            }
        });
    return out;
}

}  // namespace bsdn

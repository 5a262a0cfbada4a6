#pragma once

#include <cblas.h>

#include <memory>

#include "bsdn/tensor.hpp"

namespace bsdn {

namespace detail {

// Row-major C[m x n] = alpha * op(A) * op(B) + beta * C
inline void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, float alpha, const float* A, const float* B,
                 float beta, float* C) {
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, static_cast<int>(m),
                static_cast<int>(n), static_cast<int>(k), alpha, A, static_cast<int>(ta ? m : k), B,
                static_cast<int>(tb ? k : n), beta, C, static_cast<int>(n));
}
inline void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, double alpha, const double* A, const double* B,
                 double beta, double* C) {
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, static_cast<int>(m),
                static_cast<int>(n), static_cast<int>(k), alpha, A, static_cast<int>(ta ? m : k), B,
                static_cast<int>(tb ? k : n), beta, C, static_cast<int>(n));
}

// Reusable uninitialized scratch; grows monotonically per thread.
template <typename T>
T* scratch(size_t slot, size_t count) {
    struct Buf {
        std::unique_ptr<T[]> p;
        size_t cap = 0;
    };
    thread_local Buf bufs[4];
    Buf& b = bufs[slot];
    if (b.cap < count) {
        b.p = std::make_unique_for_overwrite<T[]>(count);
        b.cap = count;
    }
    return b.p.get();
}

// Batched im2col over all images: cols[(c*KH+kh)*KW+kw][n*HW + y*W+x] =
// x(n, c, y+kh-ph-row_offset, x+kw-pw), zero outside. row_offset > 0 shifts
// the receptive field upward (blind-spot convolutions).
template <typename T>
void im2col(const T* src, int N, int C, int H, int W, int KH, int KW, int row_offset, T* cols) {
    const int ph = KH / 2, pw = KW / 2;
    const int64_t HW = static_cast<int64_t>(H) * W;
    for (int c = 0; c < C; ++c)
        for (int kh = 0; kh < KH; ++kh)
            for (int kw = 0; kw < KW; ++kw) {
                T* krow = cols + ((static_cast<int64_t>(c) * KH + kh) * KW + kw) * N * HW;
                const int dy = kh - ph - row_offset, dx = kw - pw;
                for (int n = 0; n < N; ++n) {
                    const T* im = src + (static_cast<int64_t>(n) * C + c) * HW;
                    T* dst0 = krow + static_cast<int64_t>(n) * HW;
                    for (int y = 0; y < H; ++y) {
                        const int sy = y + dy;
                        T* dst = dst0 + static_cast<int64_t>(y) * W;
                        if (sy < 0 || sy >= H) {
                            std::fill(dst, dst + W, T(0));
                            continue;
                        }
                        const T* srow = im + static_cast<int64_t>(sy) * W;
                        const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
                        if (x0 > 0) std::fill(dst, dst + x0, T(0));
                        if (x1 > x0) std::copy(srow + x0 + dx, srow + x1 + dx, dst + x0);
                        if (x1 < W) std::fill(dst + std::max(x0, x1), dst + W, T(0));
                    }
                }
            }
}

// scatter-add transpose of im2col
template <typename T>
void col2im_add(const T* cols, int N, int C, int H, int W, int KH, int KW, int row_offset, T* dst) {
    const int ph = KH / 2, pw = KW / 2;
    const int64_t HW = static_cast<int64_t>(H) * W;
    for (int c = 0; c < C; ++c)
        for (int kh = 0; kh < KH; ++kh)
            for (int kw = 0; kw < KW; ++kw) {
                const T* krow = cols + ((static_cast<int64_t>(c) * KH + kh) * KW + kw) * N * HW;
                const int dy = kh - ph - row_offset, dx = kw - pw;
                for (int n = 0; n < N; ++n) {
                    T* im = dst + (static_cast<int64_t>(n) * C + c) * HW;
                    const T* src0 = krow + static_cast<int64_t>(n) * HW;
                    for (int y = 0; y < H; ++y) {
                        const int sy = y + dy;
                        if (sy < 0 || sy >= H) continue;
                        T* drow = im + static_cast<int64_t>(sy) * W;
                        const T* srow = src0 + static_cast<int64_t>(y) * W;
                        const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
                        for (int x = x0; x < x1; ++x) drow[x + dx] += srow[x];
                    }
                }
            }
}

// [N,C,HW] -> [C, N*HW]
template <typename T>
void to_channel_major(const T* src, int N, int C, int64_t HW, T* dst) {
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            std::copy_n(src + (static_cast<int64_t>(n) * C + c) * HW, HW,
                        dst + static_cast<int64_t>(c) * N * HW + static_cast<int64_t>(n) * HW);
}

}  // namespace detail

// Same-padding 2-d convolution, weights [Cout, Cin, KH, KW], bias [Cout],
// odd kernel sizes. row_offset k > 0 implements the receptive-field shift
// (equivalent to: pad k zero rows on top, convolve, crop k bottom rows).
// One GEMM per pass over the whole batch via im2col.
template <typename T>
TensorPtr<T> conv2d(Tape<T>& tape, const TensorPtr<T>& x, const TensorPtr<T>& w, const TensorPtr<T>& b,
                    int row_offset = 0) {
    if (w->shape.size() != 4 || x->shape.size() != 4) throw std::invalid_argument("conv2d: 4-d tensors required");
    const int N = x->n(), Cin = x->c(), H = x->h(), W = x->w();
    const int Cout = w->dim(0), KH = w->dim(2), KW = w->dim(3);
    if (w->dim(1) != Cin) throw std::invalid_argument("conv2d: channel mismatch");
    if (KH % 2 == 0 || KW % 2 == 0) throw std::invalid_argument("conv2d: odd kernel sizes required");
    if (b->numel() != Cout) throw std::invalid_argument("conv2d: bias size mismatch");

    const int64_t HW = static_cast<int64_t>(H) * W;
    const int64_t NHW = static_cast<int64_t>(N) * HW;
    const int K = Cin * KH * KW;
    const bool plain1x1 = (KH == 1 && KW == 1 && row_offset == 0);
    auto out = detail::op_output(tape, {N, Cout, H, W}, {&x, &w, &b});

    {
        const T* mat;
        if (plain1x1 && N == 1) {
            mat = x->val.data();
        } else if (plain1x1) {
            T* cm = detail::scratch<T>(0, static_cast<size_t>(K) * NHW);
            detail::to_channel_major(x->val.data(), N, Cin, HW, cm);
            mat = cm;
        } else {
            T* cols = detail::scratch<T>(0, static_cast<size_t>(K) * NHW);
            detail::im2col(x->val.data(), N, Cin, H, W, KH, KW, row_offset, cols);
            mat = cols;
        }
        T* tmp = (N == 1) ? out->val.data() : detail::scratch<T>(1, static_cast<size_t>(Cout) * NHW);
        detail::gemm(false, false, Cout, NHW, K, T(1), w->val.data(), mat, T(0), tmp);
        if (N == 1) {
            for (int co = 0; co < Cout; ++co) {
                const T bias = b->val[co];
                T* row = out->val.data() + static_cast<int64_t>(co) * HW;
                for (int64_t i = 0; i < HW; ++i) row[i] += bias;
            }
        } else {
            for (int n = 0; n < N; ++n)
                for (int co = 0; co < Cout; ++co) {
                    const T bias = b->val[co];
                    const T* src = tmp + static_cast<int64_t>(co) * NHW + static_cast<int64_t>(n) * HW;
                    T* dst = out->val.data() + (static_cast<int64_t>(n) * Cout + co) * HW;
                    for (int64_t i = 0; i < HW; ++i) dst[i] = src[i] + bias;
                }
        }
    }

    if (out->requires_grad)
        tape.record([x, w, b, out, row_offset] {
            const int N = x->n(), Cin = x->c(), H = x->h(), W = x->w();
            const int Cout = w->dim(0), KH = w->dim(2), KW = w->dim(3);
            const int64_t HW = static_cast<int64_t>(H) * W, NHW = static_cast<int64_t>(N) * HW;
            const int K = Cin * KH * KW;
            const bool plain1x1 = (KH == 1 && KW == 1 && row_offset == 0);

            // gradient in channel-major layout
            const T* dyt;
            if (N == 1) {
                dyt = out->grad.data();
            } else {
                T* g = detail::scratch<T>(2, static_cast<size_t>(Cout) * NHW);
                detail::to_channel_major(out->grad.data(), N, Cout, HW, g);
                dyt = g;
            }
            if (b->requires_grad)
                for (int co = 0; co < Cout; ++co) {
                    double acc = 0.0;
                    const T* row = dyt + static_cast<int64_t>(co) * NHW;
                    for (int64_t i = 0; i < NHW; ++i) acc += static_cast<double>(row[i]);
                    b->grad[co] += static_cast<T>(acc);
                }
            if (w->requires_grad) {
                const T* mat;
                if (plain1x1 && N == 1) {
                    mat = x->val.data();
                } else if (plain1x1) {
                    T* cm = detail::scratch<T>(0, static_cast<size_t>(K) * NHW);
                    detail::to_channel_major(x->val.data(), N, Cin, HW, cm);
                    mat = cm;
                } else {
                    T* cols = detail::scratch<T>(0, static_cast<size_t>(K) * NHW);
                    detail::im2col(x->val.data(), N, Cin, H, W, KH, KW, row_offset, cols);
                    mat = cols;
                }
                // dW[Cout x K] += dY[Cout x NHW] * cols^T
                detail::gemm(false, true, Cout, K, NHW, T(1), dyt, mat, T(1), w->grad.data());
            }
            if (x->requires_grad) {
                if (plain1x1 && N == 1) {
                    detail::gemm(true, false, K, NHW, Cout, T(1), w->val.data(), dyt, T(1), x->grad.data());
                } else {
                    T* colg = detail::scratch<T>(3, static_cast<size_t>(K) * NHW);
                    detail::gemm(true, false, K, NHW, Cout, T(1), w->val.data(), dyt, T(0), colg);
                    if (plain1x1) {
                        for (int n = 0; n < N; ++n)
                            for (int c = 0; c < Cin; ++c) {
                                const T* src = colg + static_cast<int64_t>(c) * NHW + static_cast<int64_t>(n) * HW;
                                T* dst = x->grad.data() + (static_cast<int64_t>(n) * Cin + c) * HW;
                                for (int64_t i = 0; i < HW; ++i) dst[i] += src[i];
                            }
                    } else {
                        detail::col2im_add(colg, N, Cin, H, W, KH, KW, row_offset, x->grad.data());
                    }
                }
            }
        });
    return out;
}

// 2x2 max pooling, stride 2, even spatial dims. row_offset 1 pools the
// window shifted one row upward with a virtual zero row above the image
// (equivalent to: pad one zero row on top, crop the bottom row, pool).
// Gradient routes to the argmax; ties break to the first element in
// row-major window order; the virtual zero row receives no gradient.
template <typename T>
TensorPtr<T> maxpool2x2(Tape<T>& tape, const TensorPtr<T>& x, int row_offset = 0) {
    const int N = x->n(), C = x->c(), H = x->h(), W = x->w();
    if (H % 2 != 0 || W % 2 != 0) throw std::invalid_argument("maxpool2x2: odd spatial dims");
    const int Ho = H / 2, Wo = W / 2;
    auto out = detail::op_output(tape, {N, C, Ho, Wo}, {&x});
    auto argmax = std::make_shared<std::vector<int8_t>>(out->val.size());
    size_t oi = 0;
    for (int in = 0; in < N; ++in)
        for (int ic = 0; ic < C; ++ic)
            for (int y = 0; y < Ho; ++y)
                for (int xx = 0; xx < Wo; ++xx, ++oi) {
                    T best{};
                    int8_t bi = -1;
                    for (int8_t k = 0; k < 4; ++k) {
                        const int sy = 2 * y + k / 2 - row_offset;
                        const T v = sy < 0 ? T(0) : x->val[x->at4(in, ic, sy, 2 * xx + k % 2)];
                        if (bi < 0 || v > best) {
                            best = v;
                            bi = k;
                        }
                    }
                    out->val[oi] = best;
                    (*argmax)[oi] = bi;
                }
    if (out->requires_grad)
        tape.record([x, out, argmax, row_offset] {
            const int N = x->n(), C = x->c(), Ho = out->h(), Wo = out->w();
            size_t oi = 0;
            for (int in = 0; in < N; ++in)
                for (int ic = 0; ic < C; ++ic)
                    for (int y = 0; y < Ho; ++y)
                        for (int xx = 0; xx < Wo; ++xx, ++oi) {
                            const int8_t k = (*argmax)[oi];
                            const int sy = 2 * y + k / 2 - row_offset;
                            if (sy >= 0) x->grad[x->at4(in, ic, sy, 2 * xx + k % 2)] += out->grad[oi];
                        }
        });
    return out;
}

// 2x2 nearest-neighbor upsampling.
template <typename T>
TensorPtr<T> upsample2x2_nearest(Tape<T>& tape, const TensorPtr<T>& x) {
    const int N = x->n(), C = x->c(), H = x->h(), W = x->w();
    auto out = detail::op_output(tape, {N, C, 2 * H, 2 * W}, {&x});
    for (int in = 0; in < N; ++in)
        for (int ic = 0; ic < C; ++ic)
            for (int y = 0; y < H; ++y) {
                const T* src = x->val.data() + x->at4(in, ic, y, 0);
                T* d0 = out->val.data() + out->at4(in, ic, 2 * y, 0);
                T* d1 = out->val.data() + out->at4(in, ic, 2 * y + 1, 0);
                for (int xx = 0; xx < W; ++xx) {
                    d0[2 * xx] = d0[2 * xx + 1] = src[xx];
                    d1[2 * xx] = d1[2 * xx + 1] = src[xx];
                }
            }
    if (out->requires_grad)
        tape.record([x, out] {
            const int N = x->n(), C = x->c(), H = x->h(), W = x->w();
            for (int in = 0; in < N; ++in)
                for (int ic = 0; ic < C; ++ic)
                    for (int y = 0; y < H; ++y) {
                        T* dst = x->grad.data() + x->at4(in, ic, y, 0);
                        const T* g0 = out->grad.data() + out->at4(in, ic, 2 * y, 0);
                        const T* g1 = out->grad.data() + out->at4(in, ic, 2 * y + 1, 0);
                        for (int xx = 0; xx < W; ++xx)
                            dst[xx] += g0[2 * xx] + g0[2 * xx + 1] + g1[2 * xx] + g1[2 * xx + 1];
                    }
        });
    return out;
}

// Restricted-receptive-field convolution: equivalent to appending KH/2 zero
// rows at the top, convolving with same padding, and cropping the bottom
// rows. Output row r then sees input rows <= r only (center row included).
template <typename T>
TensorPtr<T> shifted_conv(Tape<T>& tape, const TensorPtr<T>& x, const TensorPtr<T>& w, const TensorPtr<T>& b) {
    return conv2d(tape, x, w, b, w->dim(2) / 2);
}

// Shifted 2x2 maxpool: one zero row at top, bottom row cropped, then pooled;
// keeps the downsample/upsample pair's receptive field from growing downward.
template <typename T>
TensorPtr<T> shifted_downsample(Tape<T>& tape, const TensorPtr<T>& x) {
    return maxpool2x2(tape, x, 1);
}

}  // namespace bsdn

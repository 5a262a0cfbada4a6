#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

namespace bsdn {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

// Value + gradient storage. NCHW convention for 4-d tensors. f32 is the
// training precision; the same code instantiates at f64 for gradient checks.
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> val;
    std::vector<T> grad;  // allocated lazily, same extent as val
    bool requires_grad = false;

    int64_t numel() const { return static_cast<int64_t>(val.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }

    // 4-d accessors
    int n() const { return shape[0]; }
    int c() const { return shape[1]; }
    int h() const { return shape[2]; }
    int w() const { return shape[3]; }
    int64_t at4(int in, int ic, int ih, int iw) const {
        return ((static_cast<int64_t>(in) * c() + ic) * h() + ih) * w() + iw;
    }

    void ensure_grad() {
        if (grad.size() != val.size()) grad.assign(val.size(), T(0));
    }
    void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

template <typename T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

template <typename T>
TensorPtr<T> make_tensor(Shape shape, bool requires_grad = false) {
    auto t = std::make_shared<Tensor<T>>();
    t->shape = std::move(shape);
    t->val.assign(static_cast<size_t>(shape_numel(t->shape)), T(0));
    t->requires_grad = requires_grad;
    if (requires_grad) t->ensure_grad();
    return t;
}

template <typename T>
bool all_finite(const std::vector<T>& v) {
    for (T x : v)
        if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
}

// Reverse-mode tape. Ops run eagerly and push a backward closure; backward()
// replays them in reverse from a scalar loss. A tape with recording disabled
// is a plain inference context (no closures, no grad buffers).
template <typename T>
class Tape {
public:
    explicit Tape(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }

    void record(std::function<void()> fn) {
        if (recording_) ops_.push_back(std::move(fn));
    }

    void backward(const TensorPtr<T>& loss) {
        if (!recording_) throw std::logic_error("backward() on a non-recording tape");
        if (loss->numel() != 1) throw std::invalid_argument("backward() expects a scalar loss");
        loss->ensure_grad();
        loss->grad[0] = T(1);
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    }

    size_t num_ops() const { return ops_.size(); }
    void clear() { ops_.clear(); }

private:
    bool recording_;
    std::vector<std::function<void()>> ops_;
};

namespace detail {

template <typename T>
TensorPtr<T> op_output(Tape<T>& tape, Shape shape, std::initializer_list<const TensorPtr<T>*> inputs) {
    bool rg = false;
    if (tape.recording())
        for (auto* in : inputs) rg = rg || (*in)->requires_grad;
    auto out = make_tensor<T>(std::move(shape), rg);
    if (rg)
        for (auto* in : inputs)
            if ((*in)->requires_grad) (*in)->ensure_grad();
    return out;
}

}  // namespace detail

// ----------------------------------------------------------------------------
// elementwise and structural ops

template <typename T>
TensorPtr<T> leaky_relu(Tape<T>& tape, const TensorPtr<T>& x, T slope = T(0.1)) {
    auto out = detail::op_output(tape, x->shape, {&x});
    const size_t n = x->val.size();
    for (size_t i = 0; i < n; ++i) {
        T v = x->val[i];
        out->val[i] = v >= T(0) ? v : slope * v;
    }
    if (out->requires_grad)
        tape.record([x, out, slope] {
            const size_t m = x->val.size();
            for (size_t i = 0; i < m; ++i) x->grad[i] += out->grad[i] * (x->val[i] >= T(0) ? T(1) : slope);
        });
    return out;
}

// Pads with zeros (positive) or crops (negative) rows/columns of a 4-d tensor.
template <typename T>
TensorPtr<T> pad_crop(Tape<T>& tape, const TensorPtr<T>& x, int top, int bottom, int left = 0, int right = 0) {
    const int N = x->n(), C = x->c(), H = x->h(), W = x->w();
    const int H2 = H + top + bottom, W2 = W + left + right;
    if (H2 < 1 || W2 < 1) throw std::invalid_argument("pad_crop: empty result");
    auto out = detail::op_output(tape, {N, C, H2, W2}, {&x});
    for (int in = 0; in < N; ++in)
        for (int ic = 0; ic < C; ++ic)
            for (int y = 0; y < H2; ++y) {
                int sy = y - top;
                if (sy < 0 || sy >= H) continue;  // zero fill
                for (int xx = 0; xx < W2; ++xx) {
                    int sx = xx - left;
                    if (sx < 0 || sx >= W) continue;
                    out->val[out->at4(in, ic, y, xx)] = x->val[x->at4(in, ic, sy, sx)];
                }
            }
    if (out->requires_grad)
        tape.record([x, out, top, left] {
            const int N2 = out->n(), C2 = out->c(), H2b = out->h(), W2b = out->w();
            const int H = x->h(), W = x->w();
            for (int in = 0; in < N2; ++in)
                for (int ic = 0; ic < C2; ++ic)
                    for (int y = 0; y < H2b; ++y) {
                        int sy = y - top;
                        if (sy < 0 || sy >= H) continue;
                        for (int xx = 0; xx < W2b; ++xx) {
                            int sx = xx - left;
                            if (sx < 0 || sx >= W) continue;
                            x->grad[x->at4(in, ic, sy, sx)] += out->grad[out->at4(in, ic, y, xx)];
                        }
                    }
        });
    return out;
}

// Pad one zero row at top, drop the bottom row: output row r = input row r-1.
template <typename T>
TensorPtr<T> shift_down_one(Tape<T>& tape, const TensorPtr<T>& x) {
    return pad_crop(tape, x, +1, -1);
}

template <typename T>
TensorPtr<T> concat_channels(Tape<T>& tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    if (a->n() != b->n() || a->h() != b->h() || a->w() != b->w())
        throw std::invalid_argument("concat_channels: shape mismatch");
    const int N = a->n(), Ca = a->c(), Cb = b->c(), H = a->h(), W = a->w();
    auto out = detail::op_output(tape, {N, Ca + Cb, H, W}, {&a, &b});
    const size_t plane = static_cast<size_t>(H) * W;
    for (int in = 0; in < N; ++in) {
        std::copy_n(a->val.data() + static_cast<size_t>(in) * Ca * plane, static_cast<size_t>(Ca) * plane,
                    out->val.data() + out->at4(in, 0, 0, 0));
        std::copy_n(b->val.data() + static_cast<size_t>(in) * Cb * plane, static_cast<size_t>(Cb) * plane,
                    out->val.data() + out->at4(in, Ca, 0, 0));
    }
    if (out->requires_grad)
        tape.record([a, b, out] {
            const int N = a->n(), Ca = a->c(), Cb = b->c();
            const size_t plane = static_cast<size_t>(a->h()) * a->w();
            for (int in = 0; in < N; ++in) {
                if (a->requires_grad) {
                    const T* g = out->grad.data() + out->at4(in, 0, 0, 0);
                    T* dst = a->grad.data() + static_cast<size_t>(in) * Ca * plane;
                    for (size_t i = 0; i < Ca * plane; ++i) dst[i] += g[i];
                }
                if (b->requires_grad) {
                    const T* g = out->grad.data() + out->at4(in, Ca, 0, 0);
                    T* dst = b->grad.data() + static_cast<size_t>(in) * Cb * plane;
                    for (size_t i = 0; i < Cb * plane; ++i) dst[i] += g[i];
                }
            }
        });
    return out;
}

namespace detail {
// Source coordinates for a k-quarter-turn CCW rotation: out(r,c) = in(sy,sx).
inline void rot_src(int k, int r, int c, int side, int& sy, int& sx) {
    switch (k & 3) {
        case 1: sy = c; sx = side - 1 - r; break;
        case 2: sy = side - 1 - r; sx = side - 1 - c; break;
        case 3: sy = side - 1 - c; sx = r; break;
        default: sy = r; sx = c; break;
    }
}
}  // namespace detail

// Four rotated copies (0/90/180/270 deg CCW) stacked on the batch axis:
// out[k*N + n] = rot_k(in[n]). Square spatial dims required.
template <typename T>
TensorPtr<T> rotate_stack(Tape<T>& tape, const TensorPtr<T>& x) {
    const int N = x->n(), C = x->c(), H = x->h(), W = x->w();
    if (H != W) throw std::invalid_argument("rotate_stack: square input required");
    auto out = detail::op_output(tape, {4 * N, C, H, W}, {&x});
    for (int k = 0; k < 4; ++k)
        for (int in = 0; in < N; ++in)
            for (int ic = 0; ic < C; ++ic)
                for (int y = 0; y < H; ++y)
                    for (int xx = 0; xx < W; ++xx) {
                        int sy, sx;
                        detail::rot_src(k, y, xx, H, sy, sx);
                        out->val[out->at4(k * N + in, ic, y, xx)] = x->val[x->at4(in, ic, sy, sx)];
                    }
    if (out->requires_grad)
        tape.record([x, out] {
            const int N = x->n(), C = x->c(), H = x->h(), W = x->w();
            for (int k = 0; k < 4; ++k)
                for (int in = 0; in < N; ++in)
                    for (int ic = 0; ic < C; ++ic)
                        for (int y = 0; y < H; ++y)
                            for (int xx = 0; xx < W; ++xx) {
                                int sy, sx;
                                detail::rot_src(k, y, xx, H, sy, sx);
                                x->grad[x->at4(in, ic, sy, sx)] += out->grad[out->at4(k * N + in, ic, y, xx)];
                            }
        });
    return out;
}

// Inverse of rotate_stack: splits the batch axis into 4 groups, undoes each
// rotation and concatenates on the channel axis (4x channels).
template <typename T>
TensorPtr<T> unrotate_combine(Tape<T>& tape, const TensorPtr<T>& x) {
    const int NB = x->n(), C = x->c(), H = x->h(), W = x->w();
    if (NB % 4 != 0) throw std::logic_error("unrotate_combine: batch not divisible by 4");
    if (H != W) throw std::invalid_argument("unrotate_combine: square input required");
    const int N = NB / 4;
    auto out = detail::op_output(tape, {N, 4 * C, H, W}, {&x});
    for (int k = 0; k < 4; ++k) {
        const int inv = (4 - k) & 3;
        for (int in = 0; in < N; ++in)
            for (int ic = 0; ic < C; ++ic)
                for (int y = 0; y < H; ++y)
                    for (int xx = 0; xx < W; ++xx) {
                        int sy, sx;
                        detail::rot_src(inv, y, xx, H, sy, sx);
                        out->val[out->at4(in, k * C + ic, y, xx)] = x->val[x->at4(k * N + in, ic, sy, sx)];
                    }
    }
    if (out->requires_grad)
        tape.record([x, out] {
            const int N = out->n(), C = x->c(), H = x->h(), W = x->w();
            for (int k = 0; k < 4; ++k) {
                const int inv = (4 - k) & 3;
                for (int in = 0; in < N; ++in)
                    for (int ic = 0; ic < C; ++ic)
                        for (int y = 0; y < H; ++y)
                            for (int xx = 0; xx < W; ++xx) {
                                int sy, sx;
                                detail::rot_src(inv, y, xx, H, sy, sx);
                                x->grad[x->at4(k * N + in, ic, sy, sx)] += out->grad[out->at4(in, k * C + ic, y, xx)];
                            }
            }
        });
    return out;
}

// ----------------------------------------------------------------------------
// reductions and scalar plumbing

template <typename T>
TensorPtr<T> reduce_mean(Tape<T>& tape, const TensorPtr<T>& x) {
    auto out = detail::op_output(tape, {1}, {&x});
    double acc = 0.0;
    for (T v : x->val) acc += static_cast<double>(v);
    out->val[0] = static_cast<T>(acc / static_cast<double>(x->numel()));
    if (out->requires_grad)
        tape.record([x, out] {
            const T g = out->grad[0] / static_cast<T>(x->numel());
            for (T& gi : x->grad) gi += g;
        });
    return out;
}

// Per-image mean over C,H,W of a 4-d tensor; output shape {N}.
template <typename T>
TensorPtr<T> spatial_mean(Tape<T>& tape, const TensorPtr<T>& x) {
    const int N = x->n();
    const int64_t per = x->numel() / N;
    auto out = detail::op_output(tape, {N}, {&x});
    for (int in = 0; in < N; ++in) {
        double acc = 0.0;
        const T* p = x->val.data() + in * per;
        for (int64_t i = 0; i < per; ++i) acc += static_cast<double>(p[i]);
        out->val[in] = static_cast<T>(acc / static_cast<double>(per));
    }
    if (out->requires_grad)
        tape.record([x, out] {
            const int N = x->n();
            const int64_t per = x->numel() / N;
            for (int in = 0; in < N; ++in) {
                const T g = out->grad[in] / static_cast<T>(per);
                T* gp = x->grad.data() + in * per;
                for (int64_t i = 0; i < per; ++i) gp[i] += g;
            }
        });
    return out;
}

// out = a + cb * b, identical shapes
template <typename T>
TensorPtr<T> add_scaled(Tape<T>& tape, const TensorPtr<T>& a, const TensorPtr<T>& b, T cb = T(1)) {
    if (a->val.size() != b->val.size()) throw std::invalid_argument("add_scaled: shape mismatch");
    auto out = detail::op_output(tape, a->shape, {&a, &b});
    for (size_t i = 0; i < a->val.size(); ++i) out->val[i] = a->val[i] + cb * b->val[i];
    if (out->requires_grad)
        tape.record([a, b, out, cb] {
            for (size_t i = 0; i < out->val.size(); ++i) {
                if (a->requires_grad) a->grad[i] += out->grad[i];
                if (b->requires_grad) b->grad[i] += cb * out->grad[i];
            }
        });
    return out;
}

template <typename T>
TensorPtr<T> scale(Tape<T>& tape, const TensorPtr<T>& x, T c) {
    auto out = detail::op_output(tape, x->shape, {&x});
    for (size_t i = 0; i < x->val.size(); ++i) out->val[i] = c * x->val[i];
    if (out->requires_grad)
        tape.record([x, out, c] {
            for (size_t i = 0; i < x->val.size(); ++i) x->grad[i] += c * out->grad[i];
        });
    return out;
}

namespace detail {
template <typename T>
T softplus_val(T x) {
    if (x > T(20)) return x;
    if (x < T(-20)) return std::exp(x);
    return std::log1p(std::exp(x));
}
template <typename T>
T sigmoid_val(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    T e = std::exp(x);
    return e / (T(1) + e);
}
}  // namespace detail

template <typename T>
TensorPtr<T> softplus(Tape<T>& tape, const TensorPtr<T>& x) {
    auto out = detail::op_output(tape, x->shape, {&x});
    for (size_t i = 0; i < x->val.size(); ++i) out->val[i] = detail::softplus_val(x->val[i]);
    if (out->requires_grad)
        tape.record([x, out] {
            for (size_t i = 0; i < x->val.size(); ++i) x->grad[i] += out->grad[i] * detail::sigmoid_val(x->val[i]);
        });
    return out;
}

template <typename T>
TensorPtr<T> sigmoid(Tape<T>& tape, const TensorPtr<T>& x) {
    auto out = detail::op_output(tape, x->shape, {&x});
    for (size_t i = 0; i < x->val.size(); ++i) out->val[i] = detail::sigmoid_val(x->val[i]);
    if (out->requires_grad)
        tape.record([x, out] {
            for (size_t i = 0; i < x->val.size(); ++i) {
                T s = out->val[i];
                x->grad[i] += out->grad[i] * s * (T(1) - s);
            }
        });
    return out;
}

}  // namespace bsdn

#pragma once

#include <algorithm>
#include <cassert>
#include <stdexcept>
#include <vector>

namespace bsdn {

// Pixel container, planar CHW, values nominally in [0,1] for clean data.
// Corrupted data may leave [0,1] and is not clamped here.
struct Image {
    int h = 0, w = 0, c = 0;
    std::vector<float> data;  // size c*h*w

    Image() = default;
    Image(int h_, int w_, int c_) : h(h_), w(w_), c(c_), data(static_cast<size_t>(c_) * h_ * w_, 0.f) {}

    float& at(int ch, int y, int x) { return data[(static_cast<size_t>(ch) * h + y) * w + x]; }
    float at(int ch, int y, int x) const { return data[(static_cast<size_t>(ch) * h + y) * w + x]; }
    size_t pixels() const { return static_cast<size_t>(h) * w; }
    bool same_shape(const Image& o) const { return h == o.h && w == o.w && c == o.c; }
};

inline Image crop(const Image& img, int y0, int x0, int side) {
    assert(y0 >= 0 && x0 >= 0 && y0 + side <= img.h && x0 + side <= img.w);
    Image out(side, side, img.c);
    for (int ch = 0; ch < img.c; ++ch)
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x) out.at(ch, y, x) = img.at(ch, y0 + y, x0 + x);
    return out;
}

// k quarter-turns counter-clockwise; square images only.
inline Image rotate90(const Image& img, int k) {
    assert(img.h == img.w);
    k = ((k % 4) + 4) % 4;
    const int s = img.h;
    Image out(s, s, img.c);
    for (int ch = 0; ch < img.c; ++ch)
        for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x) {
                int sy, sx;
                switch (k) {
                    case 1: sy = x; sx = s - 1 - y; break;
                    case 2: sy = s - 1 - y; sx = s - 1 - x; break;
                    case 3: sy = s - 1 - x; sx = y; break;
                    default: sy = y; sx = x; break;
                }
                out.at(ch, y, x) = img.at(ch, sy, sx);
            }
    return out;
}

inline void clamp01(Image& img) {
    for (float& v : img.data) v = std::min(1.f, std::max(0.f, v));
}

// Mirror-pads on the bottom/right to a square side that is a multiple of
// `multiple`. Reflection does not repeat the edge pixel (src index 2n-2-i),
// applied periodically so pads larger than the image stay well-defined.
inline Image mirror_pad_to_square(const Image& img, int multiple) {
    int side = std::max(img.h, img.w);
    side = ((side + multiple - 1) / multiple) * multiple;
    if (side == img.h && side == img.w) return img;
    if (img.h < 2 || img.w < 2) throw std::invalid_argument("mirror_pad_to_square: image too small");
    Image out(side, side, img.c);
    auto reflect = [](int i, int n) {
        const int period = 2 * n - 2;
        int m = i % period;
        return m < n ? m : period - m;
    };
    for (int ch = 0; ch < img.c; ++ch)
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x) out.at(ch, y, x) = img.at(ch, reflect(y, img.h), reflect(x, img.w));
    return out;
}

inline Image crop_to(const Image& img, int h, int w) {
    assert(h <= img.h && w <= img.w);
    Image out(h, w, img.c);
    for (int ch = 0; ch < img.c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(ch, y, x) = img.at(ch, y, x);
    return out;
}

}  // namespace bsdn

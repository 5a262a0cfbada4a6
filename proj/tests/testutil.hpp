#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "bsdn/image.hpp"
#include "bsdn/rng.hpp"
#include "bsdn/runtime.hpp"
#include "bsdn/tensor.hpp"

namespace testutil {

// pin the BLAS thread count before any test runs (BSDN_THREADS overrides)
inline const bool kThreadsPinned = [] {
    bsdn::init_threads_from_env(1);
    return true;
}();

using bsdn::Image;
using bsdn::Rng;

// ---- finite-difference gradient checking ------------------------------------
//
// build() must construct the loss from the given leaf tensors on the supplied
// tape. Analytic gradients come from one tape.backward(); the finite
// difference probes re-run build() with perturbed leaf values.

struct GradCheckResult {
    double max_rel_err = 0.0;
    int checked = 0;
    int skipped = 0;  // probes sitting on a non-smooth point (maxpool tie, relu kink)
};

inline double rel_err(double a, double f) {
    const double denom = std::max({std::fabs(a), std::fabs(f), 1e-6});
    return std::fabs(a - f) / denom;
}

// Central differences with a two-step-size consistency filter: probes where
// fd(h) and fd(h/2) disagree sit on a kink (maxpool argmax switch, leaky-relu
// corner) and are skipped — a wrong backward still shows up as a consistent
// finite difference that mismatches the analytic gradient.
inline GradCheckResult grad_check(
    const std::vector<bsdn::TensorPtr<double>>& leaves,
    const std::function<bsdn::TensorPtr<double>(bsdn::Tape<double>&)>& build, double h = 1e-5,
    int max_probes_per_leaf = 0 /* 0 = all elements */, uint64_t probe_seed = 7) {
    for (const auto& l : leaves) {
        l->ensure_grad();
        l->zero_grad();
    }
    bsdn::Tape<double> tape;
    auto loss = build(tape);
    tape.backward(loss);
    std::vector<std::vector<double>> analytic;
    for (const auto& l : leaves) analytic.push_back(l->grad);

    auto eval = [&]() {
        bsdn::Tape<double> t(false);
        return build(t)->val[0];
    };

    GradCheckResult res;
    Rng rng(probe_seed);
    for (size_t li = 0; li < leaves.size(); ++li) {
        auto& leaf = *leaves[li];
        std::vector<size_t> idx;
        if (max_probes_per_leaf <= 0 || static_cast<size_t>(max_probes_per_leaf) >= leaf.val.size()) {
            idx.resize(leaf.val.size());
            for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        } else {
            for (int k = 0; k < max_probes_per_leaf; ++k)
                idx.push_back(static_cast<size_t>(rng.uniform_int(static_cast<int>(leaf.val.size()))));
        }
        const double f0 = eval();
        for (size_t i : idx) {
            const double orig = leaf.val[i];
            auto at = [&](double step) {
                leaf.val[i] = orig + step;
                const double v = eval();
                leaf.val[i] = orig;
                return v;
            };
            const double fp = at(h), fm = at(-h);
            const double fd1 = (fp - fm) / (2.0 * h);
            // curvature test: a kink inside [x-h, x+h] makes the second
            // difference O(h) instead of O(h^2)
            const double secdiff = std::fabs(fp + fm - 2.0 * f0);
            const double firstdiff = std::fabs(fp - fm);
            if (secdiff > 0.02 * std::max(firstdiff, 1e-9)) {
                ++res.skipped;
                continue;
            }
            const double fd2 = (at(h / 2.0) - at(-h / 2.0)) / h;
            if (std::fabs(fd1 - fd2) > 0.05 * std::max({std::fabs(fd1), std::fabs(fd2), 1e-6})) {
                ++res.skipped;
                continue;
            }
            res.max_rel_err = std::max(res.max_rel_err, rel_err(analytic[li][i], fd2));
            ++res.checked;
        }
    }
    return res;
}

// ---- synthetic clean images --------------------------------------------------
//
// Natural-image-like composites: bilinear gradient background, hard-edged
// shapes, oriented texture gratings, and fine structure (thin strokes, small
// dots) whose exact placement is ambiguous from context alone. Colors are
// correlated across channels. Values kept inside [0.02, 0.98] so corruption
// does not immediately clip at export.

inline constexpr int kSynthVersion = 2;  // bump to invalidate cached toy models

inline Image synth_image(Rng& rng, int h, int w) {
    Image img(h, w, 3);
    float corner[4][3];
    for (auto& c : corner) {
        const float base = static_cast<float>(rng.uniform(0.15, 0.85));
        for (int ch = 0; ch < 3; ++ch) c[ch] = base + static_cast<float>(rng.uniform(-0.18, 0.18));
    }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const float fy = h > 1 ? static_cast<float>(y) / (h - 1) : 0.f;
            const float fx = w > 1 ? static_cast<float>(x) / (w - 1) : 0.f;
            for (int ch = 0; ch < 3; ++ch)
                img.at(ch, y, x) = (1 - fy) * ((1 - fx) * corner[0][ch] + fx * corner[1][ch]) +
                                   fy * ((1 - fx) * corner[2][ch] + fx * corner[3][ch]);
        }

    const int shapes = 6 + rng.uniform_int(8);
    for (int s = 0; s < shapes; ++s) {
        const bool ellipse = rng.uniform() < 0.5;
        const int cy = rng.uniform_int(h), cx = rng.uniform_int(w);
        const int ry = 2 + rng.uniform_int(std::max(2, h / 5));
        const int rx = 2 + rng.uniform_int(std::max(2, w / 5));
        const float base = static_cast<float>(rng.uniform(0.1, 0.9));
        float col[3];
        for (int ch = 0; ch < 3; ++ch) col[ch] = base + static_cast<float>(rng.uniform(-0.25, 0.25));
        for (int y = std::max(0, cy - ry); y < std::min(h, cy + ry + 1); ++y)
            for (int x = std::max(0, cx - rx); x < std::min(w, cx + rx + 1); ++x) {
                if (ellipse) {
                    const double dy = static_cast<double>(y - cy) / ry, dx = static_cast<double>(x - cx) / rx;
                    if (dy * dy + dx * dx > 1.0) continue;
                }
                for (int ch = 0; ch < 3; ++ch) img.at(ch, y, x) = col[ch];
            }
    }

    // oriented texture gratings in localized regions
    const int gratings = 2 + rng.uniform_int(3);
    for (int g = 0; g < gratings; ++g) {
        const int cy = rng.uniform_int(h), cx = rng.uniform_int(w);
        const int ry = h / 6 + rng.uniform_int(std::max(1, h / 3));
        const int rx = w / 6 + rng.uniform_int(std::max(1, w / 3));
        const double wavelength = rng.uniform(3.0, 9.0);
        const double theta = rng.uniform(0.0, 3.14159265358979);
        const double kyy = 6.283185307179586 / wavelength * std::sin(theta);
        const double kxx = 6.283185307179586 / wavelength * std::cos(theta);
        const double phase = rng.uniform(0.0, 6.283185307179586);
        const double amp = rng.uniform(0.05, 0.14);
        float gain[3];
        for (int ch = 0; ch < 3; ++ch) gain[ch] = static_cast<float>(rng.uniform(0.6, 1.0));
        for (int y = std::max(0, cy - ry); y < std::min(h, cy + ry + 1); ++y)
            for (int x = std::max(0, cx - rx); x < std::min(w, cx + rx + 1); ++x) {
                const float v = static_cast<float>(amp * std::sin(kyy * y + kxx * x + phase));
                for (int ch = 0; ch < 3; ++ch) img.at(ch, y, x) += gain[ch] * v;
            }
    }

    // thin strokes: width 1-2 px, random orientation and length
    const int strokes = 4 + rng.uniform_int(8);
    for (int s = 0; s < strokes; ++s) {
        double py = rng.uniform_int(h), px = rng.uniform_int(w);
        const double ang = rng.uniform(0.0, 6.283185307179586);
        const double dy = std::sin(ang), dx = std::cos(ang);
        const int len = 4 + rng.uniform_int(std::max(2, h / 2));
        const int width = 1 + rng.uniform_int(2);
        const float base = static_cast<float>(rng.uniform(0.05, 0.95));
        float col[3];
        for (int ch = 0; ch < 3; ++ch) col[ch] = base + static_cast<float>(rng.uniform(-0.2, 0.2));
        for (int t = 0; t < len; ++t) {
            const int iy = static_cast<int>(std::lround(py)), ix = static_cast<int>(std::lround(px));
            for (int oy = 0; oy < width; ++oy)
                for (int ox = 0; ox < width; ++ox) {
                    const int yy = iy + oy, xx = ix + ox;
                    if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                    for (int ch = 0; ch < 3; ++ch) img.at(ch, yy, xx) = col[ch];
                }
            py += dy;
            px += dx;
        }
    }

    // small dots, radius 1-2 px
    const int dots = 5 + rng.uniform_int(12);
    for (int d = 0; d < dots; ++d) {
        const int cy = rng.uniform_int(h), cx = rng.uniform_int(w);
        const int r = 1 + rng.uniform_int(2);
        const float base = static_cast<float>(rng.uniform(0.05, 0.95));
        float col[3];
        for (int ch = 0; ch < 3; ++ch) col[ch] = base + static_cast<float>(rng.uniform(-0.2, 0.2));
        for (int y = std::max(0, cy - r); y < std::min(h, cy + r + 1); ++y)
            for (int x = std::max(0, cx - r); x < std::min(w, cx + r + 1); ++x) {
                if ((y - cy) * (y - cy) + (x - cx) * (x - cx) > r * r) continue;
                for (int ch = 0; ch < 3; ++ch) img.at(ch, y, x) = col[ch];
            }
    }

    for (float& v : img.data) v = std::min(0.98f, std::max(0.02f, v));
    return img;
}

inline std::vector<Image> synth_dataset(uint64_t seed, int count, int size) {
    std::vector<Image> out;
    for (int i = 0; i < count; ++i) {
        Rng rng(bsdn::derive_seed(seed, 0x5F17, static_cast<uint64_t>(i)));
        out.push_back(synth_image(rng, size, size));
    }
    return out;
}

// ---- misc -------------------------------------------------------------------

inline std::string fresh_tmpdir(const std::string& tag) {
    auto dir = std::filesystem::temp_directory_path() / ("bsdn_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const size_t n = a.size();
    double ma = 0, mb = 0;
    for (size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (size_t i = 0; i < n; ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

}  // namespace testutil

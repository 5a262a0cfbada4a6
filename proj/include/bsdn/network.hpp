#pragma once

#include <cstring>
#include <string>
#include <vector>

#include "bsdn/conv.hpp"
#include "bsdn/optim.hpp"

namespace bsdn {

// U-Net family used everywhere: the receptive-field-restricted blind-spot
// variant (four rotations through one shared branch) and the unrestricted
// baseline. Output heads: 9 channels (mu + upper-triangular A), 3 (mu only /
// N2C / N2N), 1 (auxiliary noise-parameter estimator).
struct NetworkConfig {
    int depth = 3;       // pool/upsample levels; paper uses 5
    int enc_width = 32;  // paper 48
    int dec_width = 64;  // paper 96
    int in_channels = 3;
    int out_channels = 9;
    bool blind_spot = true;

    int nin_a_width() const { return blind_spot ? 4 * dec_width : dec_width; }
    int nin_b_width() const { return dec_width; }
    int side_multiple() const { return 1 << depth; }

    bool valid_input_side(int h, int w) const {
        if (h % side_multiple() != 0 || w % side_multiple() != 0) return false;
        if (blind_spot && h != w) return false;  // rotation closure
        return (h >> depth) >= 1 && (w >> depth) >= 1;
    }
};

template <typename T>
class Network {
public:
    explicit Network(NetworkConfig cfg) : cfg_(cfg) {
        add_conv("enc_conv0", cfg.in_channels, cfg.enc_width, 3);
        add_conv("enc_conv1", cfg.enc_width, cfg.enc_width, 3);
        for (int l = 1; l <= cfg.depth; ++l)
            add_conv("enc_conv" + std::to_string(l + 1), cfg.enc_width, cfg.enc_width, 3);
        for (int l = cfg.depth; l >= 1; --l) {
            const int up_ch = (l == cfg.depth) ? cfg.enc_width : cfg.dec_width;
            const int skip_ch = (l == 1) ? cfg.in_channels : cfg.enc_width;
            add_conv("dec_conv" + std::to_string(l) + "a", up_ch + skip_ch, cfg.dec_width, 3);
            add_conv("dec_conv" + std::to_string(l) + "b", cfg.dec_width, cfg.dec_width, 3);
        }
        const int comb_in = cfg.blind_spot ? 4 * cfg.dec_width : cfg.dec_width;
        add_conv("nin_a", comb_in, cfg.nin_a_width(), 1);
        add_conv("nin_b", cfg.nin_a_width(), cfg.nin_b_width(), 1);
        add_conv("nin_c", cfg.nin_b_width(), cfg.out_channels, 1);
    }

    void init_he(Rng& rng) {
        for (auto& l : layers_) {
            he_fill(rng, *l.w, l.w->dim(1) * l.w->dim(2) * l.w->dim(3));
            std::fill(l.b->val.begin(), l.b->val.end(), T(0));
        }
    }

    TensorPtr<T> forward(Tape<T>& tape, const TensorPtr<T>& input) const {
        if (!cfg_.valid_input_side(input->h(), input->w()))
            throw std::invalid_argument("network: input side must be divisible by 2^depth (square for blind-spot)");
        if (input->c() != cfg_.in_channels) throw std::invalid_argument("network: wrong input channel count");

        auto x = cfg_.blind_spot ? rotate_stack(tape, input) : input;
        std::vector<TensorPtr<T>> skips;  // skips[0] = (rotated) input, then pool outputs
        skips.push_back(x);
        x = leaky_relu(tape, conv(tape, "enc_conv0", x));
        x = leaky_relu(tape, conv(tape, "enc_conv1", x));
        for (int l = 1; l <= cfg_.depth; ++l) {
            x = cfg_.blind_spot ? shifted_downsample(tape, x) : maxpool2x2(tape, x);
            if (l < cfg_.depth) skips.push_back(x);
            x = leaky_relu(tape, conv(tape, "enc_conv" + std::to_string(l + 1), x));
        }
        for (int l = cfg_.depth; l >= 1; --l) {
            x = upsample2x2_nearest(tape, x);
            x = concat_channels(tape, x, skips[static_cast<size_t>(l - 1)]);
            x = leaky_relu(tape, conv(tape, "dec_conv" + std::to_string(l) + "a", x));
            x = leaky_relu(tape, conv(tape, "dec_conv" + std::to_string(l) + "b", x));
        }
        if (cfg_.blind_spot) {
            x = shift_down_one(tape, x);
            x = unrotate_combine(tape, x);
        }
        x = leaky_relu(tape, conv(tape, "nin_a", x));
        x = leaky_relu(tape, conv(tape, "nin_b", x));
        x = conv(tape, "nin_c", x);  // linear head
        return x;
    }

    const NetworkConfig& config() const { return cfg_; }

    std::vector<TensorPtr<T>> parameters() const {
        std::vector<TensorPtr<T>> ps;
        for (const auto& l : layers_) {
            ps.push_back(l.w);
            ps.push_back(l.b);
        }
        return ps;
    }

    // stable name -> tensor listing; checkpoints store exactly this
    std::vector<std::pair<std::string, TensorPtr<T>>> named_parameters() const {
        std::vector<std::pair<std::string, TensorPtr<T>>> ps;
        for (const auto& l : layers_) {
            ps.emplace_back(l.name + ".weight", l.w);
            ps.emplace_back(l.name + ".bias", l.b);
        }
        return ps;
    }

private:
    struct Layer {
        std::string name;
        TensorPtr<T> w, b;
        bool shifted;  // 3x3 convs get the blind-spot row offset
    };

    void add_conv(const std::string& name, int cin, int cout, int k) {
        Layer l;
        l.name = name;
        l.w = make_tensor<T>({cout, cin, k, k}, true);
        l.b = make_tensor<T>({cout}, true);
        l.shifted = cfg_.blind_spot && k > 1;
        layers_.push_back(std::move(l));
    }

    TensorPtr<T> conv(Tape<T>& tape, const std::string& name, const TensorPtr<T>& x) const {
        for (const auto& l : layers_)
            if (l.name == name) return l.shifted ? shifted_conv(tape, x, l.w, l.b) : conv2d(tape, x, l.w, l.b);
        throw std::logic_error("network: no layer named " + name);
    }

    NetworkConfig cfg_;
    std::vector<Layer> layers_;
};

// Verification probe for the architectural blind spot: for random
// (weights, input, pixel) triples the output at the perturbed pixel must be
// bitwise unchanged. A baseline (non-blind-spot) config is expected to
// produce violations, which doubles as a self-test of the probe.
struct BlindSpotViolation {
    int trial = 0, y = 0, x = 0, channel = 0;
    float before = 0.f, after = 0.f;
};

struct BlindSpotReport {
    int trials = 0;
    int violations = 0;
    std::vector<BlindSpotViolation> samples;  // first few violations
};

template <typename T>
BlindSpotReport verify_blindspot(Network<T>& net, int trials, int size, uint64_t seed, bool reinit_weights) {
    const auto& cfg = net.config();
    if (!cfg.valid_input_side(size, size)) throw std::invalid_argument("verify_blindspot: bad input size");
    BlindSpotReport rep;
    rep.trials = trials;
    Rng rng(seed);
    for (int t = 0; t < trials; ++t) {
        if (reinit_weights) net.init_he(rng);
        auto batch = make_tensor<T>({2, cfg.in_channels, size, size});
        const int64_t per = static_cast<int64_t>(cfg.in_channels) * size * size;
        for (int64_t i = 0; i < per; ++i) batch->val[static_cast<size_t>(i)] = static_cast<T>(rng.uniform());
        std::copy_n(batch->val.data(), per, batch->val.data() + per);
        const int py = rng.uniform_int(size), px = rng.uniform_int(size);
        for (int ch = 0; ch < cfg.in_channels; ++ch)
            batch->val[static_cast<size_t>(batch->at4(1, ch, py, px))] = static_cast<T>(rng.uniform());

        Tape<T> tape(false);
        auto out = net.forward(tape, batch);
        bool violated = false;
        for (int ch = 0; ch < cfg.out_channels; ++ch) {
            const T a = out->val[static_cast<size_t>(out->at4(0, ch, py, px))];
            const T b = out->val[static_cast<size_t>(out->at4(1, ch, py, px))];
            if (std::memcmp(&a, &b, sizeof(T)) != 0) {
                violated = true;
                if (rep.samples.size() < 8)
                    rep.samples.push_back({t, py, px, ch, static_cast<float>(a), static_cast<float>(b)});
            }
        }
        if (violated) ++rep.violations;
    }
    return rep;
}

template <typename T>
BlindSpotReport verify_blindspot(const NetworkConfig& cfg, int trials, int size, uint64_t seed) {
    Network<T> net(cfg);
    return verify_blindspot(net, trials, size, seed, /*reinit_weights=*/true);
}

}  // namespace bsdn

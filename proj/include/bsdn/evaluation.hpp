#pragma once

#include <cmath>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "bsdn/bayes.hpp"
#include "bsdn/checkpoint.hpp"
#include "bsdn/noise.hpp"

namespace bsdn {

// 10*log10(1/MSE) over all pixels and channels, reference in [0,1].
// Capped at 99 dB so zero-MSE rows stay finite in reports.
inline double psnr(const Image& reference, const Image& test) {
    if (!reference.same_shape(test)) throw std::invalid_argument("psnr: shape mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < reference.data.size(); ++i) {
        const double d = static_cast<double>(reference.data[i]) - static_cast<double>(test.data[i]);
        acc += d * d;
    }
    const double mse = acc / static_cast<double>(reference.data.size());
    if (mse <= 0.0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

enum class DenoiseMode { prior, posterior };

// A loadable denoiser: main network plus optional auxiliary parameter
// estimator and learned scalar parameter, as produced by training.
class DenoiserModel {
public:
    static DenoiserModel from_container(const Container& c, const std::string& weights = "final") {
        DenoiserModel m;
        m.method_ = c.get("method");
        m.spec_.kind = noise_kind_from_string(c.get("noise.kind"));
        m.spec_.p0 = c.get_double("noise.p0");
        m.spec_.p1 = c.get_double("noise.p1");
        m.spec_.known = knownness_from_string(c.get("noise.knownness"));
        const std::string prefix = weights == "final" ? "" : weights + ".";
        if (weights != "final" && !c.has_tensor_prefix(prefix))
            throw std::runtime_error("checkpoint has no '" + weights + "' weights");
        m.net_ = std::make_unique<Network<float>>(load_network_config(c, "net."));
        load_network(c, *m.net_, prefix + "net.");
        if (c.has("auxnet.depth")) {
            m.aux_ = std::make_unique<Network<float>>(load_network_config(c, "auxnet."));
            load_network(c, *m.aux_, prefix + "aux.");
        }
        if (c.has("learned_param")) m.learned_param_ = c.get_double("learned_param");
        return m;
    }

    const std::string& method() const { return method_; }
    const NoiseSpec& noise_spec() const { return spec_; }
    const NetworkConfig& net_config() const { return net_->config(); }
    bool has_posterior_head() const { return net_->config().out_channels == 9; }
    bool has_learned_param() const { return learned_param_.has_value() || aux_ != nullptr; }

    // Per-image noise parameter estimate in interface units (8-bit sigma,
    // lambda, alpha); requires a learned scalar or an auxiliary network.
    double estimate_param(const Image& noisy) const {
        if (learned_param_) return *learned_param_;
        if (!aux_) throw std::logic_error("model has no learned noise parameter");
        const Image padded = mirror_pad_to_square(noisy, aux_->config().side_multiple());
        Tape<float> tape(false);
        auto x = image_to_tensor(padded);
        auto out = aux_->forward(tape, x);
        double acc = 0.0;
        for (float v : out->val) acc += v;
        const double mean = acc / static_cast<double>(out->numel());
        return spec_.from_internal(raw_to_internal(mean));
    }

    // Two-step test phase: mirror pad to a valid square, run the prior
    // network, optionally combine each pixel's prior with the observed value
    // through the closed-form posterior mean, crop back and clamp to [0,1].
    Image denoise(const Image& noisy, DenoiseMode mode, std::optional<double> param_interface = {}) const {
        if (noisy.c != 3) throw std::invalid_argument("denoise: 3-channel image required");
        const Image padded = mirror_pad_to_square(noisy, net_->config().side_multiple());
        Tape<float> tape(false);
        auto x = image_to_tensor(padded);
        auto out = net_->forward(tape, x);

        Image result(noisy.h, noisy.w, 3);
        const int S = padded.h;
        const size_t plane = static_cast<size_t>(S) * S;
        if (mode == DenoiseMode::prior) {
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < noisy.h; ++y)
                    for (int xx = 0; xx < noisy.w; ++xx)
                        result.at(c, y, xx) = out->val[c * plane + static_cast<size_t>(y) * S + xx];
        } else {
            if (!has_posterior_head())
                throw std::invalid_argument("posterior mode requires a 9-channel (Bayesian) checkpoint");
            const double param = resolve_param_internal(noisy, param_interface);
            // per-pixel 3x3 algebra runs in double: the prior covariance can be
            // ill-conditioned and the cost is negligible next to the network
            for (int y = 0; y < noisy.h; ++y)
                for (int xx = 0; xx < noisy.w; ++xx) {
                    const size_t p = static_cast<size_t>(y) * S + xx;
                    Vec3<double> mu{{out->val[0 * plane + p], out->val[1 * plane + p], out->val[2 * plane + p]}};
                    double a[6];
                    for (int c = 0; c < 6; ++c) a[c] = out->val[(3 + c) * plane + p];
                    if (method_ == "ours-diag") a[1] = a[2] = a[4] = 0.0;
                    const Mat3<double> Sx = prior_covariance(unpack_upper(a));
                    Vec3<double> yv{{noisy.at(0, y, xx), noisy.at(1, y, xx), noisy.at(2, y, xx)}};
                    Vec3<double> post;
                    switch (spec_.kind) {
                        case NoiseKind::gaussian:
                            post = posterior_mean_gaussian(mu, Sx, yv, param);
                            break;
                        case NoiseKind::poisson:
                            post = posterior_mean_poisson(mu, Sx, yv, param);
                            break;
                        case NoiseKind::impulse:
                            post = posterior_mean_impulse(mu, Sx, yv, param);
                            break;
                    }
                    for (int c = 0; c < 3; ++c) result.at(c, y, xx) = static_cast<float>(post[c]);
                }
        }
        clamp01(result);
        return result;
    }

    // Resolves the posterior-mean parameter in natural units (sigma on [0,1],
    // lambda, alpha). An explicit override is illegal once the checkpoint
    // carries a learned value.
    double resolve_param_internal(const Image& noisy, std::optional<double> param_interface) const {
        if (has_learned_param()) {
            if (param_interface)
                throw std::invalid_argument("--param conflicts with a checkpoint that learned its noise parameter");
            const double est = estimate_param(noisy);
            return natural_from_interface(est);
        }
        double iface;
        if (param_interface)
            iface = *param_interface;
        else if (!spec_.variable())
            iface = spec_.p0;
        else
            throw std::invalid_argument("variable known noise requires an explicit per-image parameter");
        return natural_from_interface(iface);
    }

private:
    double natural_from_interface(double v) const {
        return spec_.kind == NoiseKind::gaussian ? v / 255.0 : v;
    }
    double raw_to_internal(double raw) const {
        // aux head emits an unconstrained scalar; map into the parameter domain
        switch (spec_.kind) {
            case NoiseKind::gaussian: return softplus_scalar(raw);   // sigma on [0,1]
            case NoiseKind::poisson: return softplus_scalar(raw);    // 1/lambda
            case NoiseKind::impulse: return sigmoid_scalar(raw);     // alpha
        }
        return raw;
    }

    static TensorPtr<float> image_to_tensor(const Image& img) {
        auto t = make_tensor<float>({1, img.c, img.h, img.w});
        t->val = img.data;
        return t;
    }

    std::string method_;
    NoiseSpec spec_;
    std::unique_ptr<Network<float>> net_;
    std::unique_ptr<Network<float>> aux_;
    std::optional<double> learned_param_;
};

// ---- dataset evaluation -----------------------------------------------------

struct EvalRow {
    std::string method;
    std::string image;
    int rep = 0;
    double param_true = 0.0;  // corruption draw, interface units
    double param_used = 0.0;  // parameter employed by the posterior step
    double psnr_prior = 0.0;
    double psnr_posterior = 0.0;
};

struct EvalReport {
    std::vector<EvalRow> rows;

    struct Aggregate {
        std::string method;
        double mean_prior = 0.0, mean_posterior = 0.0;
        int count = 0;
    };

    std::vector<Aggregate> aggregates() const {
        std::vector<Aggregate> out;
        for (const auto& r : rows) {
            Aggregate* a = nullptr;
            for (auto& cand : out)
                if (cand.method == r.method) a = &cand;
            if (!a) {
                out.push_back({r.method, 0, 0, 0});
                a = &out.back();
            }
            a->mean_prior += r.psnr_prior;
            a->mean_posterior += r.psnr_posterior;
            a->count += 1;
        }
        for (auto& a : out) {
            a.mean_prior /= a.count;
            a.mean_posterior /= a.count;
        }
        return out;
    }

    void write_csv(std::ostream& os) const {
        os << "method,image,rep,param_true,param_used,psnr_prior,psnr_posterior\n";
        os << std::fixed << std::setprecision(6);
        for (const auto& r : rows)
            os << r.method << ',' << r.image << ',' << r.rep << ',' << r.param_true << ',' << r.param_used << ','
               << r.psnr_prior << ',' << r.psnr_posterior << '\n';
        for (const auto& a : aggregates())
            os << a.method << ",ALL," << a.count << ",,," << a.mean_prior << ',' << a.mean_posterior << '\n';
    }
};

// Evaluates every model on identical corrupted inputs: noise depends only on
// (seed, image index, replicate), never on the model, and the derivation is
// order-independent across images.
inline EvalReport eval_dataset(const std::vector<const DenoiserModel*>& models,
                               const std::vector<std::pair<std::string, Image>>& clean, const NoiseSpec& spec,
                               int replicates, uint64_t seed) {
    spec.validate();
    EvalReport report;
    for (size_t i = 0; i < clean.size(); ++i) {
        for (int rep = 0; rep < replicates; ++rep) {
            Rng rng(derive_seed(seed, hash_string(clean[i].first), static_cast<uint64_t>(rep)));
            const double param = spec.variable() ? sample_param(spec, rng) : spec.p0;
            const Image noisy = corrupt(clean[i].second, spec.kind, param, rng);
            for (const auto* model : models) {
                EvalRow row;
                row.method = model->method();
                row.image = clean[i].first;
                row.rep = rep;
                row.param_true = param;
                row.param_used = param;
                const Image prior = model->denoise(noisy, DenoiseMode::prior);
                row.psnr_prior = psnr(clean[i].second, prior);
                if (model->has_posterior_head()) {
                    std::optional<double> override_param;
                    if (!model->has_learned_param()) override_param = param;  // known regime
                    else row.param_used = model->estimate_param(noisy);
                    const Image post = model->denoise(noisy, DenoiseMode::posterior, override_param);
                    row.psnr_posterior = psnr(clean[i].second, post);
                } else {
                    row.psnr_posterior = row.psnr_prior;  // direct-output methods
                }
                report.rows.push_back(std::move(row));
            }
        }
    }
    return report;
}

}  // namespace bsdn

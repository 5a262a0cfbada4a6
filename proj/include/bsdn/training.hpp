#pragma once

#include <iostream>
#include <optional>
#include <sstream>

#include "bsdn/evaluation.hpp"
#include "bsdn/losses.hpp"
#include "bsdn/noise.hpp"

namespace bsdn {

enum class Method { ours, ours_diag, ours_mu, n2c, n2n, mask_copy, mask_random };

inline const char* to_string(Method m) {
    switch (m) {
        case Method::ours: return "ours";
        case Method::ours_diag: return "ours-diag";
        case Method::ours_mu: return "ours-mu";
        case Method::n2c: return "n2c";
        case Method::n2n: return "n2n";
        case Method::mask_copy: return "mask-copy";
        case Method::mask_random: return "mask-random";
    }
    return "?";
}

inline Method method_from_string(const std::string& s) {
    if (s == "ours") return Method::ours;
    if (s == "ours-diag") return Method::ours_diag;
    if (s == "ours-mu") return Method::ours_mu;
    if (s == "n2c") return Method::n2c;
    if (s == "n2n") return Method::n2n;
    if (s == "mask-copy") return Method::mask_copy;
    if (s == "mask-random") return Method::mask_random;
    throw std::invalid_argument("unknown method: " + s);
}

inline bool method_blind_spot(Method m) {
    return m == Method::ours || m == Method::ours_diag || m == Method::ours_mu;
}
inline bool method_masked(Method m) { return m == Method::mask_copy || m == Method::mask_random; }

struct MaskingConfig {
    int masked_per_crop = 64;   // stratified over an 8x8 cell grid
    bool bayesian_head = true;  // 9-channel head + NLL at masked pixels; else mu-only L2
};

struct TrainConfig {
    Method method = Method::ours;
    NoiseSpec noise;
    int steps = 20000;  // paper 0.5M
    int minibatch = 4;
    int crop = 64;  // paper 256
    int depth = 3;  // paper 5
    int enc_width = 32;
    int dec_width = 64;
    double lr = 3e-4;
    double rampdown_frac = 0.3;
    bool augment = false;    // 90-degree rotation augmentation
    double ema_decay = 0.0;  // 0 disables the smoothed network
    uint64_t seed = 1;
    MaskingConfig masking;
    int log_every = 100;
    int val_every = 500;
    int val_images = 4;
    bool paper_step_multiplier = true;  // impulse: x2 blind-spot, x8 baseline

    bool bayesian() const {
        if (method == Method::ours || method == Method::ours_diag) return true;
        if (method_masked(method)) return masking.bayesian_head;
        return false;
    }
    NetworkConfig net_config() const {
        NetworkConfig c;
        c.depth = depth;
        c.enc_width = enc_width;
        c.dec_width = dec_width;
        c.in_channels = 3;
        c.out_channels = bayesian() ? 9 : 3;
        c.blind_spot = method_blind_spot(method);
        return c;
    }
    int effective_steps() const {
        if (!paper_step_multiplier || noise.kind != NoiseKind::impulse) return steps;
        return steps * (method_blind_spot(method) ? 2 : 8);
    }
};

// Flat for the first (1 - rampdown_frac) of training, then cosine-squared to
// zero: lr(t) = base * cos(pi/2 * u)^2 with u in [0,1] over the rampdown.
inline double lr_schedule(int64_t step, int64_t total, double base_lr, double rampdown_frac = 0.3) {
    if (rampdown_frac <= 0.0) return base_lr;
    const double start = (1.0 - rampdown_frac) * static_cast<double>(total);
    if (static_cast<double>(step) < start) return base_lr;
    const double u = (static_cast<double>(step) - start) / (rampdown_frac * static_cast<double>(total));
    const double c = std::cos(1.5707963267948966 * std::min(1.0, u));
    return base_lr * c * c;
}

// N2N impulse loss exponent: 2 -> 0.5 over the first 75% of training, held.
inline double anneal_exponent(int64_t step, int64_t total) {
    const double u = std::min(1.0, static_cast<double>(step) / (0.75 * static_cast<double>(total)));
    return 2.0 + (0.5 - 2.0) * u;
}

struct ProgressRow {
    int64_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
    double param_estimate = 0.0;  // interface units; nan when not learned
    double val_psnr = 0.0;        // nan when not measured at this row
};

struct TrainStats {
    std::vector<ProgressRow> history;
    int64_t pd_floor_count = 0;
    double final_loss = 0.0;
    double best_val_psnr = 0.0;
    int64_t steps_run = 0;
};

namespace detail {

struct Batch {
    std::vector<float> input;    // network input  [B,3,S,S]
    std::vector<float> target;   // loss target    [B,3,S,S]
    std::vector<double> params;  // per-crop interface-unit draws
    std::shared_ptr<PixelMask> mask;
};

inline void copy_image_into(const Image& img, float* dst) {
    std::copy(img.data.begin(), img.data.end(), dst);
}

// Stratified masked-pixel selection plus input replacement for the
// masking-based training schemes.
inline void apply_masking(Method method, const MaskingConfig& mc, Image& input_crop, PixelMask& mask, Rng& rng) {
    const int S = input_crop.h;
    const int grid = 8;
    if (mc.masked_per_crop != grid * grid)
        throw std::invalid_argument("masking: 64 masked pixels (8x8 stratification) expected");
    if (S % grid != 0) throw std::invalid_argument("masking: crop side must be divisible by 8");
    const int cell = S / grid;
    const Image original = input_crop;
    for (int gy = 0; gy < grid; ++gy)
        for (int gx = 0; gx < grid; ++gx) {
            const int py = gy * cell + rng.uniform_int(cell);
            const int px = gx * cell + rng.uniform_int(cell);
            mask[static_cast<size_t>(py) * S + px] = 1;
            if (method == Method::mask_random) {
                for (int c = 0; c < 3; ++c) input_crop.at(c, py, px) = static_cast<float>(rng.uniform());
            } else {
                // copy from another pixel in the 5x5 neighborhood
                int qy = py, qx = px;
                do {
                    qy = py + rng.uniform_int(5) - 2;
                    qx = px + rng.uniform_int(5) - 2;
                    qy = std::clamp(qy, 0, S - 1);
                    qx = std::clamp(qx, 0, S - 1);
                } while (qy == py && qx == px);
                for (int c = 0; c < 3; ++c) input_crop.at(c, py, px) = original.at(c, qy, qx);
            }
        }
}

}  // namespace detail

// Full training driver for every regime. Produces the checkpoint container
// (final weights, plus best-validation and EMA weights when enabled) with the
// run configuration echoed into its metadata.
class Trainer {
public:
    // called at every validation interval; the trainer can be snapshotted
    using IntervalFn = std::function<void(int64_t step, Trainer& trainer)>;

    Trainer(TrainConfig cfg, std::vector<Image> train_images, std::vector<Image> val_images)
        : cfg_(std::move(cfg)), train_(std::move(train_images)), val_(std::move(val_images)) {
        cfg_.noise.validate();
        if (train_.empty()) throw std::invalid_argument("trainer: empty training set");
        for (const auto& img : train_)
            if (img.c != 3 || img.h < cfg_.crop || img.w < cfg_.crop)
                throw std::invalid_argument("trainer: training images must be 3-channel and at least crop-sized");
        if (cfg_.crop % (1 << cfg_.depth) != 0)
            throw std::invalid_argument("trainer: crop side must be divisible by 2^depth");
        if (cfg_.steps <= 0) throw std::invalid_argument("trainer: steps must be positive");

        Rng init_rng(derive_seed(cfg_.seed, 0x1217));
        net_ = std::make_unique<Network<float>>(cfg_.net_config());
        net_->init_he(init_rng);

        unknown_ = cfg_.bayesian() && cfg_.noise.known != Knownness::known;
        if (unknown_ && cfg_.noise.known == Knownness::unknown_variable) {
            NetworkConfig acfg = cfg_.net_config();
            acfg.blind_spot = false;
            acfg.out_channels = 1;
            aux_ = std::make_unique<Network<float>>(acfg);
            aux_->init_he(init_rng);
            // start the image-level estimate low instead of at softplus(0)
            aux_->named_parameters().back().second->val[0] = initial_raw();
        } else if (unknown_) {
            raw_param_ = make_tensor<float>({1}, true);
            raw_param_->val[0] = initial_raw();
        }

        params_ = net_->parameters();
        if (aux_)
            for (auto& p : aux_->parameters()) params_.push_back(p);
        if (raw_param_) params_.push_back(raw_param_);
        if (cfg_.ema_decay > 0.0)
            for (auto& p : params_) {
                auto copy = make_tensor<float>(p->shape);
                copy->val = p->val;
                ema_params_.push_back(copy);
            }
    }

    const TrainConfig& config() const { return cfg_; }

    // Standalone evaluation model from the current (or EMA) weights.
    Container snapshot(bool use_ema = false) const {
        if (use_ema && ema_params_.empty()) throw std::logic_error("snapshot: EMA not enabled");
        std::vector<std::vector<float>> stash;
        if (use_ema) {
            Trainer* self = const_cast<Trainer*>(this);
            for (size_t i = 0; i < params_.size(); ++i) {
                stash.push_back(params_[i]->val);
                self->params_[i]->val = ema_params_[i]->val;
            }
        }
        Container c;
        write_model_meta(c);
        store_network(c, *net_, "net.");
        if (aux_) store_network(c, *aux_, "aux.");
        if (raw_param_) write_learned_param_meta(c);
        if (use_ema) {
            Trainer* self = const_cast<Trainer*>(this);
            for (size_t i = 0; i < params_.size(); ++i) self->params_[i]->val = stash[i];
        }
        return c;
    }

    double validation_psnr() {
        ensure_val_noisy();
        return psnr_over(val_noisy_, snapshot(false));
    }

    Container run(std::ostream* log = nullptr, TrainStats* stats_out = nullptr, IntervalFn on_interval = {}) {
        const int64_t total = cfg_.effective_steps();
        const int B = cfg_.minibatch;
        const int S = cfg_.crop;
        Adam<float> opt(params_);
        ensure_val_noisy();

        TrainStats stats;
        std::vector<std::vector<float>> best_weights;
        double best_val = -1.0;
        auto floor_counter = std::make_shared<int64_t>(0);
        Rng batch_rng(derive_seed(cfg_.seed, 0xBA7C));

        if (log) *log << "step\tloss\tlr\tparam\tval_psnr\n";

        double last_loss = 0.0;
        for (int64_t step = 0; step < total; ++step) {
            const double lr = lr_schedule(step, total, cfg_.lr, cfg_.rampdown_frac);
            detail::Batch batch = make_batch(step, B, S, batch_rng);

            Tape<float> tape;
            auto x = make_tensor<float>({B, 3, S, S});
            x->val = batch.input;
            auto out = net_->forward(tape, x);

            TensorPtr<float> param_tensor;  // learned parameter path
            TensorPtr<float> loss;
            if (cfg_.bayesian()) {
                NllOptions<float> opts;
                opts.kind = cfg_.noise.kind;
                opts.diag_only = (cfg_.method == Method::ours_diag);
                opts.mask = batch.mask;
                opts.pd_floor_count = floor_counter;
                if (!unknown_) {
                    for (double p : batch.params)
                        opts.param_const.push_back(static_cast<float>(cfg_.noise.to_internal(p)));
                } else if (aux_) {
                    auto a_out = aux_->forward(tape, x);
                    auto means = spatial_mean(tape, a_out);
                    param_tensor =
                        cfg_.noise.kind == NoiseKind::impulse ? sigmoid(tape, means) : softplus(tape, means);
                    opts.param_var = param_tensor;
                } else {
                    param_tensor = cfg_.noise.kind == NoiseKind::impulse ? sigmoid(tape, raw_param_)
                                                                         : softplus(tape, raw_param_);
                    opts.param_var = param_tensor;
                }
                loss = bayes_nll_loss(tape, out, batch.target, std::move(opts));
                if (unknown_ && cfg_.noise.kind == NoiseKind::gaussian) {
                    // -0.1 sigma regularizer on the per-image scalar estimate
                    auto sigma_mean = reduce_mean(tape, param_tensor);
                    loss = add_scaled(tape, loss, sigma_mean, -0.1f);
                }
            } else {
                const bool annealed = cfg_.noise.kind == NoiseKind::impulse &&
                                      (cfg_.method == Method::n2n || cfg_.method == Method::ours_mu);
                if (annealed)
                    loss = lp_loss(tape, out, batch.target, static_cast<float>(anneal_exponent(step, total)),
                                   batch.mask);
                else
                    loss = mse_loss(tape, out, batch.target, batch.mask);
            }

            last_loss = loss->val[0];
            if (!std::isfinite(last_loss))
                throw TrainingDiverged("loss diverged at step " + std::to_string(step) +
                                       " (loss=" + std::to_string(last_loss) + ")");
            tape.backward(loss);
            opt.step(lr);
            opt.zero_grad();
            if (!ema_params_.empty()) ema_update(ema_params_, params_, cfg_.ema_decay);

            const bool do_log = step % cfg_.log_every == 0 || step + 1 == total;
            const bool do_val = step % cfg_.val_every == 0 || step + 1 == total;
            double val_psnr = std::nan("");
            if (do_val && !val_noisy_.empty()) {
                val_psnr = psnr_over(val_noisy_, snapshot(false));
                if (val_psnr > best_val) {
                    best_val = val_psnr;
                    best_weights.clear();
                    for (auto& p : params_) best_weights.push_back(p->val);
                }
            }
            if (do_val && on_interval) on_interval(step, *this);
            if (do_log || (do_val && !val_noisy_.empty())) {
                ProgressRow row{step, last_loss, lr, current_param_estimate(), val_psnr};
                stats.history.push_back(row);
                if (log) {
                    *log << row.step << '\t' << row.loss << '\t' << row.lr << '\t';
                    if (std::isnan(row.param_estimate))
                        *log << '-';
                    else
                        *log << row.param_estimate;
                    *log << '\t';
                    if (std::isnan(row.val_psnr))
                        *log << '-';
                    else
                        *log << row.val_psnr;
                    *log << '\n';
                }
            }
        }

        stats.pd_floor_count = *floor_counter;
        stats.final_loss = last_loss;
        stats.best_val_psnr = best_val;
        stats.steps_run = total;
        if (stats_out) *stats_out = stats;
        return build_checkpoint(best_weights, stats);
    }

private:
    float initial_raw() const {
        if (cfg_.noise.kind == NoiseKind::impulse) return inv_sigmoid(0.3f);
        return inv_softplus(0.05f);
    }

    void ensure_val_noisy() {
        if (!val_noisy_.empty() || val_.empty()) return;
        for (size_t i = 0; i < val_.size() && static_cast<int>(i) < cfg_.val_images; ++i) {
            Rng vr(derive_seed(cfg_.seed, 0x7A11, i));
            const double p = cfg_.noise.variable() ? sample_param(cfg_.noise, vr) : cfg_.noise.p0;
            val_noisy_.emplace_back(corrupt(val_[i], cfg_.noise.kind, p, vr), p);
        }
    }

    detail::Batch make_batch(int64_t step, int B, int S, Rng& order_rng) {
        detail::Batch b;
        b.input.resize(static_cast<size_t>(B) * 3 * S * S);
        b.target.resize(b.input.size());
        const bool masked = method_masked(cfg_.method);
        if (masked) b.mask = std::make_shared<PixelMask>(static_cast<size_t>(B) * S * S, 0);
        for (int i = 0; i < B; ++i) {
            const int idx = order_rng.uniform_int(static_cast<int>(train_.size()));
            const Image& src = train_[static_cast<size_t>(idx)];
            const int oy = order_rng.uniform_int(src.h - S + 1);
            const int ox = order_rng.uniform_int(src.w - S + 1);
            Image clean = crop(src, oy, ox, S);
            if (cfg_.augment) clean = rotate90(clean, order_rng.uniform_int(4));

            Rng crng(derive_seed(cfg_.seed, 0xC0FF, static_cast<uint64_t>(step), static_cast<uint64_t>(i)));
            const double p = cfg_.noise.variable() ? sample_param(cfg_.noise, crng) : cfg_.noise.p0;
            b.params.push_back(p);
            Image noisy = corrupt(clean, cfg_.noise.kind, p, crng);

            float* in_dst = b.input.data() + static_cast<size_t>(i) * 3 * S * S;
            float* tg_dst = b.target.data() + static_cast<size_t>(i) * 3 * S * S;
            switch (cfg_.method) {
                case Method::n2c:
                    detail::copy_image_into(noisy, in_dst);
                    detail::copy_image_into(clean, tg_dst);
                    break;
                case Method::n2n: {
                    Rng crng2(derive_seed(cfg_.seed, 0xC0FF, static_cast<uint64_t>(step),
                                          static_cast<uint64_t>(i) + 1000003ull));
                    Image noisy2 = corrupt(clean, cfg_.noise.kind, p, crng2);
                    detail::copy_image_into(noisy, in_dst);
                    detail::copy_image_into(noisy2, tg_dst);
                    break;
                }
                case Method::mask_copy:
                case Method::mask_random: {
                    detail::copy_image_into(noisy, tg_dst);  // loss target: original noisy values
                    Rng mrng(derive_seed(cfg_.seed, 0x3A5C, static_cast<uint64_t>(step), static_cast<uint64_t>(i)));
                    PixelMask crop_mask(static_cast<size_t>(S) * S, 0);
                    detail::apply_masking(cfg_.method, cfg_.masking, noisy, crop_mask, mrng);
                    detail::copy_image_into(noisy, in_dst);
                    std::copy(crop_mask.begin(), crop_mask.end(), b.mask->begin() + static_cast<size_t>(i) * S * S);
                    break;
                }
                default:  // self-supervised: input is the target
                    detail::copy_image_into(noisy, in_dst);
                    detail::copy_image_into(noisy, tg_dst);
                    break;
            }
        }
        return b;
    }

    double current_param_estimate() const {
        if (raw_param_) {
            const double internal = cfg_.noise.kind == NoiseKind::impulse
                                        ? sigmoid_scalar(static_cast<double>(raw_param_->val[0]))
                                        : softplus_scalar(static_cast<double>(raw_param_->val[0]));
            return cfg_.noise.from_internal(internal);
        }
        if (aux_ && !val_noisy_.empty()) {
            // estimate on the first validation image for monitoring
            Tape<float> tape(false);
            const Image& img = val_noisy_.front().first;
            const Image padded = mirror_pad_to_square(img, aux_->config().side_multiple());
            auto x = make_tensor<float>({1, 3, padded.h, padded.w});
            x->val = padded.data;
            auto out = aux_->forward(tape, x);
            double acc = 0.0;
            for (float v : out->val) acc += v;
            const double mean = acc / static_cast<double>(out->numel());
            const double internal =
                cfg_.noise.kind == NoiseKind::impulse ? sigmoid_scalar(mean) : softplus_scalar(mean);
            return cfg_.noise.from_internal(internal);
        }
        return std::nan("");
    }

    double psnr_over(const std::vector<std::pair<Image, double>>& noisy_set, const Container& snap) {
        DenoiserModel model = DenoiserModel::from_container(snap);
        double acc = 0.0;
        for (size_t i = 0; i < noisy_set.size(); ++i) {
            const auto& [noisy, p] = noisy_set[i];
            Image out;
            if (cfg_.bayesian()) {
                std::optional<double> override_param;
                if (!model.has_learned_param()) override_param = p;
                out = model.denoise(noisy, DenoiseMode::posterior, override_param);
            } else {
                out = model.denoise(noisy, DenoiseMode::prior);
            }
            acc += psnr(val_[i], out);
        }
        return acc / static_cast<double>(noisy_set.size());
    }

    void write_model_meta(Container& c) const {
        c.set("method", to_string(cfg_.method));
        c.set("noise.kind", to_string(cfg_.noise.kind));
        c.set("noise.p0", cfg_.noise.p0);
        c.set("noise.p1", cfg_.noise.p1);
        c.set("noise.knownness", to_string(cfg_.noise.known));
        store_network_config(c, cfg_.net_config(), "net.");
        if (aux_) {
            NetworkConfig acfg = cfg_.net_config();
            acfg.blind_spot = false;
            acfg.out_channels = 1;
            store_network_config(c, acfg, "auxnet.");
        }
    }

    void write_learned_param_meta(Container& c) const {
        const double internal = cfg_.noise.kind == NoiseKind::impulse
                                    ? sigmoid_scalar(static_cast<double>(raw_param_->val[0]))
                                    : softplus_scalar(static_cast<double>(raw_param_->val[0]));
        c.set("learned_param", cfg_.noise.from_internal(internal));
    }

    Container build_checkpoint(const std::vector<std::vector<float>>& best_weights, const TrainStats& stats) {
        Container c;
        write_model_meta(c);
        if (raw_param_) write_learned_param_meta(c);
        c.set("cfg.steps", static_cast<int64_t>(cfg_.steps));
        c.set("cfg.effective_steps", stats.steps_run);
        c.set("cfg.minibatch", static_cast<int64_t>(cfg_.minibatch));
        c.set("cfg.crop", static_cast<int64_t>(cfg_.crop));
        c.set("cfg.lr", cfg_.lr);
        c.set("cfg.rampdown_frac", cfg_.rampdown_frac);
        c.set("cfg.augment", static_cast<int64_t>(cfg_.augment ? 1 : 0));
        c.set("cfg.ema_decay", cfg_.ema_decay);
        c.set("cfg.seed", static_cast<int64_t>(cfg_.seed));
        if (method_masked(cfg_.method)) {
            c.set("cfg.masking.masked_per_crop", static_cast<int64_t>(cfg_.masking.masked_per_crop));
            c.set("cfg.masking.bayesian_head", static_cast<int64_t>(cfg_.masking.bayesian_head ? 1 : 0));
        }
        c.set("stats.pd_floor_count", stats.pd_floor_count);
        c.set("stats.final_loss", stats.final_loss);
        c.set("stats.best_val_psnr", stats.best_val_psnr);

        store_network(c, *net_, "net.");
        if (aux_) store_network(c, *aux_, "aux.");
        if (raw_param_) {
            TensorRecord rec;
            rec.name = "opt.noise_param_raw";
            rec.dims = {1};
            rec.data = {raw_param_->val[0]};
            c.add_tensor(std::move(rec));
        }
        auto add_variant = [&](const std::string& variant, const std::vector<std::vector<float>>& values) {
            size_t pi = 0;
            auto emit = [&](const std::string& name, const TensorPtr<float>& t) {
                TensorRecord rec;
                rec.name = variant + "." + name;
                rec.dims = t->shape;
                rec.data = values[pi++];
                c.add_tensor(std::move(rec));
            };
            for (const auto& [name, t] : net_->named_parameters()) emit("net." + name, t);
            if (aux_)
                for (const auto& [name, t] : aux_->named_parameters()) emit("aux." + name, t);
            if (raw_param_) ++pi;  // raw scalar not duplicated per variant
        };
        if (!ema_params_.empty()) {
            std::vector<std::vector<float>> vals;
            for (const auto& p : ema_params_) vals.push_back(p->val);
            add_variant("ema", vals);
            c.set("has_ema", static_cast<int64_t>(1));
        }
        if (!best_weights.empty()) {
            add_variant("best", best_weights);
            c.set("has_best", static_cast<int64_t>(1));
        }
        return c;
    }

    TrainConfig cfg_;
    std::vector<Image> train_;
    std::vector<Image> val_;
    std::vector<std::pair<Image, double>> val_noisy_;
    std::unique_ptr<Network<float>> net_;
    std::unique_ptr<Network<float>> aux_;
    TensorPtr<float> raw_param_;
    std::vector<TensorPtr<float>> params_;
    std::vector<TensorPtr<float>> ema_params_;
    bool unknown_ = false;
};

}  // namespace bsdn

// bsdn: self-supervised blind-spot denoiser CLI.
// Subcommands: corrupt, train, denoise, eval, verify-blindspot.
// Exit codes: 0 success, 1 verification/divergence failure, 2 usage error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "bsdn/config.hpp"
#include "bsdn/runtime.hpp"
#include "bsdn/evaluation.hpp"
#include "bsdn/png_io.hpp"
#include "bsdn/training.hpp"

namespace fs = std::filesystem;
using namespace bsdn;

namespace {

uint64_t env_u64(const char* name, uint64_t dflt) {
    const char* v = std::getenv(name);
    return v ? std::strtoull(v, nullptr, 10) : dflt;
}

bool is_image_file(const fs::path& p) {
    return p.extension() == ".png" || p.extension() == ".bsdnt";
}

Image load_any_image(const fs::path& p) {
    if (p.extension() == ".bsdnt") return load_float_image(p.string());
    return read_png(p.string());
}

// Sorted (name, image) pairs from a directory or a single file.
std::vector<std::pair<std::string, Image>> load_images(const std::string& path, bool warn_skipped = false) {
    std::vector<std::pair<std::string, Image>> out;
    fs::path p(path);
    if (fs::is_directory(p)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(p))
            if (e.is_regular_file()) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            if (!is_image_file(f)) {
                if (warn_skipped) std::cerr << "warning: skipping non-image file " << f << "\n";
                continue;
            }
            out.emplace_back(f.stem().string(), load_any_image(f));
        }
    } else if (fs::is_regular_file(p)) {
        out.emplace_back(p.stem().string(), load_any_image(p));
    } else {
        throw std::runtime_error("no such file or directory: " + path);
    }
    if (out.empty()) throw std::runtime_error("no images found in " + path);
    return out;
}

struct NoiseCliOptions {
    std::string kind = "gaussian";
    std::vector<double> param;        // --param x  or --param-range lo hi
    std::string knownness = "known";
};

void add_noise_options(CLI::App* cmd, NoiseCliOptions& o, bool with_knownness) {
    cmd->add_option("--noise", o.kind, "noise kind: gaussian|poisson|impulse")->required();
    cmd->add_option("--param", o.param,
                    "noise parameter (one value) or range (two values); sigma in 8-bit units")
        ->expected(1, 2)
        ->required();
    if (with_knownness)
        cmd->add_option("--knownness", o.knownness, "known|unknown-fixed|unknown-variable")
            ->default_val("known");
}

NoiseSpec make_noise_spec(const NoiseCliOptions& o) {
    NoiseSpec spec;
    spec.kind = noise_kind_from_string(o.kind);
    spec.p0 = o.param.at(0);
    spec.p1 = o.param.size() > 1 ? o.param.at(1) : o.param.at(0);
    spec.known = knownness_from_string(o.knownness);
    spec.validate();
    return spec;
}

int cmd_corrupt(const NoiseCliOptions& noise_opts, const std::string& in, const std::string& outdir,
                uint64_t seed, int replicates, const std::string& format) {
    NoiseSpec spec = make_noise_spec(noise_opts);
    auto images = load_images(in, true);
    fs::create_directories(outdir);
    std::ofstream manifest(fs::path(outdir) / "manifest.tsv");
    manifest << "output\tsource\tkind\tparam\tseed\treplicate\n";
    for (size_t i = 0; i < images.size(); ++i) {
        for (int rep = 0; rep < replicates; ++rep) {
            const uint64_t s = derive_seed(seed, hash_string(images[i].first), static_cast<uint64_t>(rep));
            Rng rng(s);
            const double param = spec.variable() ? sample_param(spec, rng) : spec.p0;
            Image noisy = corrupt(images[i].second, spec.kind, param, rng);
            std::string name = images[i].first + "_r" + std::to_string(rep);
            fs::path out;
            if (format == "float") {
                out = fs::path(outdir) / (name + ".bsdnt");
                save_float_image(out.string(), noisy);
            } else {
                out = fs::path(outdir) / (name + ".png");
                clamp01(noisy);  // PNG export clamps; float container keeps raw values
                write_png(out.string(), noisy);
            }
            manifest << out.filename().string() << '\t' << images[i].first << '\t' << to_string(spec.kind) << '\t'
                     << param << '\t' << s << '\t' << rep << '\n';
        }
    }
    return 0;
}

// config-file keys accepted by `train`; mirrors TrainConfig
const std::set<std::string> kTrainKeys = {
    "method", "noise", "param", "param-range", "knownness", "steps", "minibatch", "crop",
    "depth", "enc-width", "dec-width", "lr", "rampdown", "augment", "ema-decay", "seed",
    "log-every", "val-every", "paper-step-multiplier", "mask-bayesian-head"};

int cmd_train(std::string method, NoiseCliOptions noise_opts, const std::string& data, const std::string& val,
              const std::string& config_path, const std::string& out, TrainConfig cfg, CLI::App* cmd) {
    // config file first, CLI flags override
    if (!config_path.empty()) {
        RunConfig file = RunConfig::parse_file(config_path, kTrainKeys);
        for (const auto& [k, v] : file.entries) {
            auto overridden = [&](const std::string& flag) { return cmd->count(flag) > 0; };
            if (k == "method" && !overridden("--method")) method = v;
            else if (k == "noise" && !overridden("--noise")) noise_opts.kind = v;
            else if (k == "param" && !overridden("--param")) noise_opts.param = {std::stod(v)};
            else if (k == "param-range" && !overridden("--param")) {
                std::istringstream ss(v);
                double lo, hi;
                ss >> lo >> hi;
                noise_opts.param = {lo, hi};
            } else if (k == "knownness" && !overridden("--knownness")) noise_opts.knownness = v;
            else if (k == "steps" && !overridden("--steps")) cfg.steps = std::stoi(v);
            else if (k == "minibatch" && !overridden("--minibatch")) cfg.minibatch = std::stoi(v);
            else if (k == "crop" && !overridden("--crop")) cfg.crop = std::stoi(v);
            else if (k == "depth" && !overridden("--depth")) cfg.depth = std::stoi(v);
            else if (k == "enc-width" && !overridden("--enc-width")) cfg.enc_width = std::stoi(v);
            else if (k == "dec-width" && !overridden("--dec-width")) cfg.dec_width = std::stoi(v);
            else if (k == "lr" && !overridden("--lr")) cfg.lr = std::stod(v);
            else if (k == "rampdown" && !overridden("--rampdown")) cfg.rampdown_frac = std::stod(v);
            else if (k == "augment" && !overridden("--augment")) cfg.augment = (v == "1" || v == "true");
            else if (k == "ema-decay" && !overridden("--ema-decay")) cfg.ema_decay = std::stod(v);
            else if (k == "seed" && !overridden("--seed")) cfg.seed = std::stoull(v);
            else if (k == "log-every") cfg.log_every = std::stoi(v);
            else if (k == "val-every") cfg.val_every = std::stoi(v);
            else if (k == "paper-step-multiplier") cfg.paper_step_multiplier = (v == "1" || v == "true");
            else if (k == "mask-bayesian-head") cfg.masking.bayesian_head = (v == "1" || v == "true");
        }
    }
    cfg.method = method_from_string(method);
    cfg.noise = make_noise_spec(noise_opts);

    std::vector<Image> train_images, val_images;
    for (auto& [name, img] : load_images(data)) train_images.push_back(std::move(img));
    if (!val.empty())
        for (auto& [name, img] : load_images(val)) val_images.push_back(std::move(img));

    Trainer trainer(cfg, std::move(train_images), std::move(val_images));
    std::ofstream log(out + ".log");
    TrainStats stats;
    Container ckpt = trainer.run(&log, &stats);
    ckpt.save(out);
    std::cout << "wrote " << out << " (" << stats.steps_run << " steps, final loss " << stats.final_loss;
    if (stats.best_val_psnr > 0) std::cout << ", best val PSNR " << stats.best_val_psnr << " dB";
    if (stats.pd_floor_count > 0) std::cout << ", PD floors " << stats.pd_floor_count;
    std::cout << ")\n";
    return 0;
}

int cmd_denoise(const std::string& ckpt_path, const std::string& in, const std::string& out,
                const std::string& mode_str, std::optional<double> param, const std::string& weights) {
    Container c = Container::load(ckpt_path);
    DenoiserModel model = DenoiserModel::from_container(c, weights);
    const DenoiseMode mode = mode_str == "prior" ? DenoiseMode::prior : DenoiseMode::posterior;
    if (param && model.has_learned_param())
        throw CLI::ValidationError("--param", "checkpoint learned its noise parameter; --param is ambiguous");

    auto images = load_images(in, true);
    const bool out_is_dir = images.size() > 1 || fs::is_directory(in);
    if (out_is_dir) fs::create_directories(out);
    for (const auto& [name, img] : images) {
        Image den = model.denoise(img, mode, param);
        fs::path dst = out_is_dir ? fs::path(out) / (name + "_denoised.png") : fs::path(out);
        write_png(dst.string(), den);
    }
    return 0;
}

int cmd_eval(const std::vector<std::string>& ckpts, const std::string& clean_dir, const NoiseCliOptions& noise_opts,
             int replicates, uint64_t seed, const std::string& report_path, const std::string& weights) {
    NoiseSpec spec = make_noise_spec(noise_opts);
    auto clean = load_images(clean_dir, true);
    std::vector<DenoiserModel> models;
    for (const auto& path : ckpts) {
        models.push_back(DenoiserModel::from_container(Container::load(path), weights));
        if (models.back().noise_spec().kind != spec.kind)
            std::cerr << "warning: checkpoint " << path << " was trained on " << to_string(models.back().noise_spec().kind)
                      << " noise but is evaluated on " << to_string(spec.kind) << "\n";
    }
    std::vector<const DenoiserModel*> ptrs;
    for (const auto& m : models) ptrs.push_back(&m);
    EvalReport report = eval_dataset(ptrs, clean, spec, replicates, seed);
    std::ofstream f(report_path);
    if (!f) throw std::runtime_error("cannot open report for writing: " + report_path);
    report.write_csv(f);
    for (const auto& a : report.aggregates())
        std::cout << a.method << ": prior " << a.mean_prior << " dB, posterior " << a.mean_posterior << " dB ("
                  << a.count << " rows)\n";
    return 0;
}

int cmd_verify_blindspot(const std::string& ckpt_path, int trials, int size, int depth, uint64_t seed,
                         bool baseline) {
    BlindSpotReport rep;
    if (!ckpt_path.empty()) {
        Container c = Container::load(ckpt_path);
        Network<float> net(load_network_config(c, "net."));
        load_network(c, net, "net.");
        if (size % net.config().side_multiple() != 0) size = net.config().side_multiple() * 4;
        rep = verify_blindspot(net, trials, size, seed, /*reinit_weights=*/false);
    } else {
        NetworkConfig cfg;
        cfg.depth = depth;
        cfg.enc_width = 16;
        cfg.dec_width = 32;
        cfg.blind_spot = !baseline;
        rep = verify_blindspot<float>(cfg, trials, size, seed);
    }
    std::cout << "trials: " << rep.trials << "  violations: " << rep.violations << "\n";
    for (const auto& v : rep.samples)
        std::cout << "  violation at trial " << v.trial << " pixel (" << v.y << "," << v.x << ") channel "
                  << v.channel << ": " << v.before << " -> " << v.after << "\n";
    return rep.violations == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bsdn: self-supervised blind-spot image denoiser"};
    app.require_subcommand(1);
    app.fallthrough();

    uint64_t seed = env_u64("BSDN_SEED", 1);
    int threads = 0;
    app.add_option("--seed", seed, "global RNG seed (env BSDN_SEED)");
    app.add_option("--threads", threads, "BLAS thread count (env BSDN_THREADS; default 1)");

    // corrupt
    auto* corrupt_cmd = app.add_subcommand("corrupt", "apply a corruption model to clean images");
    NoiseCliOptions corrupt_noise;
    std::string corrupt_in, corrupt_out, corrupt_format = "png";
    int corrupt_reps = 1;
    add_noise_options(corrupt_cmd, corrupt_noise, false);
    corrupt_cmd->add_option("--in", corrupt_in, "input image or directory")->required();
    corrupt_cmd->add_option("--out", corrupt_out, "output directory")->required();
    corrupt_cmd->add_option("--replicates", corrupt_reps, "noise instances per image")->default_val(1);
    corrupt_cmd->add_option("--format", corrupt_format, "png (clamped) or float (unclamped container)")
        ->default_val("png");

    // train
    auto* train_cmd = app.add_subcommand("train", "train a denoiser");
    NoiseCliOptions train_noise;
    std::string train_method = "ours", train_data, train_val, train_config, train_out;
    TrainConfig tc;
    train_cmd->add_option("--method", train_method,
                          "ours|ours-diag|ours-mu|n2c|n2n|mask-copy|mask-random");
    add_noise_options(train_cmd, train_noise, true);
    train_cmd->add_option("--data", train_data, "training image directory")->required();
    train_cmd->add_option("--val", train_val, "validation image directory");
    train_cmd->add_option("--config", train_config, "key = value config file (flags override)");
    train_cmd->add_option("--out", train_out, "output checkpoint path")->required();
    train_cmd->add_option("--steps", tc.steps);
    train_cmd->add_option("--minibatch", tc.minibatch);
    train_cmd->add_option("--crop", tc.crop);
    train_cmd->add_option("--depth", tc.depth);
    train_cmd->add_option("--enc-width", tc.enc_width);
    train_cmd->add_option("--dec-width", tc.dec_width);
    train_cmd->add_option("--lr", tc.lr);
    train_cmd->add_option("--rampdown", tc.rampdown_frac);
    train_cmd->add_flag("--augment", tc.augment);
    train_cmd->add_option("--ema-decay", tc.ema_decay);

    // denoise
    auto* den_cmd = app.add_subcommand("denoise", "denoise images with a trained checkpoint");
    std::string den_ckpt, den_in, den_out, den_mode = "posterior", den_weights = "final";
    double den_param = -1;
    den_cmd->add_option("--ckpt", den_ckpt)->required();
    den_cmd->add_option("--in", den_in)->required();
    den_cmd->add_option("--out", den_out)->required();
    den_cmd->add_option("--mode", den_mode, "posterior|prior")->default_val("posterior");
    den_cmd->add_option("--param", den_param, "override known noise parameter (8-bit sigma / lambda / alpha)");
    den_cmd->add_option("--weights", den_weights, "final|best|ema")->default_val("final");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate checkpoints on a clean dataset");
    NoiseCliOptions eval_noise;
    std::vector<std::string> eval_ckpts;
    std::string eval_clean, eval_report, eval_weights = "final";
    int eval_reps = 1;
    eval_cmd->add_option("--ckpt", eval_ckpts, "checkpoint(s); all see identical corrupted inputs")->required();
    add_noise_options(eval_cmd, eval_noise, false);
    eval_cmd->add_option("--clean", eval_clean, "clean image directory")->required();
    eval_cmd->add_option("--replicates", eval_reps)->default_val(1);
    eval_cmd->add_option("--report", eval_report, "CSV output path")->required();
    eval_cmd->add_option("--weights", eval_weights, "final|best|ema")->default_val("final");

    // verify-blindspot
    auto* ver_cmd = app.add_subcommand("verify-blindspot", "probe the blind-spot property bitwise");
    std::string ver_ckpt;
    int ver_trials = 1000, ver_size = 32, ver_depth = 3;
    bool ver_baseline = false;
    ver_cmd->add_option("--ckpt", ver_ckpt, "verify a trained checkpoint instead of random configs");
    ver_cmd->add_option("--trials", ver_trials)->default_val(1000);
    ver_cmd->add_option("--size", ver_size)->default_val(32);
    ver_cmd->add_option("--depth", ver_depth)->default_val(3);
    ver_cmd->add_flag("--baseline", ver_baseline, "use an unrestricted config (expects violations)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? 0 : 2;
    }

    if (threads > 0)
        openblas_set_num_threads(threads);
    else
        init_threads_from_env(1);

    try {
        if (corrupt_cmd->parsed())
            return cmd_corrupt(corrupt_noise, corrupt_in, corrupt_out, seed, corrupt_reps, corrupt_format);
        if (train_cmd->parsed()) {
            tc.seed = seed;
            return cmd_train(train_method, train_noise, train_data, train_val, train_config, train_out, tc,
                             train_cmd);
        }
        if (den_cmd->parsed())
            return cmd_denoise(den_ckpt, den_in, den_out, den_mode,
                               den_cmd->count("--param") ? std::optional<double>(den_param) : std::nullopt,
                               den_weights);
        if (eval_cmd->parsed())
            return cmd_eval(eval_ckpts, eval_clean, eval_noise, eval_reps, seed, eval_report, eval_weights);
        if (ver_cmd->parsed())
            return cmd_verify_blindspot(ver_ckpt, ver_trials, ver_size, ver_depth, seed, ver_baseline);
    } catch (const TrainingDiverged& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}

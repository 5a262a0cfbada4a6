#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "bsdn/training.hpp"
#include "testutil.hpp"

using namespace bsdn;

namespace {

Container train_tiny(Method m, int steps = 150, uint64_t seed = 31) {
    TrainConfig cfg;
    cfg.method = m;
    cfg.noise.p0 = cfg.noise.p1 = 25.0;
    cfg.steps = steps;
    cfg.minibatch = 4;
    cfg.crop = 16;
    cfg.depth = 2;
    cfg.enc_width = 8;
    cfg.dec_width = 16;
    cfg.seed = seed;
    cfg.val_every = 1 << 20;
    auto images = testutil::synth_dataset(seed, 6, 32);
    Trainer trainer(cfg, images, {});
    return trainer.run(nullptr, nullptr);
}

}  // namespace

TEST_CASE("psnr hand values and cap", "[evaluation]") {
    Image a(10, 10, 3), b(10, 10, 3);
    std::fill(a.data.begin(), a.data.end(), 0.5f);
    b = a;
    CHECK(psnr(a, b) == 99.0);

    for (auto& v : b.data) v += 0.1f;
    CHECK(psnr(a, b) == Catch::Approx(20.0).epsilon(1e-5));

    // checkerboard +-0.5 on gray
    Image c(10, 10, 3), d(10, 10, 3);
    for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < 10; ++y)
            for (int x = 0; x < 10; ++x) {
                c.at(ch, y, x) = 0.5f;
                d.at(ch, y, x) = ((y + x) % 2 == 0) ? 1.0f : 0.0f;
            }
    CHECK(psnr(c, d) == Catch::Approx(6.0206).epsilon(1e-4));

    // symmetry when both are in [0,1]
    Rng rng(301);
    Image e = testutil::synth_image(rng, 12, 12), f = testutil::synth_image(rng, 12, 12);
    CHECK(psnr(e, f) == Catch::Approx(psnr(f, e)).epsilon(1e-12));

    Image g(4, 4, 3);
    CHECK_THROWS_AS(psnr(a, g), std::invalid_argument);
}

TEST_CASE("mirror padding reflects without repeating the edge pixel", "[evaluation]") {
    Image img(3, 5, 1);
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 5; ++x) img.at(0, y, x) = static_cast<float>(10 * y + x);
    Image padded = mirror_pad_to_square(img, 4);
    REQUIRE(padded.h == 8);
    REQUIRE(padded.w == 8);
    CHECK(padded.at(0, 3, 0) == img.at(0, 1, 0));  // row 3 -> 2*3-2-3 = 1
    CHECK(padded.at(0, 4, 2) == img.at(0, 0, 2));
    CHECK(padded.at(0, 0, 5) == img.at(0, 0, 3));  // col 5 -> 2*5-2-5 = 3
    CHECK(padded.at(0, 0, 7) == img.at(0, 0, 1));
    // already-valid images pass through unchanged
    Image sq(8, 8, 1);
    Image same = mirror_pad_to_square(sq, 4);
    CHECK(same.h == 8);
    CHECK(same.w == 8);
}

TEST_CASE("denoise: prior is the clamped mean head; posterior with tiny sigma returns the input", "[evaluation]") {
    Container ckpt = train_tiny(Method::ours);
    DenoiserModel model = DenoiserModel::from_container(ckpt);
    Rng rng(303);
    Image clean = testutil::synth_image(rng, 24, 24);
    Rng nrng(304);
    Image noisy = apply_gaussian(clean, 25.0 / 255.0, nrng);

    Image prior = model.denoise(noisy, DenoiseMode::prior);
    CHECK(prior.h == 24);
    CHECK(prior.w == 24);
    for (float v : prior.data) {
        CHECK(v >= 0.f);
        CHECK(v <= 1.f);
    }

    // sigma -> 0: the posterior trusts the observation completely
    Image post = model.denoise(noisy, DenoiseMode::posterior, 1e-6);
    Image clamped = noisy;
    clamp01(clamped);
    double max_diff = 0;
    for (size_t i = 0; i < post.data.size(); ++i)
        max_diff = std::max(max_diff, static_cast<double>(std::fabs(post.data[i] - clamped.data[i])));
    CHECK(max_diff < 1e-6);
}

TEST_CASE("padding wrapper is transparent for already-square inputs", "[evaluation]") {
    Container ckpt = train_tiny(Method::ours);
    DenoiserModel model = DenoiserModel::from_container(ckpt);
    Rng rng(305);
    Image noisy = testutil::synth_image(rng, 16, 16);  // already divisible by 2^depth
    Image a = model.denoise(noisy, DenoiseMode::posterior);
    Image b = model.denoise(noisy, DenoiseMode::posterior);
    CHECK(std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0);
    // non-divisible input goes through the pad/crop path and keeps its size
    Image odd = testutil::synth_image(rng, 19, 23);
    Image c = model.denoise(odd, DenoiseMode::posterior);
    CHECK(c.h == 19);
    CHECK(c.w == 23);
}

TEST_CASE("posterior mode on a mu-only checkpoint is a usage error", "[evaluation]") {
    Container ckpt = train_tiny(Method::ours_mu);
    DenoiserModel model = DenoiserModel::from_container(ckpt);
    Rng rng(307);
    Image noisy = testutil::synth_image(rng, 16, 16);
    CHECK_THROWS_AS(model.denoise(noisy, DenoiseMode::posterior), std::invalid_argument);
    Image prior = model.denoise(noisy, DenoiseMode::prior);  // prior mode works
    CHECK(prior.h == 16);
}

TEST_CASE("eval_dataset: row accounting, shared inputs, order independence", "[evaluation]") {
    Container c1 = train_tiny(Method::ours, 120, 41);
    Container c2 = train_tiny(Method::ours_mu, 120, 43);
    DenoiserModel m1 = DenoiserModel::from_container(c1);
    DenoiserModel m2 = DenoiserModel::from_container(c2);

    std::vector<std::pair<std::string, Image>> clean;
    for (int i = 0; i < 5; ++i) {
        Rng r(derive_seed(400, static_cast<uint64_t>(i)));
        clean.emplace_back("img" + std::to_string(i), testutil::synth_image(r, 16, 16));
    }
    NoiseSpec spec;
    spec.p0 = 5;
    spec.p1 = 50;

    EvalReport rep = eval_dataset({&m1, &m2}, clean, spec, 3, 77);
    CHECK(rep.rows.size() == 5 * 3 * 2);

    // identical corrupted inputs across methods: identical param draws per (image, rep)
    for (size_t i = 0; i < rep.rows.size(); i += 2) {
        CHECK(rep.rows[i].image == rep.rows[i + 1].image);
        CHECK(rep.rows[i].param_true == rep.rows[i + 1].param_true);
    }

    // aggregate equals the arithmetic mean of rows
    auto aggs = rep.aggregates();
    for (const auto& a : aggs) {
        double acc = 0;
        int n = 0;
        for (const auto& r : rep.rows)
            if (r.method == a.method) {
                acc += r.psnr_posterior;
                ++n;
            }
        CHECK(a.count == n);
        CHECK(std::fabs(a.mean_posterior - acc / n) < 1e-9);
    }

    // order independence: reversed dataset produces the same per-image rows
    auto reversed = clean;
    std::reverse(reversed.begin(), reversed.end());
    EvalReport rep2 = eval_dataset({&m1, &m2}, reversed, spec, 3, 77);
    for (const auto& r : rep.rows) {
        bool found = false;
        for (const auto& r2 : rep2.rows)
            if (r2.method == r.method && r2.image == r.image && r2.rep == r.rep) {
                found = true;
                CHECK(r2.param_true == r.param_true);
                CHECK(r2.psnr_prior == r.psnr_prior);
                CHECK(r2.psnr_posterior == r.psnr_posterior);
            }
        CHECK(found);
    }

    // CSV emission is deterministic
    std::ostringstream csv1, csv2;
    rep.write_csv(csv1);
    rep.write_csv(csv2);
    CHECK(csv1.str() == csv2.str());
    std::string header;
    std::istringstream in(csv1.str());
    std::getline(in, header);
    CHECK(header == "method,image,rep,param_true,param_used,psnr_prior,psnr_posterior");
}

TEST_CASE("posterior beats prior on most images for a trained gaussian model", "[evaluation]") {
    Container ckpt = train_tiny(Method::ours, 600, 47);
    DenoiserModel model = DenoiserModel::from_container(ckpt);
    std::vector<std::pair<std::string, Image>> clean;
    for (int i = 0; i < 10; ++i) {
        Rng r(derive_seed(500, static_cast<uint64_t>(i)));
        clean.emplace_back("t" + std::to_string(i), testutil::synth_image(r, 32, 32));
    }
    NoiseSpec spec;  // gaussian 25 known
    EvalReport rep = eval_dataset({&model}, clean, spec, 1, 91);
    int post_wins = 0;
    for (const auto& r : rep.rows)
        if (r.psnr_posterior > r.psnr_prior) ++post_wins;
    CHECK(post_wins >= 9);  // >= 90% of test images
}

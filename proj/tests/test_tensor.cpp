#include <catch2/catch_amalgamated.hpp>

#include "bsdn/conv.hpp"
#include "bsdn/optim.hpp"
#include "testutil.hpp"

using namespace bsdn;
using testutil::grad_check;

namespace {

TensorPtr<double> rand_tensor(Shape shape, Rng& rng, bool rg = true, double lo = -1.0, double hi = 1.0) {
    auto t = make_tensor<double>(std::move(shape), rg);
    for (auto& v : t->val) v = rng.uniform(lo, hi);
    return t;
}

// keeps leaky-relu kinks and maxpool ties away from the FD step
void displace_from_zero(TensorPtr<double>& t, double margin = 1e-3) {
    for (auto& v : t->val)
        if (std::fabs(v) < margin) v = v < 0 ? -margin : margin;
}

}  // namespace

TEST_CASE("conv2d zero input passes bias through", "[tensor]") {
    Tape<float> tape(false);
    auto x = make_tensor<float>({1, 3, 1, 1});
    auto w = make_tensor<float>({3, 3, 3, 3});
    Rng rng(3);
    for (auto& v : w->val) v = static_cast<float>(rng.uniform(-1, 1));
    auto b = make_tensor<float>({3});
    b->val = {0.25f, -0.5f, 1.5f};
    auto out = conv2d(tape, x, w, b);
    for (int c = 0; c < 3; ++c) CHECK(out->val[static_cast<size_t>(c)] == b->val[static_cast<size_t>(c)]);
}

TEST_CASE("conv2d impulse spreads the kernel support", "[tensor]") {
    Tape<float> tape(false);
    auto x = make_tensor<float>({1, 1, 3, 3});
    x->val[x->at4(0, 0, 1, 1)] = 1.f;
    auto w = make_tensor<float>({1, 1, 3, 3});
    std::fill(w->val.begin(), w->val.end(), 1.f);
    auto b = make_tensor<float>({1});
    auto out = conv2d(tape, x, w, b);
    for (float v : out->val) CHECK(v == 1.f);
}

TEST_CASE("conv2d with identity kernel is the identity map", "[tensor]") {
    Tape<float> tape(false);
    Rng rng(5);
    auto x = make_tensor<float>({2, 2, 6, 6});
    for (auto& v : x->val) v = static_cast<float>(rng.uniform(-2, 2));
    auto w = make_tensor<float>({2, 2, 3, 3});
    w->val[static_cast<size_t>(((0 * 2 + 0) * 3 + 1) * 3 + 1)] = 1.f;  // out0 <- in0 center
    w->val[static_cast<size_t>(((1 * 2 + 1) * 3 + 1) * 3 + 1)] = 1.f;  // out1 <- in1 center
    auto b = make_tensor<float>({2});
    auto out = conv2d(tape, x, w, b);
    REQUIRE(out->val.size() == x->val.size());
    for (size_t i = 0; i < x->val.size(); ++i) CHECK(out->val[i] == x->val[i]);
}

TEST_CASE("conv2d gradients match finite differences", "[tensor]") {
    Rng rng(11);
    auto x = rand_tensor({1, 2, 5, 5}, rng);
    auto w = rand_tensor({3, 2, 3, 3}, rng);
    auto b = rand_tensor({3}, rng);
    auto res = grad_check({x, w, b}, [&](Tape<double>& t) {
        auto y = conv2d(t, x, w, b);
        return reduce_mean(t, leaky_relu(t, y));
    });
    INFO("checked " << res.checked << " elements");
    CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("conv2d 1x1 gradients match finite differences", "[tensor]") {
    Rng rng(12);
    auto x = rand_tensor({2, 3, 4, 4}, rng);
    auto w = rand_tensor({5, 3, 1, 1}, rng);
    auto b = rand_tensor({5}, rng);
    auto res = grad_check({x, w, b}, [&](Tape<double>& t) { return reduce_mean(t, conv2d(t, x, w, b)); });
    CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("conv2d rejects bad shapes", "[tensor]") {
    Tape<float> tape(false);
    auto x = make_tensor<float>({1, 2, 4, 4});
    auto w = make_tensor<float>({3, 3, 3, 3});  // channel mismatch
    auto b = make_tensor<float>({3});
    CHECK_THROWS_AS(conv2d(tape, x, w, b), std::invalid_argument);
    auto w2 = make_tensor<float>({3, 2, 2, 2});  // even kernel
    CHECK_THROWS_AS(conv2d(tape, x, w2, b), std::invalid_argument);
}

TEST_CASE("maxpool2x2 takes the window maximum", "[tensor]") {
    Tape<float> tape(false);
    auto x = make_tensor<float>({1, 1, 2, 2});
    x->val = {1, 2, 3, 4};
    auto out = maxpool2x2(tape, x);
    REQUIRE(out->val.size() == 1);
    CHECK(out->val[0] == 4.f);
    auto odd = make_tensor<float>({1, 1, 3, 3});
    CHECK_THROWS_AS(maxpool2x2(tape, odd), std::invalid_argument);
}

TEST_CASE("maxpool ties route gradient to the first element in row-major order", "[tensor]") {
    Tape<float> tape;
    auto x = make_tensor<float>({1, 1, 2, 2}, true);
    x->val = {2, 2, 2, 2};
    auto out = maxpool2x2(tape, x);
    auto loss = reduce_mean(tape, out);
    tape.backward(loss);
    CHECK(x->grad[0] == 1.f);
    CHECK(x->grad[1] == 0.f);
    CHECK(x->grad[2] == 0.f);
    CHECK(x->grad[3] == 0.f);
}

TEST_CASE("maxpool and upsample gradients match finite differences", "[tensor]") {
    Rng rng(13);
    auto x = rand_tensor({2, 2, 4, 4}, rng);
    displace_from_zero(x);
    // separate window entries so FD never crosses an argmax boundary
    for (size_t i = 0; i < x->val.size(); ++i) x->val[i] += 0.01 * static_cast<double>(i % 17);
    auto res = grad_check({x}, [&](Tape<double>& t) {
        return reduce_mean(t, upsample2x2_nearest(t, maxpool2x2(t, x)));
    });
    CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("upsample2x2 repeats pixels", "[tensor]") {
    Tape<float> tape(false);
    auto x = make_tensor<float>({1, 1, 1, 1});
    x->val = {5};
    auto out = upsample2x2_nearest(tape, x);
    REQUIRE(out->val.size() == 4);
    for (float v : out->val) CHECK(v == 5.f);
}

TEST_CASE("leaky_relu slope is 0.1", "[tensor]") {
    Tape<float> tape(false);
    auto x = make_tensor<float>({1, 1, 1, 2});
    x->val = {-1.f, 2.f};
    auto out = leaky_relu(tape, x);
    CHECK(out->val[0] == Catch::Approx(-0.1));
    CHECK(out->val[1] == 2.f);
}

TEST_CASE("concat splits gradient exactly", "[tensor]") {
    Rng rng(17);
    Tape<double> tape;
    auto a = rand_tensor({1, 2, 3, 3}, rng);
    auto b = rand_tensor({1, 3, 3, 3}, rng);
    auto out = concat_channels(tape, a, b);
    REQUIRE(out->c() == 5);
    // seed an arbitrary output gradient and check exact split
    auto loss = reduce_mean(tape, out);
    tape.backward(loss);
    double sum_parts = 0, n = static_cast<double>(out->numel());
    for (double g : a->grad) sum_parts += g;
    for (double g : b->grad) sum_parts += g;
    CHECK(sum_parts == Catch::Approx(n * (1.0 / n)).epsilon(1e-12));

    auto res = grad_check({a, b}, [&](Tape<double>& t) { return reduce_mean(t, concat_channels(t, a, b)); });
    CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("pad_crop pads zeros and crops, gradients exact", "[tensor]") {
    Rng rng(19);
    auto x = rand_tensor({1, 1, 4, 4}, rng);
    {
        Tape<double> t(false);
        auto out = pad_crop(t, x, 1, -1, 2, 0);
        REQUIRE(out->h() == 4);
        REQUIRE(out->w() == 6);
        CHECK(out->val[0] == 0.0);                        // padded row
        CHECK(out->val[out->at4(0, 0, 1, 2)] == x->val[0]);  // shifted content
    }
    auto res = grad_check({x}, [&](Tape<double>& t) { return reduce_mean(t, pad_crop(t, x, 2, -1, 1, -2)); });
    CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("rotate_stack follows the CCW convention", "[tensor]") {
    Tape<float> tape(false);
    auto x = make_tensor<float>({1, 1, 2, 2});
    x->val = {1, 2, 3, 4};  // [[a,b],[c,d]] = [[1,2],[3,4]]
    auto out = rotate_stack(tape, x);
    REQUIRE(out->n() == 4);
    REQUIRE(out->c() == 1);
    // 90 deg CCW of [[a,b],[c,d]] is [[b,d],[a,c]]
    CHECK(out->val[out->at4(1, 0, 0, 0)] == 2.f);
    CHECK(out->val[out->at4(1, 0, 0, 1)] == 4.f);
    CHECK(out->val[out->at4(1, 0, 1, 0)] == 1.f);
    CHECK(out->val[out->at4(1, 0, 1, 1)] == 3.f);
}

TEST_CASE("rotate_stack then unrotate_combine is identity up to channel stacking", "[tensor]") {
    Rng rng(23);
    Tape<double> tape(false);
    auto x = rand_tensor({2, 3, 4, 4}, rng, false);
    auto stacked = rotate_stack(tape, x);
    auto combined = unrotate_combine(tape, stacked);
    REQUIRE(combined->n() == 2);
    REQUIRE(combined->c() == 12);
    for (int n = 0; n < 2; ++n)
        for (int k = 0; k < 4; ++k)
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < 4; ++y)
                    for (int xx = 0; xx < 4; ++xx)
                        CHECK(combined->val[combined->at4(n, k * 3 + c, y, xx)] == x->val[x->at4(n, c, y, xx)]);
}

TEST_CASE("rotation ops gradients match finite differences", "[tensor]") {
    Rng rng(29);
    auto x = rand_tensor({1, 2, 4, 4}, rng);
    auto res = grad_check({x}, [&](Tape<double>& t) {
        auto s = rotate_stack(t, x);
        auto c = unrotate_combine(t, s);
        return reduce_mean(t, leaky_relu(t, c));
    });
    CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("shift_down_one moves rows down, twice shifts two", "[tensor]") {
    Tape<float> tape(false);
    auto x = make_tensor<float>({1, 1, 3, 1});
    x->val = {1, 2, 3};
    auto s1 = shift_down_one(tape, x);
    CHECK(s1->val[0] == 0.f);
    CHECK(s1->val[1] == 1.f);
    CHECK(s1->val[2] == 2.f);
    auto s2 = shift_down_one(tape, s1);
    CHECK(s2->val[0] == 0.f);
    CHECK(s2->val[1] == 0.f);
    CHECK(s2->val[2] == 1.f);
}

TEST_CASE("scalar plumbing ops match finite differences", "[tensor]") {
    Rng rng(31);
    auto x = rand_tensor({4}, rng);
    auto y = rand_tensor({4}, rng);
    auto res = grad_check({x, y}, [&](Tape<double>& t) {
        auto sp = softplus(t, x);
        auto sg = sigmoid(t, y);
        auto mix = add_scaled(t, sp, sg, -0.37);
        return reduce_mean(t, scale(t, mix, 2.5));
    });
    CHECK(res.max_rel_err < 1e-3);

    auto z = rand_tensor({2, 3, 4, 4}, rng);
    auto res2 = grad_check({z}, [&](Tape<double>& t) { return reduce_mean(t, spatial_mean(t, z)); });
    CHECK(res2.max_rel_err < 1e-3);
}

TEST_CASE("adam first step moves by about lr", "[tensor]") {
    auto p = make_tensor<float>({1}, true);
    p->val = {0.f};
    Adam<float> opt({p});
    p->grad = {1.f};
    opt.step(1e-3);
    CHECK(p->val[0] == Catch::Approx(-1e-3).epsilon(1e-4));
}

TEST_CASE("adam leaves parameters unchanged under zero gradients", "[tensor]") {
    auto p = make_tensor<float>({3}, true);
    p->val = {1.f, -2.f, 0.5f};
    Adam<float> opt({p});
    for (int t = 0; t < 25; ++t) {
        p->zero_grad();
        opt.step(0.1);
    }
    CHECK(p->val[0] == 1.f);
    CHECK(p->val[1] == -2.f);
    CHECK(p->val[2] == 0.5f);
}

TEST_CASE("adam descends x^2 monotonically in |x|", "[tensor]") {
    auto p = make_tensor<double>({1}, true);
    p->val = {1.0};
    Adam<double> opt({p});
    double prev = std::fabs(p->val[0]);
    for (int t = 0; t < 10; ++t) {
        p->grad = {2.0 * p->val[0]};
        opt.step(0.1);
        const double cur = std::fabs(p->val[0]);
        CHECK(cur < prev);
        prev = cur;
    }
}

TEST_CASE("adam aborts on non-finite gradients", "[tensor]") {
    auto p = make_tensor<float>({1}, true);
    Adam<float> opt({p});
    p->grad = {std::numeric_limits<float>::quiet_NaN()};
    CHECK_THROWS_AS(opt.step(1e-3), TrainingDiverged);
}

TEST_CASE("backward leaves finite gradients everywhere", "[tensor]") {
    Rng rng(37);
    auto x = rand_tensor({1, 3, 8, 8}, rng);
    auto w = rand_tensor({4, 3, 3, 3}, rng);
    auto b = rand_tensor({4}, rng);
    Tape<double> tape;
    auto h1 = leaky_relu(tape, conv2d(tape, x, w, b));
    auto h2 = upsample2x2_nearest(tape, maxpool2x2(tape, h1));
    auto loss = reduce_mean(tape, h2);
    tape.backward(loss);
    CHECK(all_finite(x->grad));
    CHECK(all_finite(w->grad));
    CHECK(all_finite(b->grad));
}

#include "doctest.h"
#include "qta/rng.hpp"
#include "qta/sketch.hpp"

using namespace qta;

TEST_CASE("make_sketch_params invariants") {
    SketchParams p = make_sketch_params(3, 1, 123);
    CHECK(p.f == std::vector<std::uint32_t>{0, 0, 0});

    SketchParams a = make_sketch_params(64, 32, 7);
    SketchParams b = make_sketch_params(64, 32, 7);
    CHECK(a.f == b.f);
    CHECK(a.s == b.s);
    for (std::size_t i = 0; i < a.n; ++i) {
        CHECK(a.f[i] < 32);
        CHECK((a.s[i] == 1 || a.s[i] == -1));
    }
}

TEST_CASE("bucket counts are binomially plausible") {
    const std::size_t n = 1000, b = 100;
    SketchParams p = make_sketch_params(n, b, 1);
    std::vector<int> counts(b, 0);
    for (auto fi : p.f) counts[fi]++;
    const double mean = double(n) / b;
    const double sigma = std::sqrt(mean * (1.0 - 1.0 / b));
    for (auto c : counts) CHECK(std::abs(c - mean) <= 4.0 * sigma);
}

TEST_CASE("count_sketch hand case and identities") {
    SketchParams p;
    p.n = 3;
    p.b = 2;
    p.f = {0, 1, 0};
    p.s = {1, -1, 1};
    Tensor out = count_sketch(Tensor::vec({1, 2, 3}), p);
    CHECK(out.raw() == std::vector<double>{4, -2});

    // zeros map to zeros
    Tensor z = count_sketch(Tensor::zeros({3}), p);
    CHECK(z.raw() == std::vector<double>{0, 0});

    // identity hashing
    SketchParams id;
    id.n = id.b = 4;
    id.f = {0, 1, 2, 3};
    id.s = {1, 1, 1, 1};
    Tensor x = Tensor::vec({5, -1, 2, 0.5});
    CHECK(count_sketch(x, id).raw() == x.raw());

    CHECK_THROWS_AS(count_sketch(Tensor::zeros({5}), p), std::invalid_argument);
}

TEST_CASE("count_sketch is linear and sign-symmetric") {
    Rng rng(2);
    SketchParams p = make_sketch_params(10, 4, 5);
    Tensor a = rng.uniform_tensor({10}, -1, 1);
    Tensor b = rng.uniform_tensor({10}, -1, 1);
    Tensor lhs = count_sketch(add(scale(a, 2.0), scale(b, -0.5)), p);
    Tensor rhs = add(scale(count_sketch(a, p), 2.0), scale(count_sketch(b, p), -0.5));
    for (std::size_t i = 0; i < 4; ++i) CHECK(lhs[i] == doctest::Approx(rhs[i]).epsilon(1e-12));

    SketchParams neg = p;
    for (auto& s : neg.s) s = -s;
    Tensor pos = count_sketch(a, p);
    Tensor flip = count_sketch(a, neg);
    for (std::size_t i = 0; i < 4; ++i) CHECK(flip[i] == doctest::Approx(-pos[i]));
}

TEST_CASE("outer_sketch_direct hand cases") {
    SketchParams pa, pv;
    pa.n = 1;
    pa.b = 1;
    pa.f = {0};
    pa.s = {1};
    pv = pa;
    CHECK(outer_sketch_direct(Tensor::vec({2}), Tensor::vec({3}), pa, pv).raw() == std::vector<double>{6});

    SketchParams qa, qv;
    qa.n = 2;
    qa.b = 2;
    qa.f = {0, 1};
    qa.s = {1, 1};
    qv.n = 1;
    qv.b = 2;
    qv.f = {0};
    qv.s = {1};
    Tensor r = outer_sketch_direct(Tensor::vec({1, 2}), Tensor::vec({3}), qa, qv);
    CHECK(r.raw() == std::vector<double>{3, 6});

    CHECK(outer_sketch_direct(Tensor::zeros({2}), Tensor::vec({3}), qa, qv).raw() == std::vector<double>{0, 0});
}

TEST_CASE("mcb_fuse scalar case") {
    SketchParams p = make_sketch_params(1, 1, 0);
    p.s = {1};
    Tensor img({1, 1, 1}, {2});
    Tensor out = mcb_fuse(img, Tensor::vec({3}), p, p);
    CHECK(out[0] == doctest::Approx(6.0));
}

TEST_CASE("mcb_fuse matches the brute-force oracle") {
    Rng rng(13);
    const std::size_t C = 8, L = 6, H = 2, W = 2, b = 16;
    SketchParams pi = make_sketch_params(C, b, 100);
    SketchParams pt = make_sketch_params(L, b, 200);
    Tensor img = rng.uniform_tensor({C, H, W}, -1, 1);
    Tensor txt = rng.uniform_tensor({L}, -1, 1);
    Tensor fused = mcb_fuse(img, txt, pi, pt);
    for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) {
            Tensor chan({C});
            for (std::size_t c = 0; c < C; ++c) chan[c] = img[(c * H + h) * W + w];
            Tensor direct = outer_sketch_direct(chan, txt, pi, pt);
            for (std::size_t k = 0; k < b; ++k)
                CHECK(std::abs(fused[(k * H + h) * W + w] - direct[k]) < 1e-9);
        }
}

TEST_CASE("mcb_fuse with zero text is zero") {
    SketchParams pi = make_sketch_params(4, 8, 1);
    SketchParams pt = make_sketch_params(3, 8, 2);
    Tensor img = Tensor::ones({4, 2, 2});
    Tensor out = mcb_fuse(img, Tensor::zeros({3}), pi, pt);
    for (std::size_t i = 0; i < out.numel(); ++i) CHECK(std::abs(out[i]) < 1e-12);
}

TEST_CASE("unbiasedness of the sketch inner product") {
    // mean over draws of <cs(a), cs(v)> approximates <a, v>
    Rng rng(77);
    const std::size_t n = 64, b = 32, draws = 1000;
    Tensor a = rng.uniform_tensor({n}, -1, 1);
    Tensor v = rng.uniform_tensor({n}, -1, 1);
    const double truth = dot(a, v);
    double sum = 0, sumsq = 0;
    for (std::size_t d = 0; d < draws; ++d) {
        SketchParams p = make_sketch_params(n, b, 1000 + d);
        const double est = dot(count_sketch(a, p), count_sketch(v, p));
        sum += est;
        sumsq += est * est;
    }
    const double mean = sum / draws;
    const double se = std::sqrt((sumsq / draws - mean * mean) / draws);
    CHECK(std::abs(mean - truth) <= 3.0 * se);
}

TEST_CASE("mcb gradients match finite differences") {
    Rng rng(31);
    const std::size_t C = 3, L = 4, b = 5;
    SketchParams pi = make_sketch_params(C, b, 5);
    SketchParams pt = make_sketch_params(L, b, 6);
    ad::Var img = ad::make_param(rng.uniform_tensor({C, 2, 2}, -1, 1));
    ad::Var txt = ad::make_param(rng.uniform_tensor({L}, -1, 1));
    auto fn = [&] { return ad::sum(ops::mcb_fuse(img, txt, pi, pt, 1e-6)); };
    CHECK(ad::grad_check(fn, {img, txt}, 1e-5) < 1e-4);

    // scalar case: d(a*v)/dv = a
    ad::Var a1 = ad::constant(Tensor({1, 1, 1}, {2.0}));
    ad::Var v1 = ad::make_param(Tensor::vec({3.0}));
    SketchParams p1 = make_sketch_params(1, 1, 0);
    p1.s = {1};
    ad::Var out = ad::sum(ops::mcb_fuse(a1, v1, p1, p1));
    ad::backward(out);
    CHECK(v1->grad[0] == doctest::Approx(2.0));
}

TEST_CASE("count_sketch var op gradient") {
    Rng rng(41);
    SketchParams p = make_sketch_params(6, 4, 9);
    ad::Var a = ad::make_param(rng.uniform_tensor({6}, -1, 1));
    Tensor wv = rng.uniform_tensor({4}, -1, 1);
    auto fn = [&] { return ad::sum(ad::mul(ops::count_sketch(a, p), ad::constant(wv))); };
    CHECK(ad::grad_check(fn, {a}, 1e-5) < 1e-8);
}

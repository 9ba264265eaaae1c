#include "doctest.h"
#include "qta/fusion.hpp"

using namespace qta;

TEST_CASE("question type sets") {
    QuestionTypeSet t = tdiuc_types();
    CHECK(t.size() == 12);
    CHECK(t.index_of("Absurd") == 11);
    CHECK_THROWS_AS(t.index_of("nope"), std::out_of_range);
    t.validate();

    QuestionTypeSet dup{{"a", "a"}};
    CHECK_THROWS_AS(dup.validate(), std::invalid_argument);
    QuestionTypeSet one{{"a"}};
    CHECK_THROWS_AS(one.validate(), std::invalid_argument);
}

TEST_CASE("concat_visual block bounds") {
    ad::Var a = ad::constant(Tensor::vec({1, 2, 3}));
    ad::Var b = ad::constant(Tensor::vec({4, 5}));
    ConcatVisual cv = concat_visual({a, b});
    CHECK(cv.feature->value.raw() == std::vector<double>{1, 2, 3, 4, 5});
    REQUIRE(cv.blocks.size() == 2);
    CHECK(cv.blocks[0] == std::pair<std::size_t, std::size_t>{0, 3});
    CHECK(cv.blocks[1] == std::pair<std::size_t, std::size_t>{3, 5});

    ConcatVisual single = concat_visual({a});
    CHECK(single.feature.get() == a.get());
    CHECK(single.blocks[0].second == 3);

    CHECK_THROWS_AS(concat_visual({}), std::invalid_argument);
}

TEST_CASE("qta_gate identity at all-ones init") {
    QtaWeights w = make_qta_weights(4, 3);
    ad::Var f = ad::constant(Tensor::vec({2, -1, 0.5, 7}));
    for (std::size_t t = 0; t < 3; ++t) {
        ad::Var g = qta_gate(f, t, w);
        for (std::size_t i = 0; i < 4; ++i) CHECK(g->value[i] == f->value[i]);
    }
}

TEST_CASE("qta_gate hand case") {
    // out[i] = F[i] * W[i, q], q = 1
    QtaWeights w{ad::make_param(Tensor({4, 2}, {1, 0, 2, 2, 3, -1.5, 0, 4})), false};
    ad::Var f = ad::constant(Tensor::vec({1, 1, -1, 2}));
    ad::Var g = qta_gate(f, 1, w);
    CHECK(g->value.raw() == std::vector<double>{0, 2, 1.5, 8});
}

TEST_CASE("qta_gate gradient only touches the active column") {
    QtaWeights w = make_qta_weights(3, 4);
    ad::Var f = ad::constant(Tensor::vec({1, 2, 3}));
    ad::backward(ad::sum(qta_gate(f, 2, w)));
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            double expect = (j == 2) ? f->value[i] : 0.0;
            CHECK(w.w->grad.at2(i, j) == expect);
        }

    w.w->zero_grad();
    auto fn = [&] { return ad::sum(ad::mul(qta_gate(f, 2, w), qta_gate(f, 2, w))); };
    CHECK(ad::grad_check(fn, {w.w}, 1e-5) < 1e-4);
}

TEST_CASE("nonneg gating is softplus of the stored column") {
    QtaWeights w{ad::make_param(Tensor({2, 1}, {0.0, -3.0})), true};
    ad::Var f = ad::constant(Tensor::vec({1, 1}));
    ad::Var g = qta_gate(f, 0, w);
    CHECK(g->value[0] == doctest::Approx(std::log(2.0)));
    CHECK(g->value[1] == doctest::Approx(std::log1p(std::exp(-3.0))));
    CHECK(g->value[1] > 0.0);
    auto fn = [&] { return ad::sum(qta_gate(f, 0, w)); };
    CHECK(ad::grad_check(fn, {w.w}, 1e-5) < 1e-4);
}

TEST_CASE("qta_gate_spatial matches the per-location loop") {
    Rng rng(21);
    const std::size_t C = 3, H = 2, W = 2;
    Tensor img = rng.normal_tensor({C, H, W});
    QtaWeights w{ad::make_param(rng.uniform_tensor({C, 2}, 0.1, 2.0)), false};
    ad::Var iv = ad::make_param(img);
    ad::Var g = qta_gate_spatial(iv, 1, w);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t s = 0; s < H * W; ++s)
            CHECK(g->value[c * H * W + s] == doctest::Approx(img[c * H * W + s] * w.w->value.at2(c, 1)).epsilon(1e-12));

    // 1x1 spatial degenerates to qta_gate
    Tensor flat({C, 1, 1}, {img[0], img[4], img[8]});
    ad::Var fv = ad::constant(Tensor::vec({img[0], img[4], img[8]}));
    ad::Var g1 = qta_gate_spatial(ad::constant(flat), 1, w);
    ad::Var g2 = qta_gate(fv, 1, w);
    for (std::size_t c = 0; c < C; ++c) CHECK(g1->value[c] == g2->value[c]);

    auto fn = [&] { return ad::sum(ad::mul(qta_gate_spatial(iv, 1, w), qta_gate_spatial(iv, 1, w))); };
    CHECK(ad::grad_check(fn, {iv, w.w}, 1e-5) < 1e-4);

    CHECK_THROWS_AS(qta_gate_spatial(fv, 0, w), std::invalid_argument);
}

TEST_CASE("qt_concat appends the type row") {
    Rng rng(22);
    TypeEmbedding emb = make_type_embedding(3, 2, rng);
    ad::Var f = ad::constant(Tensor::vec({5, 6}));
    ad::Var out = qt_concat(f, 2, emb);
    REQUIRE(out->value.numel() == 4);
    CHECK(out->value[0] == 5);
    CHECK(out->value[1] == 6);
    CHECK(out->value[2] == emb.rows->value.at2(2, 0));
    CHECK(out->value[3] == emb.rows->value.at2(2, 1));
    CHECK_THROWS_AS(qt_concat(f, 3, emb), std::out_of_range);

    TypeEmbedding none{};
    CHECK(qt_concat(f, 0, none).get() == f.get());
}

TEST_CASE("mcb_qta_fuse equals gate-then-mcb done by hand") {
    Rng rng(23);
    const std::size_t C1 = 2, C2 = 3, H = 2, W = 1, d_txt = 4, b = 8;
    SketchParams p_img = make_sketch_params(C1 + C2, b, 77);
    SketchParams p_txt = make_sketch_params(d_txt, b, 78);
    Tensor A = rng.normal_tensor({C1, H, W});
    Tensor B = rng.normal_tensor({C2, H, W});
    Tensor txt = rng.normal_tensor({d_txt});
    QtaWeights w{ad::make_param(rng.uniform_tensor({C1 + C2, 2}, 0.2, 1.8)), false};

    ad::Var av = ad::make_param(A), bv = ad::make_param(B), tv = ad::make_param(txt);
    ad::Var fused = mcb_qta_fuse(av, bv, tv, 1, w, p_img, p_txt);
    REQUIRE(fused->value.numel() == b * H * W);

    // oracle: concat channels, scale by the column, run the tensor-level mcb
    Tensor cat({C1 + C2, H, W});
    for (std::size_t i = 0; i < A.numel(); ++i) cat[i] = A[i];
    for (std::size_t i = 0; i < B.numel(); ++i) cat[A.numel() + i] = B[i];
    for (std::size_t c = 0; c < C1 + C2; ++c)
        for (std::size_t s = 0; s < H * W; ++s) cat[c * H * W + s] *= w.w->value.at2(c, 1);
    Tensor expect = mcb_fuse(cat, txt, p_img, p_txt);
    for (std::size_t i = 0; i < expect.numel(); ++i)
        CHECK(fused->value[i] == doctest::Approx(expect[i]).epsilon(1e-10));

    auto fn = [&] {
        ad::Var out = mcb_qta_fuse(av, bv, tv, 1, w, p_img, p_txt);
        return ad::sum(ad::mul(out, out));
    };
    CHECK(ad::grad_check(fn, {av, bv, tv, w.w}, 1e-5) < 1e-4);
}

TEST_CASE("qta and qt parameter budgets stay comparable") {
    // desk-scale CATL-QTA vs CATL-QT shapes: M = 64, N = 6, E chosen so the
    // added budgets agree within 10 percent
    const std::size_t m = 64, n = 6, mlp = 128;
    const std::size_t qta = qta_param_count(m, n);
    const std::size_t e = 3;
    const std::size_t qt = qt_param_count(n, e, mlp);
    const double ratio = static_cast<double>(qt) / static_cast<double>(qta);
    CHECK(ratio > 0.9);
    CHECK(ratio < 1.1);
}

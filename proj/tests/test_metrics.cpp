#include <algorithm>

#include "doctest.h"
#include "qta/metrics.hpp"

using namespace qta;

namespace {

// published per-type accuracy columns used as metric fixtures
const std::vector<double> kMcbQtaCol{93.56, 95.70, 59.82, 54.06, 60.55, 34.00,
                                     87.00, 100.00, 37.04, 94.34, 53.99, 65.65};
const std::vector<double> kCatlQtaWCol{93.80, 95.55, 60.16, 54.36, 60.10, 34.71,
                                       86.98, 100.00, 31.48, 94.55, 53.25, 64.38};

}  // namespace

TEST_CASE("published MPT columns reproduce within rounding slack") {
    auto [a1, h1] = mpt_from_accuracies(kMcbQtaCol);
    CHECK(std::abs(a1 - 69.69) <= 0.15);
    CHECK(std::abs(h1 - 61.56) <= 0.25);

    auto [a2, h2] = mpt_from_accuracies(kCatlQtaWCol);
    CHECK(std::abs(a2 - 69.11) <= 0.15);
    CHECK(std::abs(h2 - 60.08) <= 0.25);
}

TEST_CASE("mean identities") {
    auto [a, h] = mpt_from_accuracies({50, 50, 50});
    CHECK(a == doctest::Approx(50.0));
    CHECK(h == doctest::Approx(50.0));

    auto [a2, h2] = mpt_from_accuracies({100, 50});
    CHECK(a2 == doctest::Approx(75.0));
    CHECK(h2 == doctest::Approx(200.0 / 3.0));

    // zero term pins the harmonic mean to its limit
    auto [a3, h3] = mpt_from_accuracies({80, 0, 60});
    CHECK(a3 > 0.0);
    CHECK(h3 == 0.0);

    CHECK(arithmetic_mean({}) == 0.0);
    CHECK(harmonic_mean({}) == 0.0);
}

TEST_CASE("harmonic never exceeds arithmetic") {
    Rng rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> acc;
        const std::size_t n = 2 + rng.uniform_int(10);
        for (std::size_t i = 0; i < n; ++i) acc.push_back(1.0 + 99.0 * rng.uniform());
        auto [a, h] = mpt_from_accuracies(acc);
        CHECK(h <= a + 1e-12);
    }
}

TEST_CASE("evaluate counts exactly and excludes absent types") {
    QuestionTypeSet types{{"color", "absurd", "count"}};
    // color: 2/3 right, absurd: 1/1, count: absent
    std::vector<std::size_t> preds{0, 1, 2, 5};
    std::vector<std::size_t> targets{0, 1, 0, 5};
    std::vector<std::size_t> tos{0, 0, 0, 1};
    EvalReport r = evaluate(preds, targets, tos, types);

    CHECK(r.per_type_acc.at("color") == doctest::Approx(200.0 / 3.0));
    CHECK(r.per_type_acc.at("absurd") == doctest::Approx(100.0));
    CHECK(r.per_type_acc.count("count") == 0);
    CHECK(r.n_per_type.at("count") == 0);
    REQUIRE(r.absent_types.size() == 1);
    CHECK(r.absent_types[0] == "count");
    CHECK(r.arithmetic_mpt == doctest::Approx((200.0 / 3.0 + 100.0) / 2.0));
    CHECK(r.overall_acc == doctest::Approx(75.0));

    // permutation invariance over samples
    std::vector<std::size_t> order{3, 1, 0, 2};
    std::vector<std::size_t> p2, t2, y2;
    for (std::size_t i : order) {
        p2.push_back(preds[i]);
        t2.push_back(targets[i]);
        y2.push_back(tos[i]);
    }
    EvalReport r2 = evaluate(p2, t2, y2, types);
    CHECK(r2.arithmetic_mpt == r.arithmetic_mpt);
    CHECK(r2.harmonic_mpt == r.harmonic_mpt);
    CHECK(r2.overall_acc == r.overall_acc);

    CHECK_THROWS_AS(evaluate({0}, {0, 1}, {0, 0}, types), std::invalid_argument);
    CHECK_THROWS_AS(evaluate({0}, {0}, {7}, types), std::out_of_range);
}

TEST_CASE("confusion matrix") {
    // perfect predictions: identity
    ConfusionMatrix id = confusion({0, 1, 2, 1}, {0, 1, 2, 1}, 3);
    auto norm = id.normalized();
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 3; ++c) CHECK(norm[r * 3 + c] == (r == c ? 100.0 : 0.0));

    // everything predicted as type 0
    ConfusionMatrix col0 = confusion({0, 0, 0}, {0, 1, 2}, 3);
    auto n0 = col0.normalized();
    for (std::size_t r = 0; r < 3; ++r) {
        CHECK(n0[r * 3 + 0] == 100.0);
        CHECK(n0[r * 3 + 1] == 0.0);
    }

    // hand count
    ConfusionMatrix m = confusion({1, 1, 0, 2, 1}, {0, 0, 0, 2, 1}, 3);
    CHECK(m.at(0, 1) == 2);
    CHECK(m.at(0, 0) == 1);
    CHECK(m.at(2, 2) == 1);
    CHECK(m.at(1, 1) == 1);
    CHECK(m.at(1, 0) == 0);

    // nonempty row sums of the normalized view are 100
    auto nm = m.normalized();
    for (std::size_t r = 0; r < 3; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < 3; ++c) s += nm[r * 3 + c];
        CHECK(s == doctest::Approx(100.0).epsilon(1e-11));
    }

    // empty rows stay zero
    ConfusionMatrix e = confusion({0}, {0}, 2);
    auto ne = e.normalized();
    CHECK(ne[2] == 0.0);
    CHECK(ne[3] == 0.0);

    CHECK_THROWS_AS(confusion({5}, {0}, 3), std::out_of_range);
    CHECK_THROWS_AS(confusion({0, 1}, {0}, 3), std::invalid_argument);
}

TEST_CASE("norm report") {
    QuestionTypeSet types{{"color", "absurd"}};
    BlockBounds blocks{{0, 2}, {2, 4}};
    std::vector<std::string> names{"srcA", "srcB"};
    std::vector<Tensor> feats{Tensor::vec({3, 4, 1, 0}), Tensor::vec({0, 5, 2, 2})};
    std::vector<std::size_t> tos{0, 1};

    // identity gating: zero differences
    NormReport rep = norm_report(Tensor::ones({4, 2}), blocks, names, feats, tos, types);
    REQUIRE(rep.rows.size() == 4);
    for (const auto& r : rep.rows) {
        CHECK(r.diff == 0.0);
        CHECK(r.gated_norm_mean == r.raw_norm_mean);
    }
    // raw norms themselves are the plain L2 of each block
    CHECK(rep.rows[0].raw_norm_mean == doctest::Approx(5.0));         // color, srcA: |(3,4)|
    CHECK(rep.rows[1].raw_norm_mean == doctest::Approx(1.0));         // color, srcB: |(1,0)|
    CHECK(rep.rows[3].raw_norm_mean == doctest::Approx(std::sqrt(8.0)));

    // doubling only block A for type 0 scales exactly that row
    Tensor w = Tensor::ones({4, 2});
    w.at2(0, 0) = 2.0;
    w.at2(1, 0) = 2.0;
    NormReport rep2 = norm_report(w, blocks, names, feats, tos, types);
    CHECK(rep2.rows[0].gated_norm_mean == doctest::Approx(10.0));
    CHECK(rep2.rows[0].diff == doctest::Approx(5.0));
    CHECK(rep2.rows[1].diff == doctest::Approx(0.0));
    CHECK(rep2.rows[2].diff == doctest::Approx(0.0));  // absurd rows untouched
    CHECK(rep2.rows[3].diff == doctest::Approx(0.0));

    // csv shape
    std::string csv = rep2.to_csv();
    CHECK(csv.rfind("type,block,raw_norm_mean,gated_norm_mean,diff\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
    CHECK(csv.find("color,srcA,") != std::string::npos);
}

TEST_CASE("cross entropy on probabilities") {
    Tensor p = Tensor::vec({0.5, 0.25, 0.25});
    CHECK(cross_entropy_probs(p, 0) == doctest::Approx(std::log(2.0)));
    // clamp keeps zero probabilities finite
    Tensor q = Tensor::vec({1.0, 0.0});
    CHECK(cross_entropy_probs(q, 1) == doctest::Approx(-std::log(1e-12)));
    CHECK_THROWS_AS(cross_entropy_probs(p, 3), std::out_of_range);
}

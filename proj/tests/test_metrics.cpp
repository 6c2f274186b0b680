#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fgloc/metrics.hpp"

using namespace fgloc;

namespace {

Tensor<double> mask_of(std::vector<double> v) {
    Shape shape{v.size()};
    return Tensor<double>(std::move(shape), std::move(v));
}

// Brute-force AUC: enumerate all (positive, negative) pairs.
double auc_pairwise(const Tensor<double>& prob, const Tensor<double>& gt) {
    double wins = 0;
    std::uint64_t pairs = 0;
    for (std::size_t i = 0; i < prob.size(); ++i) {
        if (gt.data()[i] != 1.0) continue;
        for (std::size_t j = 0; j < prob.size(); ++j) {
            if (gt.data()[j] != 0.0) continue;
            ++pairs;
            if (prob.data()[i] > prob.data()[j])
                wins += 1;
            else if (prob.data()[i] == prob.data()[j])
                wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

}  // namespace

TEST_CASE("confusion counts") {
    Tensor<double> gt({10, 10, 1}, 0.0);
    for (int i = 0; i < 10; ++i) gt.data()[i] = 1.0;
    auto c = confusion(gt, gt);
    CHECK(c.tp == 10);
    CHECK(c.tn == 90);
    CHECK(c.fp == 0);
    CHECK(c.fn == 0);
    CHECK(c.total() == 100);

    Tensor<double> z({4, 4, 1}, 0.0);
    auto cz = confusion(z, z);
    CHECK(cz.tn == 16);
    CHECK(cz.tp + cz.fp + cz.fn == 0);

    Rng rng(0);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor<double> p({4, 4, 1}), g({4, 4, 1});
        for (auto& v : p.values()) v = uniform_int(rng, 0, 1);
        for (auto& v : g.values()) v = uniform_int(rng, 0, 1);
        auto cc = confusion(p, g);
        std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
        for (std::size_t i = 0; i < 16; ++i) {
            bool pp = p.data()[i] == 1.0, gg = g.data()[i] == 1.0;
            tp += pp && gg;
            fp += pp && !gg;
            fn += !pp && gg;
            tn += !pp && !gg;
        }
        CHECK(cc.tp == tp);
        CHECK(cc.fp == fp);
        CHECK(cc.tn == tn);
        CHECK(cc.fn == fn);
    }

    Tensor<double> bad({1}, std::vector<double>{0.5});
    CHECK_THROWS_AS(confusion(bad, mask_of({0})), std::invalid_argument);
    CHECK_THROWS_AS(confusion(mask_of({0, 1}), mask_of({0})), ShapeError);
}

TEST_CASE("pixel_accuracy and f1 hand cases") {
    ConfusionCounts perfect{5, 0, 11, 0};
    CHECK(pixel_accuracy(perfect) == 1.0);
    CHECK(f1(perfect) == 1.0);

    // precision 1/3, recall 1/2
    ConfusionCounts c{2, 4, 0, 2};
    CHECK(f1(c) == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(pixel_accuracy(c) == doctest::Approx(2.0 / 8.0));

    ConfusionCounts empty{0, 0, 9, 0};
    CHECK(f1(empty) == 1.0);
    CHECK(pixel_accuracy(empty) == 1.0);

    CHECK_THROWS_AS(pixel_accuracy(ConfusionCounts{}), std::invalid_argument);
}

TEST_CASE("ciou hand cases") {
    Tensor<double> gt({4, 4, 1}, 0.0);
    for (int i = 0; i < 4; ++i) gt.data()[i] = 1.0;
    CHECK(ciou(gt, gt) == 1.0);

    // gt 4 forged, pred 4 forged, overlap 2: forged 2/6, authentic 10/14
    Tensor<double> pred({4, 4, 1}, 0.0);
    pred.data()[2] = pred.data()[3] = pred.data()[4] = pred.data()[5] = 1.0;
    CHECK(ciou(pred, gt) == doctest::Approx(0.5 * (2.0 / 6.0 + 10.0 / 14.0)).epsilon(1e-12));

    Tensor<double> comp({4, 4, 1});
    for (std::size_t i = 0; i < 16; ++i) comp.data()[i] = 1.0 - gt.data()[i];
    CHECK(ciou(comp, gt) == 0.0);

    // empty union convention: all-zero masks -> forged class contributes 1
    Tensor<double> z({4, 4, 1}, 0.0);
    CHECK(ciou(z, z) == 1.0);
}

TEST_CASE("exhaustive 3x3: ciou and f1 agree with set enumeration") {
    for (unsigned pm = 0; pm < 512; ++pm) {
        for (unsigned gm = 0; gm < 512; ++gm) {
            Tensor<double> p({3, 3, 1}), g({3, 3, 1});
            for (int i = 0; i < 9; ++i) {
                p.data()[i] = (pm >> i) & 1;
                g.data()[i] = (gm >> i) & 1;
            }
            std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
            for (int i = 0; i < 9; ++i) {
                bool pp = p.data()[i] == 1.0, gg = g.data()[i] == 1.0;
                tp += pp && gg;
                fp += pp && !gg;
                fn += !pp && gg;
                tn += !pp && !gg;
            }
            double want_f1 = (2 * tp + fp + fn) == 0
                                 ? 1.0
                                 : 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
            double iou_f = (tp + fp + fn) == 0 ? 1.0 : tp / static_cast<double>(tp + fp + fn);
            double iou_a = (tn + fp + fn) == 0 ? 1.0 : tn / static_cast<double>(tn + fp + fn);
            auto c = confusion(p, g);
            REQUIRE(f1(c) == want_f1);
            REQUIRE(ciou(p, g) == 0.5 * (iou_f + iou_a));
        }
    }
}

TEST_CASE("auc hand cases") {
    // perfect separation
    auto gt6 = mask_of({1, 1, 1, 0, 0, 0});
    CHECK(*auc(mask_of({0.9, 0.8, 0.7, 0.3, 0.2, 0.1}), gt6) == 1.0);
    // all ties
    CHECK(*auc(mask_of({0.4, 0.4, 0.4, 0.4, 0.4, 0.4}), gt6) == 0.5);
    // 8 of 9 pairwise wins
    auto prob = mask_of({0.9, 0.8, 0.4, 0.7, 0.3, 0.2});
    CHECK(*auc(prob, gt6) == doctest::Approx(8.0 / 9.0).epsilon(1e-12));
    // single-class ground truth is undefined
    CHECK(!auc(prob, mask_of({1, 1, 1, 1, 1, 1})).has_value());
    CHECK(!auc(prob, mask_of({0, 0, 0, 0, 0, 0})).has_value());
    CHECK_THROWS_AS(auc(prob, mask_of({0, 0, 0.5, 1, 1, 1})), std::invalid_argument);
}

TEST_CASE("auc matches pairwise enumeration on random instances") {
    Rng rng(3);
    for (int trial = 0; trial < 500; ++trial) {
        std::size_t n = uniform_int(rng, 2, 20);
        Tensor<double> prob({n}), gt({n});
        bool has_pos = false, has_neg = false;
        for (std::size_t i = 0; i < n; ++i) {
            // coarse grid to force ties regularly
            prob.data()[i] = uniform_int(rng, 0, 4) / 4.0;
            gt.data()[i] = uniform_int(rng, 0, 1);
            (gt.data()[i] == 1.0 ? has_pos : has_neg) = true;
        }
        if (!has_pos || !has_neg) {
            CHECK(!auc(prob, gt).has_value());
            continue;
        }
        CHECK(*auc(prob, gt) == doctest::Approx(auc_pairwise(prob, gt)).epsilon(1e-10));
    }
}

TEST_CASE("auc invariant under strictly monotone transforms") {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor<double> prob({12}), gt({12});
        for (auto& v : prob.values()) v = uniform(rng, 0, 1);
        for (auto& v : gt.values()) v = uniform_int(rng, 0, 1);
        gt.data()[0] = 1.0;
        gt.data()[1] = 0.0;
        double base = *auc(prob, gt);
        Tensor<double> cubed(prob.shape()), logistic(prob.shape());
        for (std::size_t i = 0; i < 12; ++i) {
            cubed.data()[i] = prob.data()[i] * prob.data()[i] * prob.data()[i];
            logistic.data()[i] = 1.0 / (1.0 + std::exp(-7.0 * prob.data()[i]));
        }
        CHECK(*auc(cubed, gt) == doctest::Approx(base).epsilon(1e-12));
        CHECK(*auc(logistic, gt) == doctest::Approx(base).epsilon(1e-12));
    }
}

TEST_CASE("metrics invariant under simultaneous flips") {
    Rng rng(5);
    auto flip_h = [](const Tensor<double>& t) {
        auto [h, w, c] = std::tuple{t.shape()[0], t.shape()[1], t.shape()[2]};
        Tensor<double> out(t.shape());
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                for (std::size_t k = 0; k < c; ++k)
                    out.data()[(y * w + (w - 1 - x)) * c + k] = t.data()[(y * w + x) * c + k];
        return out;
    };
    for (int trial = 0; trial < 20; ++trial) {
        Tensor<double> prob({6, 6, 1}), gt({6, 6, 1});
        for (auto& v : prob.values()) v = uniform(rng, 0, 1);
        for (auto& v : gt.values()) v = uniform_int(rng, 0, 1);
        gt.data()[0] = 1.0;
        gt.data()[1] = 0.0;
        auto pred = predict_mask(prob, 0.5);
        CHECK(ciou(flip_h(pred), flip_h(gt)) == ciou(pred, gt));
        CHECK(f1(confusion(flip_h(pred), flip_h(gt))) == f1(confusion(pred, gt)));
        CHECK(*auc(flip_h(prob), flip_h(gt)) == doctest::Approx(*auc(prob, gt)).epsilon(1e-14));
    }
}

TEST_CASE("summarize and format_report") {
    ImageMetrics a{"a", 1.0, 1.0, 0.4, 0.9};
    ImageMetrics b{"b", 0.5, 0.5, 0.6, std::nullopt};
    auto r = summarize({a, b}, 0.5);
    CHECK(r.image_count == 2);
    CHECK(r.mean_ciou == doctest::Approx(0.5));
    CHECK(r.mean_accuracy == doctest::Approx(0.75));
    REQUIRE(r.mean_auc.has_value());
    CHECK(*r.mean_auc == doctest::Approx(0.9));  // undefined AUCs excluded from the mean

    auto text = format_report(r);
    CHECK(text.find("image: a") != std::string::npos);
    CHECK(text.find("auc: undefined") != std::string::npos);
    CHECK(text.find("threshold: 0.5") != std::string::npos);

    CHECK_THROWS_AS(summarize({}, 0.5), std::invalid_argument);
}

TEST_CASE("evaluate runs the model per image") {
    NetworkConfig cfg;
    cfg.input_h = cfg.input_w = 16;
    cfg.width_scale_num = 1;
    cfg.width_scale_den = 8;
    auto model = build_model<double>(cfg, 0);
    Rng rng(6);
    std::vector<std::pair<Tensor<double>, Tensor<double>>> data;
    for (int i = 0; i < 2; ++i) {
        Tensor<double> img({16, 16, 3}), m({16, 16, 1});
        for (auto& v : img.values()) v = uniform(rng, 0, 1);
        for (auto& v : m.values()) v = uniform_int(rng, 0, 1);
        data.emplace_back(img, m);
    }
    auto r = evaluate(model, data);
    CHECK(r.image_count == 2);
    CHECK(r.threshold == 0.5);
    for (const auto& m : r.per_image) {
        CHECK(m.accuracy >= 0.0);
        CHECK(m.accuracy <= 1.0);
        CHECK(m.ciou >= 0.0);
        CHECK(m.ciou <= 1.0);
    }
    // inference is deterministic
    auto r2 = evaluate(model, data);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(r.per_image[i].accuracy == r2.per_image[i].accuracy);
        CHECK(r.per_image[i].ciou == r2.per_image[i].ciou);
    }
    CHECK_THROWS_AS(evaluate(model, {}), std::invalid_argument);
}

#include <doctest.h>

#include <cmath>

#include "cloudkd/metrics.hpp"

using namespace cloudkd;

namespace {

MaskRaster make_mask(uint32_t h, uint32_t w, uint8_t classes, MaskScheme scheme) {
    MaskRaster m;
    m.height = h;
    m.width = w;
    m.classes = classes;
    m.scheme = scheme;
    m.data.assign(m.size(), 0);
    return m;
}

// Independent brute-force counter used as the oracle.
struct BruteCounts {
    uint64_t tp = 0, fp = 0, fn = 0, tn = 0, ignored = 0;
};

BruteCounts brute_confusion(const MaskRaster& pred, const MaskRaster& gt,
                            uint8_t cls, const std::vector<uint8_t>& ignore) {
    BruteCounts c;
    for (size_t i = 0; i < gt.data.size(); ++i) {
        bool skip = false;
        for (uint8_t ig : ignore)
            if (gt.data[i] == ig) skip = true;
        if (skip) {
            ++c.ignored;
            continue;
        }
        const bool p = pred.data[i] == cls;
        const bool g = gt.data[i] == cls;
        if (p && g)
            ++c.tp;
        else if (p && !g)
            ++c.fp;
        else if (!p && g)
            ++c.fn;
        else
            ++c.tn;
    }
    return c;
}

} // namespace

TEST_CASE("perfect prediction has no false counts and all metrics 1") {
    Rng rng(31);
    MaskRaster gt = make_mask(10, 10, 2, MaskScheme::BinaryCloud);
    for (auto& v : gt.data) v = rng.below(2);
    ConfusionMatrix cm = confusion(gt, gt, 1, {});
    CHECK(cm.fp == 0);
    CHECK(cm.fn == 0);
    CHECK(cm.tp + cm.tn == 100);
    ClassMetrics m = metrics_from_confusion(cm);
    CHECK(m.ji.value == 1.0);
    CHECK(m.pr.value == 1.0);
    CHECK(m.re.value == 1.0);
    CHECK(m.spe.value == 1.0);
    CHECK(m.oa.value == 1.0);
    CHECK(m.flags().empty());
}

TEST_CASE("half-cloud ground truth with an all-cloud prediction") {
    MaskRaster gt = make_mask(10, 10, 2, MaskScheme::BinaryCloud);
    for (size_t i = 0; i < 50; ++i) gt.data[i] = 1;
    MaskRaster pred = make_mask(10, 10, 2, MaskScheme::BinaryCloud);
    for (auto& v : pred.data) v = 1;
    ConfusionMatrix cm = confusion(pred, gt, 1, {});
    CHECK(cm.tp == 50);
    CHECK(cm.fp == 50);
    CHECK(cm.fn == 0);
    CHECK(cm.tn == 0);

    ClassMetrics m = metrics_from_confusion(cm);
    CHECK(m.ji.value == doctest::Approx(0.5));
    CHECK(m.pr.value == doctest::Approx(0.5));
    CHECK(m.re.value == doctest::Approx(1.0));
    // Spe = TN/(TN+FP) = 0/50: a defined zero, no flag.
    CHECK(m.spe.value == 0.0);
    CHECK_FALSE(m.spe.undefined);
    CHECK(m.oa.value == doctest::Approx(0.5));
    CHECK(m.flags().empty());
}

TEST_CASE("specificity is flagged undefined only when TN+FP is zero") {
    // All-cloud ground truth: no negatives at all.
    MaskRaster gt = make_mask(4, 4, 2, MaskScheme::BinaryCloud);
    for (auto& v : gt.data) v = 1;
    ClassMetrics m = metrics_from_confusion(confusion(gt, gt, 1, {}));
    CHECK(m.spe.value == 0.0);
    CHECK(m.spe.undefined);
    CHECK(m.flags() == "spe_undef");
    CHECK(m.ji.value == 1.0);
}

TEST_CASE("ignored ground-truth pixels are excluded and counted") {
    MaskRaster gt = make_mask(5, 5, 6, MaskScheme::KzSix);
    MaskRaster pred = make_mask(5, 5, 6, MaskScheme::KzSix);
    for (int i = 0; i < 7; ++i) gt.data[i] = kz::kUndefined;
    for (int i = 7; i < 12; ++i) gt.data[i] = kz::kCloud;
    for (int i = 7; i < 10; ++i) pred.data[i] = kz::kCloud;
    ConfusionMatrix cm = confusion(pred, gt, kz::kCloud, {kz::kUndefined, kz::kMissing});
    CHECK(cm.ignored == 7);
    CHECK(cm.tp == 3);
    CHECK(cm.fn == 2);
    CHECK(cm.fp == 0);
    CHECK(cm.tp + cm.fp + cm.fn + cm.tn + cm.ignored == 25);
}

TEST_CASE("disjoint prediction and ground truth give JI 0") {
    MaskRaster gt = make_mask(4, 4, 2, MaskScheme::BinaryCloud);
    MaskRaster pred = gt;
    gt.data[0] = 1;
    pred.data[5] = 1;
    ClassMetrics m = metrics_from_confusion(confusion(pred, gt, 1, {}));
    CHECK(m.ji.value == 0.0);
    CHECK_FALSE(m.ji.undefined);
}

TEST_CASE("shape mismatch is rejected") {
    MaskRaster a = make_mask(4, 4, 2, MaskScheme::BinaryCloud);
    MaskRaster b = make_mask(4, 5, 2, MaskScheme::BinaryCloud);
    CHECK_THROWS_AS(confusion(a, b, 1, {}), std::invalid_argument);
}

TEST_CASE("module counts and metrics match the brute-force oracle exactly") {
    Rng rng(32);
    for (int trial = 0; trial < 100; ++trial) {
        const bool six = trial % 2 == 1;
        const uint8_t K = six ? 6 : 2;
        const MaskScheme scheme = six ? MaskScheme::KzSix : MaskScheme::BinaryCloud;
        MaskRaster gt = make_mask(64, 64, K, scheme);
        MaskRaster pred = make_mask(64, 64, K, scheme);
        for (auto& v : gt.data) v = static_cast<uint8_t>(rng.below(K));
        for (auto& v : pred.data) v = static_cast<uint8_t>(rng.below(K));
        const auto ignore = ignore_classes(scheme);
        for (uint8_t cls : evaluated_classes(scheme)) {
            ConfusionMatrix cm = confusion(pred, gt, cls, ignore);
            BruteCounts oracle = brute_confusion(pred, gt, cls, ignore);
            REQUIRE(cm.tp == oracle.tp);
            REQUIRE(cm.fp == oracle.fp);
            REQUIRE(cm.fn == oracle.fn);
            REQUIRE(cm.tn == oracle.tn);
            REQUIRE(cm.ignored == oracle.ignored);

            ClassMetrics m = metrics_from_confusion(cm);
            if (!m.ji.undefined && !m.pr.undefined && !m.re.undefined) {
                REQUIRE(m.ji.value <= m.pr.value + 1e-15);
                REQUIRE(m.ji.value <= m.re.value + 1e-15);
            }
            // OA identity: OA = (Re*P + Spe*N) / (P+N).
            const double P = static_cast<double>(cm.tp + cm.fn);
            const double N = static_cast<double>(cm.tn + cm.fp);
            if (P > 0 && N > 0) {
                const double oa = (m.re.value * P + m.spe.value * N) / (P + N);
                REQUIRE(m.oa.value == doctest::Approx(oa).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("swapping prediction and ground truth swaps Pr and Re, keeps JI and OA") {
    Rng rng(33);
    MaskRaster gt = make_mask(32, 32, 2, MaskScheme::BinaryCloud);
    MaskRaster pred = make_mask(32, 32, 2, MaskScheme::BinaryCloud);
    for (auto& v : gt.data) v = rng.below(2);
    for (auto& v : pred.data) v = rng.below(2);
    ClassMetrics a = metrics_from_confusion(confusion(pred, gt, 1, {}));
    ClassMetrics b = metrics_from_confusion(confusion(gt, pred, 1, {}));
    CHECK(a.ji.value == b.ji.value);
    CHECK(a.oa.value == b.oa.value);
    CHECK(a.pr.value == b.re.value);
    CHECK(a.re.value == b.pr.value);
}

TEST_CASE("aggregate: singleton list degenerates to (mu, mu)") {
    AggregateEntry e = aggregate({0.7});
    CHECK(e.mean == doctest::Approx(0.7));
    CHECK(e.median == doctest::Approx(0.7));
    CHECK(e.ci_low == doctest::Approx(0.7));
    CHECK(e.ci_high == doctest::Approx(0.7));
}

TEST_CASE("aggregate matches the hand-computed oracle on [0.2, 0.4, 0.9]") {
    AggregateEntry e = aggregate({0.2, 0.4, 0.9});
    CHECK(e.mean == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(e.median == doctest::Approx(0.4).epsilon(1e-12));
    // mu +- t_{0.975,2} * s / sqrt(3), t = 4.3026527296961419,
    // s = 0.36055512754639896.
    CHECK(e.ci_low == doctest::Approx(-0.39566858949186046).epsilon(1e-9));
    CHECK(e.ci_high == doctest::Approx(1.3956685894918603).epsilon(1e-9));
}

TEST_CASE("aggregate: even count medians average the middle two") {
    AggregateEntry e = aggregate({0.1, 0.9, 0.3, 0.5});
    CHECK(e.median == doctest::Approx(0.4));
    CHECK(e.mean == doctest::Approx(0.45));
    CHECK(e.ci_low <= e.mean);
    CHECK(e.mean <= e.ci_high);
}

TEST_CASE("aggregate rejects an empty list") {
    CHECK_THROWS_AS(aggregate({}), std::invalid_argument);
}

TEST_CASE("CI covers the true mean about 95% of the time") {
    Rng rng(34);
    const int trials = 1000, n = 10;
    int covered = 0;
    for (int t = 0; t < trials; ++t) {
        std::vector<double> sample(n);
        for (double& v : sample) v = rng.normal();
        AggregateEntry e = aggregate(sample);
        if (e.ci_low <= 0.0 && 0.0 <= e.ci_high) ++covered;
    }
    const double rate = static_cast<double>(covered) / trials;
    CHECK(rate > 0.93);
    CHECK(rate < 0.97);
}

TEST_CASE("pooled jaccard: single scene equals per-scene JI") {
    Rng rng(35);
    MaskRaster gt = make_mask(16, 16, 2, MaskScheme::BinaryCloud);
    MaskRaster pred = make_mask(16, 16, 2, MaskScheme::BinaryCloud);
    for (auto& v : gt.data) v = rng.below(2);
    for (auto& v : pred.data) v = rng.below(2);
    const double pooled = pooled_jaccard({&pred}, {&gt}, 1, {});
    const double scene = metrics_from_confusion(confusion(pred, gt, 1, {})).ji.value;
    CHECK(pooled == scene);
}

TEST_CASE("pooled jaccard differs from the mean of per-scene JIs") {
    // Scene A: (TP,FP,FN) = (1,0,0); scene B: (0,1,1).
    MaskRaster gt_a = make_mask(1, 2, 2, MaskScheme::BinaryCloud);
    MaskRaster pred_a = gt_a;
    gt_a.data = {1, 0};
    pred_a.data = {1, 0};
    MaskRaster gt_b = make_mask(1, 2, 2, MaskScheme::BinaryCloud);
    MaskRaster pred_b = gt_b;
    gt_b.data = {1, 0};
    pred_b.data = {0, 1};
    const double pooled = pooled_jaccard({&pred_a, &pred_b}, {&gt_a, &gt_b}, 1, {});
    CHECK(pooled == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    const double ji_a = metrics_from_confusion(confusion(pred_a, gt_a, 1, {})).ji.value;
    const double ji_b = metrics_from_confusion(confusion(pred_b, gt_b, 1, {})).ji.value;
    CHECK(0.5 * (ji_a + ji_b) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("pooled jaccard is 1 when every scene is perfect and equals the per-scene value on copies") {
    Rng rng(36);
    MaskRaster gt = make_mask(8, 8, 2, MaskScheme::BinaryCloud);
    for (auto& v : gt.data) v = rng.below(2);
    CHECK(pooled_jaccard({&gt, &gt, &gt}, {&gt, &gt, &gt}, 1, {}) == 1.0);

    MaskRaster pred = gt;
    pred.data[3] = 1 - pred.data[3];
    const double one = metrics_from_confusion(confusion(pred, gt, 1, {})).ji.value;
    CHECK(pooled_jaccard({&pred, &pred}, {&gt, &gt}, 1, {}) == doctest::Approx(one));
    CHECK_THROWS_AS(pooled_jaccard({&pred}, {&gt, &gt}, 1, {}), std::invalid_argument);
}

#include <doctest.h>

#include "cloudkd/morphology.hpp"

using namespace cloudkd;

namespace {

MaskRaster make_mask(uint32_t h, uint32_t w, uint8_t fill = 0) {
    MaskRaster m;
    m.height = h;
    m.width = w;
    m.classes = 2;
    m.scheme = MaskScheme::BinaryCloud;
    m.data.assign(m.size(), fill);
    return m;
}

MaskRaster random_mask(uint32_t h, uint32_t w, Rng& rng, double density) {
    MaskRaster m = make_mask(h, w);
    for (auto& v : m.data) v = rng.uniform() < density ? 1 : 0;
    return m;
}

MaskRaster invert(const MaskRaster& m) {
    MaskRaster out = m;
    for (auto& v : out.data) v = 1 - v;
    return out;
}

} // namespace

TEST_CASE("structuring element validation") {
    CHECK_THROWS_AS(StructuringElement::box(4), std::invalid_argument);
    CHECK_THROWS_AS(StructuringElement(3, std::vector<bool>(4, true)),
                    std::invalid_argument);
    // Asymmetric pattern.
    std::vector<bool> asym = {true, false, false, false, true, false, false, false, false};
    CHECK_THROWS_AS(StructuringElement(3, asym), std::invalid_argument);
    // Symmetric cross is fine.
    std::vector<bool> cross = {false, true, false, true, true, true, false, true, false};
    StructuringElement se(3, cross);
    CHECK(se.offsets().size() == 5);
}

TEST_CASE("erosion of an all-ones mask keeps all ones (pad-with-1)") {
    MaskRaster m = make_mask(6, 6, 1);
    MaskRaster out = morph(m, MorphOp::Erode, StructuringElement::box(3));
    CHECK(out.data == m.data);
}

TEST_CASE("dilating a single center pixel produces a 3x3 block") {
    MaskRaster m = make_mask(5, 5);
    m.data[2 * 5 + 2] = 1;
    MaskRaster out = morph(m, MorphOp::Dilate, StructuringElement::box(3));
    // Manual evaluation on the 5x5 grid.
    for (uint32_t y = 0; y < 5; ++y)
        for (uint32_t x = 0; x < 5; ++x) {
            const bool in_block = y >= 1 && y <= 3 && x >= 1 && x <= 3;
            CHECK(out.data[y * 5 + x] == (in_block ? 1 : 0));
        }
}

TEST_CASE("opening removes a single isolated pixel") {
    MaskRaster m = make_mask(5, 5);
    m.data[2 * 5 + 2] = 1;
    MaskRaster out = morph(m, MorphOp::Open, StructuringElement::box(3));
    for (uint8_t v : out.data) CHECK(v == 0);
}

TEST_CASE("non-binary input is rejected") {
    MaskRaster m = make_mask(4, 4);
    m.classes = 6;
    m.data[5] = 3;
    CHECK_THROWS_AS(morph(m, MorphOp::Erode, StructuringElement::box(3)),
                    std::invalid_argument);
    CHECK_THROWS_AS(adaptive_postprocess(m), std::invalid_argument);
}

TEST_CASE("morphology properties on random masks") {
    Rng rng(21);
    const auto se = StructuringElement::box(3);
    for (int trial = 0; trial < 60; ++trial) {
        const double density = rng.uniform(0.05, 0.95);
        MaskRaster m = random_mask(24, 24, rng, density);
        MaskRaster opened = morph(m, MorphOp::Open, se);
        MaskRaster closed = morph(m, MorphOp::Close, se);

        // Idempotence.
        REQUIRE(morph(opened, MorphOp::Open, se).data == opened.data);
        REQUIRE(morph(closed, MorphOp::Close, se).data == closed.data);

        // open(x) <= x <= close(x) pixelwise.
        for (size_t i = 0; i < m.data.size(); ++i) {
            REQUIRE(opened.data[i] <= m.data[i]);
            REQUIRE(m.data[i] <= closed.data[i]);
        }

        // Duality under the stated border convention.
        MaskRaster dual = invert(morph(invert(m), MorphOp::Open, se));
        REQUIRE(dual.data == closed.data);
    }
}

TEST_CASE("duality also holds for 5x5 elements and crosses") {
    Rng rng(22);
    std::vector<bool> cross = {false, true, false, true, true, true, false, true, false};
    for (const auto& se : {StructuringElement::box(5), StructuringElement(3, cross)}) {
        MaskRaster m = random_mask(20, 20, rng, 0.5);
        MaskRaster dual = invert(morph(invert(m), MorphOp::Open, se));
        CHECK(dual.data == morph(m, MorphOp::Close, se).data);
    }
}

TEST_CASE("adaptive rule: above half cloud closes, at or below half opens") {
    // >50% cloud with a small interior hole: closing fills the hole.
    MaskRaster cloudy = make_mask(8, 8, 1);
    cloudy.data[3 * 8 + 3] = 0;
    CHECK(cloud_fraction(cloudy) > 0.5);
    MaskRaster closed = adaptive_postprocess(cloudy);
    CHECK(closed.data == morph(cloudy, MorphOp::Close, StructuringElement::box(3)).data);
    CHECK(closed.data[3 * 8 + 3] == 1);

    // Exactly 50%: routes to opening (strict threshold).
    MaskRaster half = make_mask(4, 4);
    for (uint32_t y = 0; y < 2; ++y)
        for (uint32_t x = 0; x < 4; ++x) half.data[y * 4 + x] = 1;
    CHECK(cloud_fraction(half) == doctest::Approx(0.5));
    MaskRaster routed = adaptive_postprocess(half);
    CHECK(routed.data == morph(half, MorphOp::Open, StructuringElement::box(3)).data);
}

TEST_CASE("adaptive rule on a mostly-cloudy 512x512 patch applies closing") {
    MaskRaster m = make_mask(512, 512);
    // 60% of rows cloud, with pinholes that only closing would fill.
    const uint32_t cloud_rows = 308; // ~60%
    for (uint32_t y = 0; y < cloud_rows; ++y)
        for (uint32_t x = 0; x < 512; ++x) m.data[y * 512 + x] = 1;
    for (uint32_t k = 0; k < 50; ++k) m.data[(10 + k) * 512 + 17 + k] = 0;
    CHECK(cloud_fraction(m) > 0.5);
    MaskRaster out = adaptive_postprocess(m);
    CHECK(out.data == morph(m, MorphOp::Close, StructuringElement::box(3)).data);
    CHECK(out.data[10 * 512 + 17] == 1); // pinhole filled
}

TEST_CASE("all-zero mask is a fixed point of the adaptive rule") {
    MaskRaster m = make_mask(16, 16);
    MaskRaster out = adaptive_postprocess(m);
    for (uint8_t v : out.data) CHECK(v == 0);
}

TEST_CASE("a clear patch with one false-positive pixel comes back clear") {
    MaskRaster m = make_mask(16, 16);
    m.data[5 * 16 + 9] = 1;
    MaskRaster out = adaptive_postprocess(m);
    for (uint8_t v : out.data) CHECK(v == 0);
}

TEST_CASE("adaptive output equals one of open/close") {
    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        MaskRaster m = random_mask(32, 32, rng, rng.uniform(0.2, 0.8));
        MaskRaster out = adaptive_postprocess(m);
        const auto se = StructuringElement::box(3);
        const bool is_open = out.data == morph(m, MorphOp::Open, se).data;
        const bool is_close = out.data == morph(m, MorphOp::Close, se).data;
        REQUIRE((is_open || is_close));
        if (cloud_fraction(m) > 0.5)
            REQUIRE(is_close);
        else
            REQUIRE(is_open);
    }
}

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cloudkd/raster.hpp"

using namespace cloudkd;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    static fs::path dir = [] {
        fs::path p = fs::temp_directory_path() / "cloudkd_raster_tests";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

BandStack make_stack(uint32_t h, uint32_t w, std::vector<std::string> bands,
                     Rng* rng = nullptr, float fill = 0.f) {
    BandStack s;
    s.height = h;
    s.width = w;
    s.bands = std::move(bands);
    s.data.assign(s.bands.size(), std::vector<float>(s.plane_size(), fill));
    if (rng)
        for (auto& plane : s.data)
            for (float& v : plane) v = static_cast<float>(rng->uniform(-10.0, 10.0));
    return s;
}

} // namespace

TEST_CASE("band stack round trip is identity") {
    Rng rng(1);
    BandStack s = make_stack(2, 2, {"B02", "B03", "B04", "B08"}, &rng);
    const fs::path p = temp_dir() / "tiny.cbsk";
    save_band_stack(s, p);
    BandStack r = load_band_stack(p);
    CHECK(r.height == 2);
    CHECK(r.width == 2);
    CHECK(r.bands == s.bands);
    CHECK(r.data == s.data);
    CHECK_FALSE(r.normalized);
}

TEST_CASE("wrong magic bytes raise a format error") {
    const fs::path p = temp_dir() / "bad_magic.cbsk";
    std::ofstream os(p, std::ios::binary);
    os << "NOPE some trailing payload";
    os.close();
    try {
        load_band_stack(p);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.issue() == FormatIssue::BadMagic);
    }
}

TEST_CASE("OCN-shaped stack loads with the four challenge bands") {
    Rng rng(2);
    BandStack s = make_stack(512, 512, {"B02", "B03", "B04", "B08"}, &rng);
    const fs::path p = temp_dir() / "ocn.cbsk";
    save_band_stack(s, p);
    BandStack r = load_band_stack(p);
    CHECK(r.height == 512);
    CHECK(r.width == 512);
    CHECK(r.bands == std::vector<std::string>{"B02", "B03", "B04", "B08"});
    CHECK(r.data == s.data);
}

TEST_CASE("truncated payload raises a distinct format error") {
    Rng rng(3);
    BandStack s = make_stack(8, 8, {"B02", "B03"}, &rng);
    const fs::path full = temp_dir() / "full.cbsk";
    save_band_stack(s, full);
    const fs::path cut = temp_dir() / "cut.cbsk";
    {
        std::ifstream is(full, std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(is)),
                                std::istreambuf_iterator<char>());
        std::ofstream os(cut, std::ios::binary);
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 13));
    }
    try {
        load_band_stack(cut);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.issue() == FormatIssue::Truncated);
    }
}

TEST_CASE("payload longer than the header implies is a dimension mismatch") {
    Rng rng(4);
    BandStack s = make_stack(4, 4, {"B02"}, &rng);
    const fs::path p = temp_dir() / "long.cbsk";
    save_band_stack(s, p);
    {
        std::ofstream os(p, std::ios::binary | std::ios::app);
        const uint32_t junk = 42;
        os.write(reinterpret_cast<const char*>(&junk), 4);
    }
    try {
        load_band_stack(p);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.issue() == FormatIssue::DimensionMismatch);
    }
}

TEST_CASE("container round trip is bit-exact for all dtypes and shapes") {
    Rng rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        const uint32_t h = 1 + static_cast<uint32_t>(rng.below(40));
        const uint32_t w = 1 + static_cast<uint32_t>(rng.below(40));
        const int nbands = 1 + static_cast<int>(rng.below(5));
        std::vector<std::string> bands;
        for (int b = 0; b < nbands; ++b) bands.push_back("BX" + std::to_string(b));
        BandStack s = make_stack(h, w, bands);
        const DType dtype = static_cast<DType>(rng.below(3));
        for (auto& plane : s.data)
            for (float& v : plane) {
                switch (dtype) {
                case DType::F32:
                    v = static_cast<float>(rng.uniform(-1e4, 1e4));
                    break;
                case DType::U16:
                    v = static_cast<float>(rng.below(65536));
                    break;
                case DType::U8:
                    v = static_cast<float>(rng.below(256));
                    break;
                }
            }
        const fs::path p = temp_dir() / ("prop_" + std::to_string(trial) + ".cbsk");
        save_band_stack(s, p, dtype);
        BandStack r = load_band_stack(p);
        REQUIRE(r.data == s.data);
        CHECK(peek_band_stack_dtype(p) == dtype);

        // Saving the loaded stack again in the same dtype reproduces the file
        // byte for byte.
        const fs::path p2 = temp_dir() / ("prop2_" + std::to_string(trial) + ".cbsk");
        save_band_stack(r, p2, dtype);
        std::ifstream f1(p, std::ios::binary), f2(p2, std::ios::binary);
        std::vector<char> b1((std::istreambuf_iterator<char>(f1)), {});
        std::vector<char> b2((std::istreambuf_iterator<char>(f2)), {});
        REQUIRE(b1 == b2);
    }
}

TEST_CASE("mask container round trip and validation") {
    MaskRaster m;
    m.height = 5;
    m.width = 7;
    m.classes = 6;
    m.scheme = MaskScheme::KzSix;
    m.data.resize(m.size());
    Rng rng(6);
    for (auto& v : m.data) v = static_cast<uint8_t>(rng.below(6));
    const fs::path p = temp_dir() / "mask.cmsk";
    save_mask(m, p);
    MaskRaster r = load_mask(p);
    CHECK(r.height == m.height);
    CHECK(r.width == m.width);
    CHECK(r.classes == 6);
    CHECK(r.scheme == MaskScheme::KzSix);
    CHECK(r.data == m.data);

    SUBCASE("pixel out of class range fails validation") {
        m.classes = 2;
        m.data[3] = 5;
        CHECK_THROWS_AS(save_mask(m, temp_dir() / "bad.cmsk"), DataError);
    }
    SUBCASE("mask magic is distinct from stack magic") {
        CHECK_THROWS_AS(load_band_stack(p), FormatError);
    }
}

TEST_CASE("norm stats: constant band") {
    BandStack s = make_stack(3, 3, {"B02"}, nullptr, 5.0f);
    NormStats stats = compute_norm_stats({&s});
    CHECK(stats.mean[0] == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(stats.stddev[0] == doctest::Approx(0.0));
}

TEST_CASE("norm stats: {0,2} equally frequent gives mean 1, population std 1") {
    BandStack s = make_stack(2, 2, {"B02"});
    s.data[0] = {0.f, 2.f, 0.f, 2.f};
    NormStats stats = compute_norm_stats({&s});
    CHECK(stats.mean[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(stats.stddev[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("norm stats over several stacks match the pooled-pixel oracle") {
    Rng rng(7);
    std::vector<BandStack> stacks;
    stacks.push_back(make_stack(4, 6, {"B02", "B03"}, &rng));
    stacks.push_back(make_stack(9, 2, {"B02", "B03"}, &rng));
    stacks.push_back(make_stack(3, 3, {"B02", "B03"}, &rng));
    NormStats stats = compute_norm_stats(stacks);

    for (size_t b = 0; b < 2; ++b) {
        // Brute force: pool every pixel, then direct mean/population std.
        std::vector<double> pool;
        for (const auto& s : stacks)
            for (float v : s.data[b]) pool.push_back(v);
        double mean = 0.0;
        for (double v : pool) mean += v;
        mean /= static_cast<double>(pool.size());
        double var = 0.0;
        for (double v : pool) var += (v - mean) * (v - mean);
        var /= static_cast<double>(pool.size());
        CHECK(stats.mean[b] == doctest::Approx(mean).epsilon(1e-12));
        CHECK(stats.stddev[b] == doctest::Approx(std::sqrt(var)).epsilon(1e-12));
    }
}

TEST_CASE("norm stats input validation") {
    CHECK_THROWS_AS(compute_norm_stats(std::vector<const BandStack*>{}), DataError);
    BandStack a = make_stack(2, 2, {"B02"});
    BandStack b = make_stack(2, 2, {"B03"});
    CHECK_THROWS_AS(compute_norm_stats(std::vector<const BandStack*>{&a, &b}), DataError);
}

TEST_CASE("normalize maps a constant band to zeros") {
    BandStack s = make_stack(4, 4, {"B02"}, nullptr, 3.5f);
    NormStats stats = compute_norm_stats({&s});
    BandStack n = normalize(s, stats);
    CHECK(n.normalized);
    for (float v : n.data[0]) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("normalize on {0,2} with mean 1, std 1 gives -1 and +1") {
    BandStack s = make_stack(2, 2, {"B02"});
    s.data[0] = {0.f, 2.f, 0.f, 2.f};
    NormStats stats;
    stats.bands = {"B02"};
    stats.mean = {1.0};
    stats.stddev = {1.0};
    BandStack n = normalize(s, stats);
    CHECK(n.data[0][0] == doctest::Approx(-1.0).epsilon(1e-5));
    CHECK(n.data[0][1] == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("normalize then denormalize is identity within 1e-5") {
    Rng rng(8);
    BandStack s = make_stack(16, 16, {"B02", "B03", "B04"}, &rng);
    NormStats stats = compute_norm_stats({&s});
    BandStack round = denormalize(normalize(s, stats), stats);
    for (size_t b = 0; b < s.bands.size(); ++b)
        for (size_t i = 0; i < s.plane_size(); ++i)
            CHECK(round.data[b][i] == doctest::Approx(s.data[b][i]).epsilon(1e-5));
}

TEST_CASE("double normalization and band mismatch are rejected") {
    BandStack s = make_stack(2, 2, {"B02"}, nullptr, 1.f);
    NormStats stats = compute_norm_stats({&s});
    BandStack n = normalize(s, stats);
    CHECK_THROWS_AS(normalize(n, stats), DataError);
    NormStats other = stats;
    other.bands = {"B08"};
    CHECK_THROWS_AS(normalize(s, other), DataError);
    CHECK_THROWS_AS(denormalize(s, stats), DataError); // not normalized yet
}

TEST_CASE("norm stats file round trip is bit-exact") {
    NormStats stats;
    stats.bands = {"B02", "B08"};
    stats.mean = {0.1234567890123456, -17.25};
    stats.stddev = {1e-9, 1234.5};
    const fs::path p = temp_dir() / "norm_stats.txt";
    save_norm_stats(stats, p);
    NormStats r = load_norm_stats(p);
    CHECK(r.bands == stats.bands);
    CHECK(r.mean == stats.mean);
    CHECK(r.stddev == stats.stddev);
    const fs::path p2 = temp_dir() / "norm_stats2.txt";
    save_norm_stats(r, p2);
    std::ifstream f1(p), f2(p2);
    std::string s1((std::istreambuf_iterator<char>(f1)), {});
    std::string s2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(s1 == s2);
}

// ---------------------------------------------------------------------------
// Tiling
// ---------------------------------------------------------------------------

TEST_CASE("exact-fit raster produces a single placement at the origin") {
    TileLayout layout = plan_tiles(384, 384, 384, 384);
    REQUIRE(layout.placements.size() == 1);
    CHECK(layout.placements[0].row == 0);
    CHECK(layout.placements[0].col == 0);
    CHECK(layout.pad_bottom() == 0);
    CHECK(layout.pad_right() == 0);
}

TEST_CASE("512x512 with patch 384 stride 384 clamps to four placements") {
    TileLayout layout = plan_tiles(512, 512, 384, 384);
    REQUIRE(layout.placements.size() == 4);
    // Layout arithmetic oracle: offsets {0, 512-384} = {0, 128} per axis.
    std::vector<std::pair<uint32_t, uint32_t>> got;
    for (const auto& p : layout.placements) got.emplace_back(p.row, p.col);
    std::vector<std::pair<uint32_t, uint32_t>> expect = {
        {0, 0}, {0, 128}, {128, 0}, {128, 128}};
    CHECK(got == expect);
}

TEST_CASE("small rasters are reflect-padded up to the patch size") {
    TileLayout layout = plan_tiles(100, 100, 128, 128);
    CHECK(layout.padded_height == 128);
    CHECK(layout.padded_width == 128);
    REQUIRE(layout.placements.size() == 1);
    CHECK(layout.placements[0].row == 0);

    BandStack s;
    s.height = 100;
    s.width = 100;
    s.bands = {"B02"};
    s.data.assign(1, std::vector<float>(100 * 100));
    for (uint32_t y = 0; y < 100; ++y)
        for (uint32_t x = 0; x < 100; ++x)
            s.data[0][y * 100 + x] = static_cast<float>(y * 1000 + x);
    auto tiles = extract_tiles(s, layout);
    REQUIRE(tiles.size() == 1);
    // Reflection rule: index 100 mirrors to 98, 101 to 97, ...
    CHECK(tiles[0].data[0][0] == s.data[0][0]);
    CHECK(tiles[0].data[0][100] == s.data[0][98]);
    CHECK(tiles[0].data[0][127] == s.data[0][71]);
    CHECK(tiles[0].data[0][static_cast<size_t>(100) * 128] == s.data[0][98 * 100]);
}

TEST_CASE("tile preconditions") {
    CHECK_THROWS_AS(plan_tiles(64, 64, 64, 0), std::invalid_argument);
    CHECK_THROWS_AS(plan_tiles(64, 64, 15, 8), std::invalid_argument);
    CHECK_THROWS_AS(plan_tiles(64, 64, 24, 8), std::invalid_argument);
    CHECK_THROWS_AS(plan_tiles(64, 64, 32, 48), std::invalid_argument);
}

TEST_CASE("every pixel is covered by at least one placement") {
    Rng rng(9);
    for (int trial = 0; trial < 40; ++trial) {
        const uint32_t h = 1 + static_cast<uint32_t>(rng.below(200));
        const uint32_t w = 1 + static_cast<uint32_t>(rng.below(200));
        const uint32_t patch = 16 * (1 + static_cast<uint32_t>(rng.below(6)));
        const uint32_t stride = 1 + static_cast<uint32_t>(rng.below(patch));
        TileLayout layout = plan_tiles(h, w, patch, stride);
        std::vector<int> covered(static_cast<size_t>(layout.padded_height) *
                                     layout.padded_width,
                                 0);
        for (const auto& p : layout.placements) {
            REQUIRE(p.row + patch <= layout.padded_height);
            REQUIRE(p.col + patch <= layout.padded_width);
            for (uint32_t y = 0; y < patch; ++y)
                for (uint32_t x = 0; x < patch; ++x)
                    ++covered[static_cast<size_t>(p.row + y) * layout.padded_width +
                              p.col + x];
        }
        for (int c : covered) REQUIRE(c >= 1);
    }
}

// ---------------------------------------------------------------------------
// Stitching
// ---------------------------------------------------------------------------

namespace {

PlaneMap plane_map_from(const BandStack& s) {
    PlaneMap pm;
    pm.channels = static_cast<uint32_t>(s.bands.size());
    pm.height = s.height;
    pm.width = s.width;
    for (const auto& plane : s.data)
        pm.data.insert(pm.data.end(), plane.begin(), plane.end());
    return pm;
}

} // namespace

TEST_CASE("single exact-fit tile stitches back to itself") {
    Rng rng(10);
    BandStack s = make_stack(64, 64, {"L0", "L1"}, &rng);
    TileLayout layout = plan_tiles(64, 64, 64, 64);
    PlaneMap out = stitch({plane_map_from(s)}, layout, 64, 64);
    CHECK(out.data == plane_map_from(s).data);
}

TEST_CASE("overlapping tiles average their logits") {
    // Two 16-wide tiles over a 16x24 raster with stride 8: columns 8..15 of
    // the raster see both tiles.
    TileLayout layout = plan_tiles(16, 24, 16, 8);
    REQUIRE(layout.placements.size() == 2);
    PlaneMap a{1, 16, 16, std::vector<float>(256, 3.f)};
    PlaneMap b{1, 16, 16, std::vector<float>(256, 5.f)};
    PlaneMap out = stitch({a, b}, layout, 16, 24);
    CHECK(out.at(0, 4, 2) == 3.f);  // tile a only
    CHECK(out.at(0, 4, 20) == 5.f); // tile b only
    CHECK(out.at(0, 4, 10) == 4.f); // overlap strip: (3+5)/2
}

TEST_CASE("stitch(tile(x)) with the identity transform reproduces x exactly") {
    Rng rng(11);
    for (auto [h, w, patch, stride] :
         {std::tuple<uint32_t, uint32_t, uint32_t, uint32_t>{64, 64, 64, 64},
          {96, 80, 32, 16},
          {50, 70, 64, 64},
          {128, 128, 48, 24}}) {
        BandStack s = make_stack(h, w, {"B02", "B03"}, &rng);
        TileLayout layout = plan_tiles(h, w, patch, stride);
        auto tiles = extract_tiles(s, layout);
        std::vector<PlaneMap> maps;
        for (const auto& t : tiles) maps.push_back(plane_map_from(t));
        PlaneMap out = stitch(maps, layout, h, w);
        REQUIRE(out.data == plane_map_from(s).data);
    }
}

TEST_CASE("stitch rejects a placement/tile count mismatch") {
    TileLayout layout = plan_tiles(64, 64, 32, 32);
    PlaneMap t{1, 32, 32, std::vector<float>(1024, 0.f)};
    CHECK_THROWS_AS(stitch({t}, layout, 64, 64), std::invalid_argument);
}

TEST_CASE("mask tiles follow the same layout as stacks") {
    MaskRaster m;
    m.height = 40;
    m.width = 40;
    m.classes = 2;
    m.data.assign(m.size(), 0);
    m.data[0] = 1;
    TileLayout layout = plan_tiles(40, 40, 32, 32);
    auto tiles = extract_tiles(m, layout);
    REQUIRE(tiles.size() == 4);
    CHECK(tiles[0].data[0] == 1);
    CHECK(tiles[0].height == 32);
}

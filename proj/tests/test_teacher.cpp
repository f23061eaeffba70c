#include <doctest.h>

#include <filesystem>

#include "cloudkd/teacher.hpp"

using namespace cloudkd;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    static fs::path dir = [] {
        fs::path p = fs::temp_directory_path() / "cloudkd_teacher_tests";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

Tensor random_logits(Rng& rng, int k, int h, int w) {
    Tensor t(1, k, h, w);
    for (float& v : t.data) v = static_cast<float>(rng.uniform(-4.0, 4.0));
    return t;
}

SegSample sample_with_id(const std::string& id, int c, int h, int w) {
    SegSample s;
    s.id = id;
    s.input = Tensor(1, c, h, w);
    return s;
}

// Fixed-response backend for fusion tests.
class FixedTeacher : public TeacherBackend {
public:
    explicit FixedTeacher(Tensor t) : t_(std::move(t)) {}
    int num_classes() const override { return t_.c; }
    Tensor logits(const SegSample&) const override { return t_; }

private:
    Tensor t_;
};

} // namespace

TEST_CASE("logit container round trip preserves values and band names") {
    Rng rng(51);
    Tensor t = random_logits(rng, 3, 8, 8);
    const fs::path p = temp_dir() / "lmap.cbsk";
    save_logit_map(t, p);
    Tensor r = load_logit_map(p);
    CHECK(r.c == 3);
    CHECK(r.data == t.data);

    BandStack raw = load_band_stack(p);
    CHECK(raw.bands == std::vector<std::string>{"LGT0", "LGT1", "LGT2"});

    // A plain band stack is rejected as a logit container.
    BandStack other = raw;
    other.bands = {"B02", "B03", "B04"};
    save_band_stack(other, temp_dir() / "notlogit.cbsk");
    CHECK_THROWS_AS(load_logit_map(temp_dir() / "notlogit.cbsk"), FormatError);
}

TEST_CASE("precomputed backend returns stored logits bit-exactly") {
    Rng rng(52);
    const fs::path dir = temp_dir() / "precomp";
    fs::create_directories(dir);
    Tensor a = random_logits(rng, 2, 16, 16);
    Tensor b = random_logits(rng, 2, 16, 16);
    save_logit_map(a, dir / "p0.cbsk");
    save_logit_map(b, dir / "p1.cbsk");
    {
        std::ofstream manifest(dir / "manifest.txt");
        manifest << "p0\np1\n";
    }
    PrecomputedTeacher teacher(dir);
    CHECK(teacher.patch_count() == 2);
    CHECK(teacher.num_classes() == 2);
    CHECK(teacher_logits(teacher, sample_with_id("p0", 4, 16, 16)).data == a.data);
    CHECK(teacher_logits(teacher, sample_with_id("p1", 4, 16, 16)).data == b.data);

    SUBCASE("unknown patch id is a lookup error") {
        CHECK_THROWS_AS(teacher.logits(sample_with_id("p7", 4, 16, 16)), DataError);
    }
    SUBCASE("stored shape must match the patch") {
        CHECK_THROWS_AS(teacher.logits(sample_with_id("p0", 4, 32, 32)), DataError);
    }
}

TEST_CASE("live backend equals eval-mode forward of the wrapped model") {
    ArchitectureSpec spec;
    spec.in_channels = 4;
    spec.num_classes = 2;
    spec.encoder_widths = {4, 8};
    spec.bottleneck_width = 8;
    UNet model = UNet::build(spec, 53);
    Rng rng(54);
    SegSample s = sample_with_id("x", 4, 16, 16);
    for (float& v : s.input.data) v = static_cast<float>(rng.normal());

    Tensor expect = model.forward(s.input, Mode::Eval);
    LiveTeacher teacher(std::move(model));
    Tensor got = teacher.logits(s);
    CHECK(got.data == expect.data);
}

TEST_CASE("single-member ensemble is the identity") {
    Rng rng(55);
    Tensor t = random_logits(rng, 2, 8, 8);
    std::vector<std::unique_ptr<TeacherBackend>> members;
    members.push_back(std::make_unique<FixedTeacher>(t));
    EnsembleTeacher ensemble(std::move(members));
    SegSample s = sample_with_id("x", 4, 8, 8);
    CHECK(ensemble_logits(ensemble, s).data == t.data);
}

TEST_CASE("identical members leave the logits unchanged") {
    Rng rng(56);
    Tensor t = random_logits(rng, 2, 8, 8);
    std::vector<std::unique_ptr<TeacherBackend>> members;
    members.push_back(std::make_unique<FixedTeacher>(t));
    members.push_back(std::make_unique<FixedTeacher>(t));
    EnsembleTeacher ensemble(std::move(members));
    Tensor fused = ensemble.logits(sample_with_id("x", 4, 8, 8));
    for (size_t i = 0; i < fused.size(); ++i)
        CHECK(fused.data[i] == doctest::Approx(t.data[i]).epsilon(1e-7));
}

TEST_CASE("two members fuse to the element-wise arithmetic mean") {
    Tensor a(1, 2, 1, 1), b(1, 2, 1, 1);
    a.data = {0.f, 1.f};
    b.data = {2.f, 3.f};
    std::vector<std::unique_ptr<TeacherBackend>> members;
    members.push_back(std::make_unique<FixedTeacher>(a));
    members.push_back(std::make_unique<FixedTeacher>(b));
    EnsembleTeacher ensemble(std::move(members));
    Tensor fused = ensemble.logits(sample_with_id("x", 4, 1, 1));
    CHECK(fused.data[0] == doctest::Approx(1.f));
    CHECK(fused.data[1] == doctest::Approx(2.f));
}

TEST_CASE("mean fusion is permutation-invariant") {
    Rng rng(57);
    Tensor a = random_logits(rng, 3, 4, 4);
    Tensor b = random_logits(rng, 3, 4, 4);
    Tensor c = random_logits(rng, 3, 4, 4);
    auto fuse = [&](std::vector<const Tensor*> order) {
        std::vector<std::unique_ptr<TeacherBackend>> members;
        for (const Tensor* t : order) members.push_back(std::make_unique<FixedTeacher>(*t));
        EnsembleTeacher ensemble(std::move(members));
        return ensemble.logits(sample_with_id("x", 4, 4, 4));
    };
    Tensor abc = fuse({&a, &b, &c});
    Tensor cab = fuse({&c, &a, &b});
    for (size_t i = 0; i < abc.size(); ++i)
        CHECK(abc.data[i] == doctest::Approx(cab.data[i]).epsilon(1e-6));
}

TEST_CASE("mean fusion commutes with a constant logit offset") {
    Rng rng(58);
    Tensor a = random_logits(rng, 2, 4, 4);
    Tensor b = random_logits(rng, 2, 4, 4);
    const float shift = 1.75f;
    Tensor as = a, bs = b;
    for (float& v : as.data) v += shift;
    for (float& v : bs.data) v += shift;
    auto fuse = [&](const Tensor& x, const Tensor& y) {
        std::vector<std::unique_ptr<TeacherBackend>> members;
        members.push_back(std::make_unique<FixedTeacher>(x));
        members.push_back(std::make_unique<FixedTeacher>(y));
        EnsembleTeacher ensemble(std::move(members));
        return ensemble.logits(sample_with_id("x", 4, 4, 4));
    };
    Tensor base = fuse(a, b);
    Tensor shifted = fuse(as, bs);
    for (size_t i = 0; i < base.size(); ++i)
        CHECK(shifted.data[i] == doctest::Approx(base.data[i] + shift).epsilon(1e-5));
}

TEST_CASE("probability-space fusion preserves the argmax of agreeing members") {
    Rng rng(59);
    Tensor a = random_logits(rng, 2, 4, 4);
    std::vector<std::unique_ptr<TeacherBackend>> members;
    members.push_back(std::make_unique<FixedTeacher>(a));
    members.push_back(std::make_unique<FixedTeacher>(a));
    EnsembleTeacher ensemble(std::move(members), true);
    Tensor fused = ensemble.logits(sample_with_id("x", 4, 4, 4));
    const size_t plane = 16;
    for (size_t p = 0; p < plane; ++p) {
        const bool want = a.data[p] > a.data[plane + p];
        const bool got = fused.data[p] > fused.data[plane + p];
        CHECK(want == got);
    }
}

TEST_CASE("empty ensembles and class mismatches are rejected") {
    CHECK_THROWS_AS(EnsembleTeacher({}), std::invalid_argument);
    Rng rng(60);
    std::vector<std::unique_ptr<TeacherBackend>> members;
    members.push_back(std::make_unique<FixedTeacher>(random_logits(rng, 2, 4, 4)));
    members.push_back(std::make_unique<FixedTeacher>(random_logits(rng, 3, 4, 4)));
    CHECK_THROWS_AS(EnsembleTeacher(std::move(members)), std::invalid_argument);
}

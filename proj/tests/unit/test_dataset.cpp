#include <algorithm>
#include <random>
#include <set>

#include "brainseg/dataset.hpp"
#include "brainseg/fsutil.hpp"
#include "brainseg/png_io.hpp"
#include "phantoms.hpp"
#include "test_util.hpp"

using namespace brainseg;
namespace fs = std::filesystem;

namespace {

Grid3<float> random_grid(const Shape3& shape, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Grid3<float> g(shape);
    for (float& v : g.values()) v = static_cast<float>(rng() % 100000) / 97.0f;
    return g;
}

std::vector<std::string> ids(std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back("IXI" + std::to_string(1000 + i));
    return out;
}

} // namespace

TEST_CASE("slice counts per plane") {
    const Shape3 s{4, 5, 6};
    CHECK(slice_count(s, Plane::Axial) == 6);
    CHECK(slice_count(s, Plane::Coronal) == 5);
    CHECK(slice_count(s, Plane::Sagittal) == 4);
    const Grid3<float> g = random_grid(s, 1);
    CHECK(extract_slices(g, Plane::Axial).size() == 6);
    CHECK(extract_slices(g, Plane::Coronal).size() == 5);
    CHECK(extract_slices(g, Plane::Sagittal).size() == 4);
}

TEST_CASE("slices equal element copies and restack exactly") {
    const Grid3<float> g = random_grid({7, 8, 9}, 2);
    for (std::size_t k = 0; k < 9; ++k) {
        const Image<float> s = extract_slice(g, Plane::Axial, k);
        REQUIRE(s.width() == 7);
        REQUIRE(s.height() == 8);
        for (std::size_t y = 0; y < 8; ++y)
            for (std::size_t x = 0; x < 7; ++x) CHECK(s.at(x, y) == g.at(x, y, k));
    }
    const Image<float> c = extract_slice(g, Plane::Coronal, 3);
    CHECK(c.at(2, 5) == g.at(2, 3, 5));
    const Image<float> sg = extract_slice(g, Plane::Sagittal, 4);
    CHECK(sg.at(6, 1) == g.at(4, 6, 1));
    for (Plane p : kAllPlanes) CHECK(restack_slices(extract_slices(g, p), p) == g);
    CHECK_ERROR_CODE(extract_slice(g, Plane::Axial, 9), ErrorCode::OutOfRange);
}

TEST_CASE("resize contracts") {
    Image<float> big(256, 256);
    std::mt19937_64 rng(3);
    for (float& v : big.values()) v = static_cast<float>(rng() % 1000);
    CHECK(resize_to_grid(big, 256) == big);

    const Image<float> constant(13, 29, 4.25f);
    for (float v : resize_to_grid(constant, 256).values()) CHECK(v == doctest::Approx(4.25f));

    // Half-pixel-centred bilinear on a 2x2 checkerboard, evaluated by hand.
    const Image<float> checker(2, 2, std::vector<float>{0, 1, 1, 0});
    const Image<float> up = resize_to_grid(checker, 4);
    REQUIRE(up.width() == 4);
    const float expected[4][4] = {{0.0f, 0.25f, 0.75f, 1.0f},
                                  {0.25f, 0.375f, 0.625f, 0.75f},
                                  {0.75f, 0.625f, 0.375f, 0.25f},
                                  {1.0f, 0.75f, 0.25f, 0.0f}};
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x) CHECK(up.at(x, y) == doctest::Approx(expected[y][x]));
    for (std::size_t y = 1; y < 3; ++y)
        for (std::size_t x = 1; x < 3; ++x) {
            CHECK(up.at(x, y) > 0.0f);
            CHECK(up.at(x, y) < 1.0f);
        }
}

TEST_CASE("fuse_mask rule") {
    auto one = [](float g, float w) {
        return fuse_mask(Image<float>(1, 1, g), Image<float>(1, 1, w), 0.5)[0];
    };
    CHECK(one(0.6f, 0.3f) == 1);
    CHECK(one(0.5f, 0.5f) == 0);
    CHECK(one(0.6f, 0.7f) == 2);
    CHECK(one(0.2f, 0.51f) == 2);
    CHECK(one(0.0f, 0.0f) == 0);
    CHECK_ERROR_CODE(fuse_mask(Image<float>(2, 2), Image<float>(2, 3), 0.5), ErrorCode::ShapeMismatch);
}

TEST_CASE("informative slice boundary") {
    LabelMask m(256, 256, 0);
    CHECK_FALSE(is_informative(m, 0.01));
    for (std::size_t i = 0; i < 655; ++i) m[i] = 1;
    CHECK_FALSE(is_informative(m, 0.01)); // 655/65536 < 0.01
    m[655] = 2;
    CHECK(is_informative(m, 0.01)); // 656/65536 >= 0.01
    CHECK(is_informative(LabelMask(256, 256, 1), 1.0));
}

TEST_CASE("normalize and quantize") {
    const Image<float> img(2, 1, std::vector<float>{10, 30});
    const Image<float> n = normalize_min_max(img);
    CHECK(n[0] == 0.0f);
    CHECK(n[1] == 1.0f);
    const Image<float> flat = normalize_min_max(Image<float>(3, 3, 5.0f));
    for (float v : flat.values()) CHECK(v == 0.0f);
    const auto q = to_u8(n);
    CHECK(q[0] == 0);
    CHECK(q[1] == 255);
}

TEST_CASE("subject split sizes and determinism") {
    const SubjectSplit s = split_subjects(ids(581), {0.70, 0.15, 0.15}, 42);
    CHECK(s.train.size() == 406);
    CHECK(s.val.size() == 87);
    CHECK(s.test.size() == 88);
    std::set<std::string> all(s.train.begin(), s.train.end());
    all.insert(s.val.begin(), s.val.end());
    all.insert(s.test.begin(), s.test.end());
    CHECK(all.size() == 581);

    auto shuffled = ids(581);
    std::reverse(shuffled.begin(), shuffled.end());
    const SubjectSplit again = split_subjects(shuffled, {0.70, 0.15, 0.15}, 42);
    CHECK(again.train == s.train);
    CHECK(again.val == s.val);
    CHECK(again.test == s.test);
    CHECK(split_subjects(ids(581), {0.70, 0.15, 0.15}, 43).train != s.train);

    const SubjectSplit empty = split_subjects({}, {0.70, 0.15, 0.15}, 1);
    CHECK(empty.train.empty());
    CHECK(empty.val.empty());
    CHECK(empty.test.empty());

    CHECK_ERROR_CODE(split_subjects({"a", "b", "a"}, {0.7, 0.15, 0.15}, 0), ErrorCode::DuplicateIds);
    CHECK_ERROR_CODE(split_subjects(ids(3), {0.7, 0.2, 0.2}, 0), ErrorCode::InvalidArgument);
}

TEST_CASE("manifest round trip") {
    TempDir dir;
    DatasetManifest m;
    m.root = dir.path();
    m.split = Split::Val;
    m.seed = 9;
    m.build_config_hash = "abc";
    m.entries.push_back({"val/axial/s_3.png", "val/axial/s_3_label.png", "s", Plane::Axial, 3});
    const fs::path p = manifest_path(dir.path(), Plane::Axial, Split::Val);
    write_manifest(p, m);
    const DatasetManifest back = read_manifest(p, dir.path());
    CHECK(back.entries == m.entries);
    CHECK(back.split == Split::Val);
    CHECK(back.seed == 9);
    CHECK(back.build_config_hash == "abc");
}

TEST_CASE("build_dataset entry count equals an informative-slice recount") {
    TempDir dir;
    std::vector<SubjectData> subjects;
    for (int i = 0; i < 3; ++i) subjects.push_back(testing::phantom_subject({20, 24, 16}, "sub" + std::to_string(i), 10 + i));
    BuildConfig cfg;
    cfg.target_resolution = 256;
    const SubjectSplit splits{{"sub0", "sub1"}, {"sub2"}, {}};
    const auto manifests = build_dataset(subjects, cfg, splits, dir.path(), 5);

    for (Plane p : kAllPlanes) {
        std::size_t expected_train = 0, expected_val = 0;
        for (const SubjectData& s : subjects) {
            const auto gm = extract_slices(s.maps.gm(), p);
            const auto wm = extract_slices(s.maps.wm(), p);
            std::size_t count = 0;
            for (std::size_t k = 0; k < gm.size(); ++k) {
                const Image<float> g = resize_to_grid(gm[k], 256), w = resize_to_grid(wm[k], 256);
                std::size_t tissue = 0;
                for (std::size_t i = 0; i < g.size(); ++i) tissue += (g[i] > 0.5f || w[i] > 0.5f);
                count += tissue * 100 >= g.size();
            }
            (s.brain.subject_id == "sub2" ? expected_val : expected_train) += count;
        }
        CHECK(manifests.at({p, Split::Train}).entries.size() == expected_train);
        CHECK(manifests.at({p, Split::Val}).entries.size() == expected_val);
        CHECK(manifests.at({p, Split::Test}).entries.empty());
        CHECK(read_manifest(manifest_path(dir.path(), p, Split::Train), dir.path()).entries ==
              manifests.at({p, Split::Train}).entries);
    }

    const ManifestEntry& e = manifests.at({Plane::Axial, Split::Train}).entries.front();
    const auto label = png::read_gray8(dir.path() / e.label_path);
    const auto image = png::read_gray8(dir.path() / e.image_path);
    CHECK(label.width() == 256);
    CHECK(image.height() == 256);
    for (auto v : label.values()) CHECK(v <= 2);
}

TEST_CASE("all-empty subject yields empty manifests; rebuild is byte identical") {
    TempDir a, b;
    SubjectData empty{Volume3D{Grid3<float>({8, 8, 8}, 0.0f), {1, 1, 1}, "e"},
                      ProbabilityMaps(Grid3<float>({8, 8, 8}), Grid3<float>({8, 8, 8}), MapSource::ExternalFast)};
    BuildConfig cfg;
    cfg.planes = {Plane::Axial};
    const auto m = build_dataset({empty}, cfg, {{"e"}, {}, {}}, a.path(), 1);
    CHECK(m.at({Plane::Axial, Split::Train}).entries.empty());
    CHECK(fs::exists(manifest_path(a.path(), Plane::Axial, Split::Train)));

    std::vector<SubjectData> subjects{testing::phantom_subject({16, 16, 12}, "s", 1)};
    build_dataset(subjects, {}, {{"s"}, {}, {}}, a.path() / "x", 3);
    build_dataset(subjects, {}, {{"s"}, {}, {}}, b.path() / "x", 3);
    for (Plane p : kAllPlanes)
        for (Split s : kAllSplits)
            CHECK(sha256_file(manifest_path(a.path() / "x", p, s)) == sha256_file(manifest_path(b.path() / "x", p, s)));
}

TEST_CASE("build config hash tracks content") {
    BuildConfig a, b;
    CHECK(a.hash() == b.hash());
    b.threshold = 0.6;
    CHECK(a.hash() != b.hash());
    b = a;
    b.target_resolution = 0;
    CHECK_ERROR_CODE(b.validate(), ErrorCode::InvalidConfig);
}

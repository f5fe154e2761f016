// Case container round-trips, preprocessing, patch sampling, split
// protocol, and the synthetic phantom generator.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <map>
#include <set>

#include "volseg/errors.hpp"
#include "volseg/sampling.hpp"
#include "volseg/synthetic.hpp"
#include "volseg/volume.hpp"

using namespace volseg;

namespace {

std::filesystem::path temp_dir() {
    auto dir = std::filesystem::temp_directory_path() / "volseg_unit_volume_data";
    std::filesystem::create_directories(dir);
    return dir;
}

std::pair<Volume, Mask> tiny_case(std::array<int64_t, 3> shape,
                                  std::array<double, 3> spacing, uint64_t seed) {
    Rng rng(seed);
    Volume v;
    v.shape = shape;
    v.spacing = spacing;
    v.case_id = "case_" + std::to_string(seed);
    v.source_task = "unit";
    v.data.resize(static_cast<size_t>(v.numel()));
    for (auto& x : v.data) x = static_cast<float>(rng.uniform(-800.0, 200.0));
    Mask m;
    m.shape = shape;
    m.num_classes = 2;
    m.labels.resize(v.data.size());
    for (auto& l : m.labels) l = rng.uniform() < 0.2 ? 1 : 0;
    return {std::move(v), std::move(m)};
}

bool float_bits_equal(const std::vector<float>& a, const std::vector<float>& b) {
    if (a.size() != b.size()) return false;
    return std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

}  // namespace

TEST_CASE("save_case then load_case is the identity") {
    auto [v, m] = tiny_case({6, 7, 8}, {1.0, 1.0, 1.0}, 3);
    const auto path = (temp_dir() / "roundtrip.vcase").string();
    save_case(path, v, m);
    auto [v2, m2] = load_case(path);
    CHECK(v2.spacing == std::array<double, 3>{1.0, 1.0, 1.0});
    CHECK(v2.shape == v.shape);
    CHECK(v2.case_id == v.case_id);
    CHECK(v2.source_task == v.source_task);
    CHECK(float_bits_equal(v2.data, v.data));
    CHECK(m2.labels == m.labels);
    CHECK(m2.num_classes == m.num_classes);
}

TEST_CASE("load_case reads spacing exactly as written") {
    auto [v, m] = tiny_case({4, 4, 4}, {0.8, 0.7, 0.7}, 4);
    const auto path = (temp_dir() / "spacing.vcase").string();
    save_case(path, v, m);
    auto [v2, m2] = load_case(path);
    CHECK(v2.spacing == std::array<double, 3>{0.8, 0.7, 0.7});
}

TEST_CASE("mismatched mask shape is rejected") {
    auto [v, m] = tiny_case({4, 4, 4}, {1, 1, 1}, 5);
    Mask wrong = m;
    wrong.shape = {4, 4, 5};
    wrong.labels.resize(4 * 4 * 5, 0);
    CHECK_THROWS_AS(save_case((temp_dir() / "bad.vcase").string(), v, wrong), DataError);
}

TEST_CASE("unreadable or corrupt containers are rejected") {
    CHECK_THROWS_AS(load_case((temp_dir() / "does_not_exist.vcase").string()), DataError);
    const auto path = (temp_dir() / "garbage.vcase").string();
    {
        std::ofstream f(path, std::ios::binary);
        f << "this is not a case container";
    }
    CHECK_THROWS_AS(load_case(path), DataError);
}

TEST_CASE("invalid spacing is rejected") {
    auto [v, m] = tiny_case({4, 4, 4}, {1, 1, 1}, 6);
    v.spacing = {0.0, 1.0, 1.0};
    CHECK_THROWS_AS(save_case((temp_dir() / "sp.vcase").string(), v, m), DataError);
}

TEST_CASE("percentile interpolates linearly") {
    std::vector<double> vals{4.0, 1.0, 3.0, 2.0};
    CHECK(percentile(vals, 0.0) == 1.0);
    CHECK(percentile(vals, 100.0) == 4.0);
    CHECK(percentile(vals, 50.0) == doctest::Approx(2.5));
    CHECK(percentile(vals, 25.0) == doctest::Approx(1.75));
}

TEST_CASE("preprocess centers, scales and clips") {
    IntensityStats st{.p_lo = -100.0, .p_hi = 100.0, .mean = 40.0, .std = 20.0};

    Volume v;
    v.shape = {1, 1, 3};
    v.spacing = {1, 1, 1};
    v.data = {40.0f, 250.0f, -250.0f};
    Volume out = preprocess(v, st);
    CHECK(out.data[0] == doctest::Approx(0.0));                    // centering identity
    CHECK(out.data[1] == doctest::Approx((100.0 - 40.0) / 20.0));  // clipped to p_hi
    CHECK(out.data[2] == doctest::Approx((-100.0 - 40.0) / 20.0));
    CHECK(out.shape == v.shape);
    CHECK(out.spacing == v.spacing);

    st.std = 0.0;
    CHECK_THROWS_AS(preprocess(v, st), DataError);
}

TEST_CASE("self-fit statistics standardize to zero mean, unit variance") {
    auto [v, m] = tiny_case({8, 8, 8}, {1, 1, 1}, 7);
    std::fill(m.labels.begin(), m.labels.end(), 1);  // every voxel is foreground
    IntensityStats st = compute_intensity_stats({{&v, &m}});
    Volume out = preprocess(v, st);

    // Independent scalar-loop recomputation of the standardized values.
    double mean = 0.0, var = 0.0;
    std::vector<double> clipped(out.data.size());
    for (size_t i = 0; i < v.data.size(); ++i) {
        clipped[i] = std::clamp(static_cast<double>(v.data[i]), st.p_lo, st.p_hi);
        mean += clipped[i];
    }
    mean /= static_cast<double>(clipped.size());
    for (double c : clipped) var += (c - mean) * (c - mean);
    var /= static_cast<double>(clipped.size());
    const double stddev = std::sqrt(var);

    double out_mean = 0.0;
    for (size_t i = 0; i < out.data.size(); ++i) {
        CHECK(std::fabs(out.data[i] - (clipped[i] - mean) / stddev) < 1e-5);
        out_mean += out.data[i];
    }
    out_mean /= static_cast<double>(out.data.size());
    CHECK(std::fabs(out_mean) < 1e-6);
}

TEST_CASE("statistics are fitted on foreground voxels only") {
    Volume v;
    v.shape = {1, 2, 4};
    v.spacing = {1, 1, 1};
    v.data = {10, 20, 30, 40, -9000, 9000, -9000, 9000};
    Mask m;
    m.shape = v.shape;
    m.num_classes = 2;
    m.labels = {1, 1, 1, 1, 0, 0, 0, 0};
    IntensityStats st = compute_intensity_stats({{&v, &m}});
    CHECK(st.mean == doctest::Approx(25.0).epsilon(0.02));
    CHECK(st.p_hi <= 40.0);
    CHECK(st.p_lo >= 10.0);

    Mask none = m;
    std::fill(none.labels.begin(), none.labels.end(), 0);
    CHECK_THROWS_AS(compute_intensity_stats({{&v, &none}}), DataError);
}

TEST_CASE("patch of the exact volume shape is the whole volume") {
    auto [v, m] = tiny_case({5, 6, 7}, {1, 1, 1}, 8);
    Rng rng(1);
    Patch p = sample_patch(v, m, {5, 6, 7}, rng, 0.5);
    CHECK(p.origin == std::array<int64_t, 3>{0, 0, 0});
    CHECK(float_bits_equal(p.volume_crop, v.data));
    CHECK(p.mask_crop == m.labels);
}

TEST_CASE("foreground bias 1 pulls the crop onto the lesion") {
    Volume v;
    v.shape = {16, 16, 16};
    v.spacing = {1, 1, 1};
    v.data.assign(16 * 16 * 16, 0.0f);
    Mask m;
    m.shape = v.shape;
    m.num_classes = 2;
    m.labels.assign(v.data.size(), 0);
    m.at(5, 5, 5) = 1;

    Rng rng(9);
    Patch p = sample_patch(v, m, {4, 4, 4}, rng, 1.0);
    bool found = false;
    for (uint8_t l : p.mask_crop) found |= l > 0;
    CHECK(found);
    for (int axis = 0; axis < 3; ++axis) {
        CHECK(p.origin[axis] <= 5);
        CHECK(p.origin[axis] + 4 > 5);
    }
}

TEST_CASE("sampling is deterministic in the seed") {
    auto [v, m] = tiny_case({12, 12, 12}, {1, 1, 1}, 10);
    Rng a(42), b(42);
    Patch pa = sample_patch(v, m, {6, 6, 6}, a, 0.5);
    Patch pb = sample_patch(v, m, {6, 6, 6}, b, 0.5);
    CHECK(pa.origin == pb.origin);
    CHECK(float_bits_equal(pa.volume_crop, pb.volume_crop));
    CHECK(pa.mask_crop == pb.mask_crop);
}

TEST_CASE("undersized volumes are padded by edge replication") {
    Volume v;
    v.shape = {1, 2, 2};
    v.spacing = {1, 1, 1};
    v.data = {1.0f, 2.0f, 3.0f, 4.0f};
    Mask m;
    m.shape = v.shape;
    m.num_classes = 2;
    m.labels = {0, 1, 0, 0};

    Rng rng(3);
    Patch p = sample_patch(v, m, {2, 4, 4}, rng, 0.0);
    CHECK(p.origin[0] <= 0);
    // Every crop value must equal some source voxel value (replication
    // introduces no new intensities).
    for (float x : p.volume_crop)
        CHECK((x == 1.0f || x == 2.0f || x == 3.0f || x == 4.0f));
    // Corner (0,0,0) of the padded grid replicates source voxel (0,0,0).
    CHECK(p.volume_crop.front() == 1.0f);
}

TEST_CASE("foreground bias falls back to uniform when mask is empty") {
    auto [v, m] = tiny_case({8, 8, 8}, {1, 1, 1}, 11);
    std::fill(m.labels.begin(), m.labels.end(), 0);
    Rng rng(5);
    Patch p = sample_patch(v, m, {4, 4, 4}, rng, 1.0);
    CHECK(p.numel() == 64);
}

TEST_CASE("split protocol: 20 ids, k=5, fraction 0.2") {
    std::vector<std::string> ids;
    for (int i = 0; i < 20; ++i) ids.push_back("case" + std::to_string(i));
    SplitPlan plan = make_split(ids, 5, 123, 0.2);
    REQUIRE(plan.folds.size() == 5);

    std::set<std::string> train_union;
    for (const auto& fold : plan.folds) {
        CHECK(fold.train_ids.size() == 4);
        CHECK(fold.test_ids.size() == 16);
        std::set<std::string> tr(fold.train_ids.begin(), fold.train_ids.end());
        for (const auto& id : fold.test_ids) CHECK(tr.count(id) == 0);
        // Train blocks must be pairwise disjoint across folds.
        for (const auto& id : fold.train_ids) {
            CHECK(train_union.count(id) == 0);
            train_union.insert(id);
        }
        // Train and test together cover every id.
        std::set<std::string> all(fold.train_ids.begin(), fold.train_ids.end());
        all.insert(fold.test_ids.begin(), fold.test_ids.end());
        CHECK(all.size() == 20);
    }
    CHECK(train_union.size() == 20);
}

TEST_CASE("two ids and k=2 give the two swapped folds") {
    SplitPlan plan = make_split({"a", "b"}, 2, 77, 0.5);
    REQUIRE(plan.folds.size() == 2);
    CHECK(plan.folds[0].train_ids.size() == 1);
    CHECK(plan.folds[0].test_ids.size() == 1);
    CHECK(plan.folds[0].train_ids[0] == plan.folds[1].test_ids[0]);
    CHECK(plan.folds[1].train_ids[0] == plan.folds[0].test_ids[0]);
}

TEST_CASE("splits are deterministic and serializable") {
    std::vector<std::string> ids;
    for (int i = 0; i < 11; ++i) ids.push_back("s" + std::to_string(i));
    SplitPlan a = make_split(ids, 3, 9, 0.3);
    SplitPlan b = make_split(ids, 3, 9, 0.3);
    REQUIRE(a.folds.size() == b.folds.size());
    for (size_t i = 0; i < a.folds.size(); ++i) {
        CHECK(a.folds[i].train_ids == b.folds[i].train_ids);
        CHECK(a.folds[i].test_ids == b.folds[i].test_ids);
    }

    const auto path = (temp_dir() / "split.json").string();
    save_split(path, a);
    SplitPlan c = load_split(path);
    CHECK(c.k == a.k);
    CHECK(c.seed == a.seed);
    for (size_t i = 0; i < a.folds.size(); ++i) {
        CHECK(a.folds[i].train_ids == c.folds[i].train_ids);
        CHECK(a.folds[i].test_ids == c.folds[i].test_ids);
    }
}

TEST_CASE("split rejects bad requests") {
    CHECK_THROWS_AS(make_split({"a", "b"}, 3, 1, 0.2), ConfigError);
    CHECK_THROWS_AS(make_split({"a", "b", "c"}, 1, 1, 0.2), ConfigError);
    CHECK_THROWS_AS(make_split({"a", "a", "b"}, 2, 1, 0.3), ConfigError);
}

TEST_CASE("blob mask equals the analytic membership oracle") {
    FamilySpec fam = make_family("blob");
    fam.noise = 0.0;
    Rng rng(21);
    std::vector<Structure> structures;
    auto [v, m] = gen_synthetic_case(rng, fam, "oracle", &structures);
    REQUIRE(!structures.empty());
    for (int64_t z = 0; z < m.shape[0]; ++z)
        for (int64_t y = 0; y < m.shape[1]; ++y)
            for (int64_t x = 0; x < m.shape[2]; ++x) {
                bool inside = false;
                for (const auto& s : structures)
                    inside |= s.contains(static_cast<double>(z), static_cast<double>(y),
                                         static_cast<double>(x));
                CHECK(m.at(z, y, x) == (inside ? 1 : 0));
            }
}

TEST_CASE("every family lands in its foreground fraction window") {
    for (const char* name : {"blob", "shell", "plate"}) {
        FamilySpec fam = make_family(name);
        for (uint64_t seed = 0; seed < 6; ++seed) {
            Rng rng(100 + seed);
            auto [v, m] = gen_synthetic_case(rng, fam, "frac");
            int64_t fg = 0;
            for (uint8_t l : m.labels) fg += l > 0;
            const double frac = static_cast<double>(fg) / static_cast<double>(m.numel());
            INFO(name << " seed " << seed << " frac " << frac);
            CHECK(frac >= fam.fg_lo);
            CHECK(frac <= fam.fg_hi);
        }
    }
}

TEST_CASE("generation is bit-identical for a fixed seed") {
    FamilySpec fam = make_family("shell");
    Rng a(55), b(55);
    auto [va, ma] = gen_synthetic_case(a, fam, "det");
    auto [vb, mb] = gen_synthetic_case(b, fam, "det");
    CHECK(float_bits_equal(va.data, vb.data));
    CHECK(ma.labels == mb.labels);
}

TEST_CASE("families are distinguishable by surface-to-volume ratio") {
    std::map<std::string, double> mean_ratio;
    for (const char* name : {"blob", "shell", "plate"}) {
        FamilySpec fam = make_family(name);
        double acc = 0.0;
        const int reps = 8;
        for (uint64_t seed = 0; seed < reps; ++seed) {
            Rng rng(200 + seed);
            auto [v, m] = gen_synthetic_case(rng, fam, "sa");
            acc += surface_to_volume(m);
        }
        mean_ratio[name] = acc / reps;
    }
    INFO("blob " << mean_ratio["blob"] << " shell " << mean_ratio["shell"]
                 << " plate " << mean_ratio["plate"]);
    // Hollow shells expose the most surface per voxel, solid blobs the least.
    CHECK(mean_ratio["shell"] > mean_ratio["plate"]);
    CHECK(mean_ratio["plate"] > mean_ratio["blob"]);
    CHECK(mean_ratio["shell"] - mean_ratio["blob"] >= 0.3);
    CHECK(mean_ratio["shell"] - mean_ratio["plate"] >= 0.1);
    CHECK(mean_ratio["plate"] - mean_ratio["blob"] >= 0.1);
}

TEST_CASE("unknown family name is rejected") {
    CHECK_THROWS_AS(make_family("nodule"), ConfigError);
}

#include "volseg/sampling.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <set>

#include "volseg/errors.hpp"

namespace volseg {

Patch sample_patch(const Volume& v, const Mask& m, std::array<int64_t, 3> size,
                   Rng& rng, double fg_bias) {
    check_aligned(v, m);
    for (int64_t s : size)
        if (s < 1) throw ConfigError("sample_patch: patch size components must be >= 1");

    // Pick the intended center voxel.
    std::array<int64_t, 3> center{};
    bool want_fg = rng.uniform() < fg_bias;
    if (want_fg) {
        int64_t n_fg = 0;
        for (uint8_t l : m.labels) n_fg += l > 0;
        if (n_fg == 0) {
            want_fg = false;
        } else {
            int64_t pick = rng.uniform_index(n_fg);
            int64_t flat = -1;
            for (int64_t i = 0; i < m.numel(); ++i) {
                if (m.labels[i] > 0 && pick-- == 0) {
                    flat = i;
                    break;
                }
            }
            center[2] = flat % v.shape[2];
            center[1] = (flat / v.shape[2]) % v.shape[1];
            center[0] = flat / (v.shape[2] * v.shape[1]);
        }
    }
    if (!want_fg)
        for (int axis = 0; axis < 3; ++axis)
            center[axis] = rng.uniform_index(v.shape[axis]);

    Patch p;
    p.size = size;
    for (int axis = 0; axis < 3; ++axis) {
        // For oversized patches the window straddles the volume and origin
        // goes negative; clamping keeps the source maximally covered.
        const int64_t lo = std::min<int64_t>(0, v.shape[axis] - size[axis]);
        const int64_t hi = std::max<int64_t>(0, v.shape[axis] - size[axis]);
        p.origin[axis] = std::clamp(center[axis] - size[axis] / 2, lo, hi);
    }

    p.volume_crop.resize(static_cast<size_t>(p.numel()));
    p.mask_crop.resize(static_cast<size_t>(p.numel()));
    int64_t w = 0;
    for (int64_t z = 0; z < size[0]; ++z) {
        const int64_t sz = std::clamp<int64_t>(p.origin[0] + z, 0, v.shape[0] - 1);
        for (int64_t y = 0; y < size[1]; ++y) {
            const int64_t sy = std::clamp<int64_t>(p.origin[1] + y, 0, v.shape[1] - 1);
            for (int64_t x = 0; x < size[2]; ++x, ++w) {
                const int64_t sx = std::clamp<int64_t>(p.origin[2] + x, 0, v.shape[2] - 1);
                const int64_t idx = v.index(sz, sy, sx);
                p.volume_crop[w] = v.data[idx];
                p.mask_crop[w] = m.labels[idx];
            }
        }
    }
    return p;
}

SplitPlan make_split(const std::vector<std::string>& case_ids, int64_t k,
                     uint64_t seed, double train_fraction) {
    const int64_t n = static_cast<int64_t>(case_ids.size());
    if (k < 2) throw ConfigError("make_split: k must be >= 2");
    if (n < k) throw ConfigError("make_split: need at least k case ids");
    if (!(train_fraction > 0.0) || !(train_fraction < 1.0))
        throw ConfigError("make_split: train_fraction must lie in (0, 1)");
    {
        std::set<std::string> uniq(case_ids.begin(), case_ids.end());
        if (static_cast<int64_t>(uniq.size()) != n)
            throw ConfigError("make_split: duplicate case ids");
    }

    int64_t n_train = static_cast<int64_t>(
        std::ceil(static_cast<double>(n) * train_fraction));
    n_train = std::clamp<int64_t>(n_train, 1, n - 1);

    Rng rng(seed);
    std::vector<std::string> shuffled = case_ids;
    for (int64_t i = n - 1; i > 0; --i)
        std::swap(shuffled[i], shuffled[rng.uniform_index(i + 1)]);

    SplitPlan plan;
    plan.k = k;
    plan.seed = seed;
    plan.folds.resize(static_cast<size_t>(k));

    if (k * n_train == n) {
        // Consecutive train blocks tile the shuffled ids, so the k train
        // sets partition the cases; each fold tests on everything else.
        for (int64_t f = 0; f < k; ++f) {
            auto& fold = plan.folds[static_cast<size_t>(f)];
            for (int64_t i = 0; i < n; ++i) {
                if (i / n_train == f)
                    fold.train_ids.push_back(shuffled[i]);
                else
                    fold.test_ids.push_back(shuffled[i]);
            }
        }
    } else {
        for (int64_t f = 0; f < k; ++f) {
            Rng frng = rng.fork(static_cast<uint64_t>(f));
            std::vector<std::string> pool = shuffled;
            auto& fold = plan.folds[static_cast<size_t>(f)];
            for (int64_t t = 0; t < n_train; ++t) {
                const int64_t pick = frng.uniform_index(static_cast<int64_t>(pool.size()));
                fold.train_ids.push_back(pool[pick]);
                pool.erase(pool.begin() + pick);
            }
            fold.test_ids = std::move(pool);
        }
    }

    for (auto& fold : plan.folds) {
        std::sort(fold.train_ids.begin(), fold.train_ids.end());
        std::sort(fold.test_ids.begin(), fold.test_ids.end());
    }
    return plan;
}

void save_split(const std::string& path, const SplitPlan& plan) {
    nlohmann::json j;
    j["k"] = plan.k;
    j["seed"] = plan.seed;
    j["folds"] = nlohmann::json::array();
    for (const auto& fold : plan.folds)
        j["folds"].push_back({{"train", fold.train_ids}, {"test", fold.test_ids}});
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("save_split: cannot open '" + path + "'");
    f << j.dump(2) << "\n";
    if (!f) throw DataError("save_split: write failed for '" + path + "'");
}

SplitPlan load_split(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("load_split: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("load_split: bad JSON in '" + path + "': " + e.what());
    }
    SplitPlan plan;
    try {
        plan.k = j.at("k").get<int64_t>();
        plan.seed = j.at("seed").get<uint64_t>();
        for (const auto& fj : j.at("folds")) {
            SplitPlan::Fold fold;
            fold.train_ids = fj.at("train").get<std::vector<std::string>>();
            fold.test_ids = fj.at("test").get<std::vector<std::string>>();
            plan.folds.push_back(std::move(fold));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("load_split: field missing in '" + path + "': " + e.what());
    }
    if (plan.k != static_cast<int64_t>(plan.folds.size()))
        throw DataError("load_split: fold count does not match k in '" + path + "'");
    return plan;
}

}  // namespace volseg

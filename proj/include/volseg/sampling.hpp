#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "volseg/rng.hpp"
#include "volseg/volume.hpp"

namespace volseg {

/// Aligned crops plus their placement in the source grid; origin components
/// are negative when the source was smaller than the patch and edge
/// replication padded it.
struct Patch {
    std::vector<float> volume_crop;
    std::vector<uint8_t> mask_crop;
    std::array<int64_t, 3> size{0, 0, 0};
    std::array<int64_t, 3> origin{0, 0, 0};

    int64_t numel() const { return size[0] * size[1] * size[2]; }
};

/// Random crop whose center sits on a foreground voxel with probability
/// fg_bias (falling back to uniform when the mask has no foreground).
/// Out-of-range reads replicate the nearest edge voxel.
Patch sample_patch(const Volume& v, const Mask& m, std::array<int64_t, 3> size,
                   Rng& rng, double fg_bias);

/// k train/test assignments of the case ids. When k striped train blocks of
/// ceil(n * train_fraction) ids tile the id list exactly (the 20-case, k=5,
/// fraction-0.2 protocol), the train blocks partition the ids and every fold
/// tests on the complement; otherwise each fold draws its train set from an
/// independently forked stream.
struct SplitPlan {
    struct Fold {
        std::vector<std::string> train_ids;
        std::vector<std::string> test_ids;
    };
    std::vector<Fold> folds;
    int64_t k = 0;
    uint64_t seed = 0;
};

SplitPlan make_split(const std::vector<std::string>& case_ids, int64_t k,
                     uint64_t seed, double train_fraction);

void save_split(const std::string& path, const SplitPlan& plan);
SplitPlan load_split(const std::string& path);

}  // namespace volseg

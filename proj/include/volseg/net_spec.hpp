#pragma once

#include <array>
#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

#include "volseg/errors.hpp"

namespace volseg {

/// Architecture description of the encoder-decoder network. Stage i's
/// stride applies on entry to that stage, so stage i sits at the patch
/// resolution divided by the cumulative strides through stage i.
struct NetworkSpec {
    int64_t num_stages = 3;
    int64_t base_channels = 8;
    std::vector<int64_t> channels_per_stage{8, 16, 32};
    std::vector<std::array<int64_t, 3>> strides_per_stage{
        {1, 1, 1}, {1, 2, 2}, {2, 2, 2}};
    std::array<int64_t, 3> kernel_size{3, 3, 3};
    double leaky_slope = 0.01;
    int64_t num_classes = 2;

    void validate() const;

    std::array<int64_t, 3> cumulative_stride(int64_t stage) const {
        std::array<int64_t, 3> s{1, 1, 1};
        for (int64_t i = 0; i <= stage; ++i)
            for (int a = 0; a < 3; ++a) s[a] *= strides_per_stage[i][a];
        return s;
    }

    /// CPU-sized default used throughout the tests.
    static NetworkSpec desk_default();
    /// Full-size configuration matching the published training scale.
    static NetworkSpec paper_default();
};

nlohmann::json spec_to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const nlohmann::json& j);

}  // namespace volseg

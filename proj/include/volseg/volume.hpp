#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "volseg/errors.hpp"

namespace volseg {

/// 3D intensity grid on a Hounsfield-like scale, stored (z,y,x) row-major
/// with x fastest. Spacing is physical voxel size in mm per axis.
struct Volume {
    std::vector<float> data;
    std::array<int64_t, 3> shape{0, 0, 0};     // (z, y, x)
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::string case_id;
    std::string source_task;

    int64_t numel() const { return shape[0] * shape[1] * shape[2]; }
    int64_t index(int64_t z, int64_t y, int64_t x) const {
        return (z * shape[1] + y) * shape[2] + x;
    }
    float& at(int64_t z, int64_t y, int64_t x) { return data[index(z, y, x)]; }
    float at(int64_t z, int64_t y, int64_t x) const { return data[index(z, y, x)]; }
};

/// Integer label grid aligned to a Volume. Label 0 is background.
struct Mask {
    std::vector<uint8_t> labels;
    std::array<int64_t, 3> shape{0, 0, 0};
    int num_classes = 2;

    int64_t numel() const { return shape[0] * shape[1] * shape[2]; }
    int64_t index(int64_t z, int64_t y, int64_t x) const {
        return (z * shape[1] + y) * shape[2] + x;
    }
    uint8_t& at(int64_t z, int64_t y, int64_t x) { return labels[index(z, y, x)]; }
    uint8_t at(int64_t z, int64_t y, int64_t x) const { return labels[index(z, y, x)]; }
};

/// Clipping percentiles and moments of the training foreground intensity
/// distribution; fitted once, then applied read-only by preprocess().
struct IntensityStats {
    double p_lo = 0.0;
    double p_hi = 0.0;
    double mean = 0.0;
    double std = 0.0;
};

/// Throws DataError unless volume and mask describe the same grid.
void check_aligned(const Volume& v, const Mask& m);

/// Native case container: magic line, JSON header, raw little-endian float32
/// volume, raw uint8 mask. save_case then load_case is bit-exact.
void save_case(const std::string& path, const Volume& v, const Mask& m);
std::pair<Volume, Mask> load_case(const std::string& path);

/// Interpolated percentile (q in [0,100]) over an unsorted sample.
double percentile(std::vector<double> values, double q);

/// Fits clipping bounds (0.5th / 99.5th percentile) and moments over the
/// foreground voxels of the given training cases.
IntensityStats compute_intensity_stats(
    const std::vector<std::pair<const Volume*, const Mask*>>& cases,
    double q_lo = 0.5, double q_hi = 99.5);

/// (clip(x, p_lo, p_hi) - mean) / std, elementwise; shape/spacing unchanged.
Volume preprocess(const Volume& v, const IntensityStats& stats);

/// Reads a (optionally gzip'd) NIfTI-1 volume; spacing taken from pixdim.
Volume load_nifti_volume(const std::string& path, const std::string& case_id);

/// Pairs a NIfTI image with a NIfTI label map into a native case.
std::pair<Volume, Mask> import_nifti_case(const std::string& image_path,
                                          const std::string& mask_path,
                                          const std::string& case_id);

}  // namespace volseg

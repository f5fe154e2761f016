#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "volseg/volume.hpp"

namespace volseg {

/// In-slice boundary of the foreground at axial index z: foreground pixels
/// with a 4-neighbor background pixel (the slice border counts as outside).
/// Returned as (y, x) pairs in scan order.
std::vector<std::pair<int64_t, int64_t>> contour_pixels(const Mask& m, int64_t z);

/// Axial slices ordered for display: the up-to-max_slices indices with the
/// largest combined foreground across both masks (ties to the lower index),
/// re-sorted ascending. Slices without any foreground are not padded in;
/// fully background inputs fall back to slice 0 so a montage always exists.
std::vector<int64_t> pick_montage_slices(const Mask& annotation,
                                         const Mask& prediction,
                                         int64_t max_slices);

/// Writes a horizontal montage of the chosen axial slices as an RGB PNG:
/// volume intensities in gray (min/max windowed over the whole volume),
/// annotation contours green, prediction contours red, coinciding contour
/// pixels yellow. Everything about the image is a pure function of the
/// inputs, so repeated calls produce bit-identical files. Returns the
/// slice indices rendered.
std::vector<int64_t> render_montage(const std::string& png_path, const Volume& v,
                                    const Mask& annotation, const Mask& prediction,
                                    int64_t max_slices = 6);

}  // namespace volseg

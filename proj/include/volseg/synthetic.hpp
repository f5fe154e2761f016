#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "volseg/rng.hpp"
#include "volseg/volume.hpp"

namespace volseg {

/// One analytic foreground structure; membership is evaluated in voxel
/// coordinates so tests can recheck rasterization exactly.
struct Structure {
    enum Kind { kBlob = 0, kShell = 1, kPlate = 2 };
    int kind = kBlob;
    std::array<double, 3> center{0, 0, 0};  // (z, y, x)
    std::array<double, 3> radii{1, 1, 1};   // blob semi-axes / shell outer / box half-extents
    double inner = 0.0;                     // shell inner radius

    bool contains(double z, double y, double x) const;
};

/// Generator settings for one lesion family. Families differ in geometry
/// (solid ellipsoids, hollow shells, thin plates), which separates their
/// surface-area-to-volume statistics.
struct FamilySpec {
    std::string name;
    std::array<int64_t, 3> shape{28, 44, 44};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    int min_structures = 1;
    int max_structures = 3;
    double min_radius = 3.0;
    double max_radius = 7.0;
    double contrast = 500.0;         // foreground offset over background
    double background = -600.0;
    double background_wobble = 40.0; // low-frequency field amplitude
    double noise = 15.0;             // white noise sigma
    double fg_lo = 0.005;            // accepted foreground fraction window
    double fg_hi = 0.10;
};

/// Preset for a named family ("blob", "shell", "plate").
FamilySpec make_family(const std::string& name);

/// Draws structures, rescales them until the foreground fraction falls in
/// the family's window, rasterizes the mask, and paints a textured volume.
/// Bit-identical for a given (rng state, family); the structures written to
/// out_structures carry the post-rescale geometry.
std::pair<Volume, Mask> gen_synthetic_case(Rng& rng, const FamilySpec& family,
                                           const std::string& case_id,
                                           std::vector<Structure>* out_structures = nullptr);

/// Exposed-face count (6-neighborhood, grid border counts as exposed)
/// divided by foreground voxel count.
double surface_to_volume(const Mask& m);

}  // namespace volseg

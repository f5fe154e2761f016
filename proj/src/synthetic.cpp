#include "volseg/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "volseg/errors.hpp"

namespace volseg {

bool Structure::contains(double z, double y, double x) const {
    const double dz = z - center[0], dy = y - center[1], dx = x - center[2];
    switch (kind) {
        case kBlob: {
            const double q = (dz / radii[0]) * (dz / radii[0]) +
                             (dy / radii[1]) * (dy / radii[1]) +
                             (dx / radii[2]) * (dx / radii[2]);
            return q <= 1.0;
        }
        case kShell: {
            const double d2 = dz * dz + dy * dy + dx * dx;
            return d2 >= inner * inner && d2 <= radii[0] * radii[0];
        }
        case kPlate:
            return std::fabs(dz) <= radii[0] && std::fabs(dy) <= radii[1] &&
                   std::fabs(dx) <= radii[2];
    }
    return false;
}

FamilySpec make_family(const std::string& name) {
    FamilySpec f;
    f.name = name;
    if (name == "blob") {
        f.min_structures = 1;
        f.max_structures = 2;
        f.min_radius = 5.0;
        f.max_radius = 9.0;
    } else if (name == "shell") {
        f.min_structures = 1;
        f.max_structures = 2;
        f.min_radius = 5.0;
        f.max_radius = 9.0;
    } else if (name == "plate") {
        f.min_structures = 1;
        f.max_structures = 2;
        f.min_radius = 6.0;
        f.max_radius = 10.0;
    } else {
        throw ConfigError("make_family: unknown lesion family '" + name + "'");
    }
    return f;
}

namespace {

Structure scaled(const Structure& s, double scale) {
    Structure out = s;
    for (double& r : out.radii) r *= scale;
    out.inner *= scale;
    return out;
}

double foreground_fraction(const std::vector<Structure>& structures, double scale,
                           const std::array<int64_t, 3>& shape) {
    std::vector<Structure> eff;
    eff.reserve(structures.size());
    for (const auto& s : structures) eff.push_back(scaled(s, scale));
    int64_t fg = 0;
    for (int64_t z = 0; z < shape[0]; ++z)
        for (int64_t y = 0; y < shape[1]; ++y)
            for (int64_t x = 0; x < shape[2]; ++x)
                for (const auto& s : eff)
                    if (s.contains(static_cast<double>(z), static_cast<double>(y),
                                   static_cast<double>(x))) {
                        ++fg;
                        break;
                    }
    return static_cast<double>(fg) /
           static_cast<double>(shape[0] * shape[1] * shape[2]);
}

}  // namespace

std::pair<Volume, Mask> gen_synthetic_case(Rng& rng, const FamilySpec& family,
                                           const std::string& case_id,
                                           std::vector<Structure>* out_structures) {
    const auto& dims = family.shape;

    const int span = family.max_structures - family.min_structures;
    const int count =
        family.min_structures + (span > 0 ? static_cast<int>(rng.uniform_index(span + 1)) : 0);

    std::vector<Structure> structures;
    for (int i = 0; i < count; ++i) {
        Structure s;
        for (int axis = 0; axis < 3; ++axis)
            s.center[axis] = rng.uniform(0.2 * static_cast<double>(dims[axis]),
                                         0.8 * static_cast<double>(dims[axis]));
        if (family.name == "blob") {
            s.kind = Structure::kBlob;
            for (int axis = 0; axis < 3; ++axis)
                s.radii[axis] = rng.uniform(family.min_radius, family.max_radius);
        } else if (family.name == "shell") {
            s.kind = Structure::kShell;
            const double outer = rng.uniform(family.min_radius, family.max_radius);
            const double thickness = std::max(1.2, 0.22 * outer);
            s.radii = {outer, outer, outer};
            s.inner = outer - thickness;
        } else {
            s.kind = Structure::kPlate;
            const int thin_axis = static_cast<int>(rng.uniform_index(3));
            for (int axis = 0; axis < 3; ++axis)
                s.radii[axis] = axis == thin_axis
                                    ? rng.uniform(1.0, 1.6)
                                    : rng.uniform(family.min_radius, family.max_radius);
        }
        structures.push_back(s);
    }

    // Monotone rescale of all structure sizes until the foreground fraction
    // lands inside the family window (bisection; no rng draws involved).
    double scale = 1.0;
    double frac = foreground_fraction(structures, scale, dims);
    if (frac < family.fg_lo || frac > family.fg_hi) {
        double lo = 0.05, hi = 8.0;
        for (int it = 0; it < 48; ++it) {
            scale = 0.5 * (lo + hi);
            frac = foreground_fraction(structures, scale, dims);
            if (frac < family.fg_lo)
                lo = scale;
            else if (frac > family.fg_hi)
                hi = scale;
            else
                break;
        }
    }
    for (auto& s : structures) s = scaled(s, scale);
    if (out_structures) *out_structures = structures;

    Mask m;
    m.shape = dims;
    m.num_classes = 2;
    m.labels.assign(static_cast<size_t>(dims[0] * dims[1] * dims[2]), 0);
    int64_t w = 0;
    for (int64_t z = 0; z < dims[0]; ++z)
        for (int64_t y = 0; y < dims[1]; ++y)
            for (int64_t x = 0; x < dims[2]; ++x, ++w)
                for (const auto& s : structures)
                    if (s.contains(static_cast<double>(z), static_cast<double>(y),
                                   static_cast<double>(x))) {
                        m.labels[w] = 1;
                        break;
                    }

    // Background: base level plus a few low-frequency cosine ripples.
    struct Ripple {
        double amp, fz, fy, fx, phase;
    };
    std::array<Ripple, 3> ripples;
    for (auto& r : ripples) {
        r.amp = family.background_wobble * rng.uniform(0.3, 1.0);
        r.fz = rng.uniform(0.5, 1.5);
        r.fy = rng.uniform(0.5, 1.5);
        r.fx = rng.uniform(0.5, 1.5);
        r.phase = rng.uniform(0.0, 2.0 * M_PI);
    }

    Volume v;
    v.shape = dims;
    v.spacing = family.spacing;
    v.case_id = case_id;
    v.source_task = family.name;
    v.data.resize(m.labels.size());
    w = 0;
    for (int64_t z = 0; z < dims[0]; ++z)
        for (int64_t y = 0; y < dims[1]; ++y)
            for (int64_t x = 0; x < dims[2]; ++x, ++w) {
                double val = family.background;
                for (const auto& r : ripples)
                    val += r.amp * std::cos(2.0 * M_PI *
                                                (r.fz * static_cast<double>(z) / static_cast<double>(dims[0]) +
                                                 r.fy * static_cast<double>(y) / static_cast<double>(dims[1]) +
                                                 r.fx * static_cast<double>(x) / static_cast<double>(dims[2])) +
                                            r.phase);
                if (m.labels[w]) val += family.contrast;
                if (family.noise > 0.0) val += family.noise * rng.normal();
                v.data[w] = static_cast<float>(val);
            }

    return {std::move(v), std::move(m)};
}

double surface_to_volume(const Mask& m) {
    const auto& d = m.shape;
    int64_t fg = 0, faces = 0;
    for (int64_t z = 0; z < d[0]; ++z)
        for (int64_t y = 0; y < d[1]; ++y)
            for (int64_t x = 0; x < d[2]; ++x) {
                if (!m.at(z, y, x)) continue;
                ++fg;
                const int64_t nz[6] = {z - 1, z + 1, z, z, z, z};
                const int64_t ny[6] = {y, y, y - 1, y + 1, y, y};
                const int64_t nx[6] = {x, x, x, x, x - 1, x + 1};
                for (int i = 0; i < 6; ++i) {
                    if (nz[i] < 0 || nz[i] >= d[0] || ny[i] < 0 || ny[i] >= d[1] ||
                        nx[i] < 0 || nx[i] >= d[2] || !m.at(nz[i], ny[i], nx[i]))
                        ++faces;
                }
            }
    if (fg == 0) return 0.0;
    return static_cast<double>(faces) / static_cast<double>(fg);
}

}  // namespace volseg

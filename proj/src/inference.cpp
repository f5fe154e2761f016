#include "volseg/inference.hpp"

#include <algorithm>
#include <cmath>

#include "volseg/fusion.hpp"

namespace volseg {

namespace {

/// Window origins along one axis: half-patch steps, with the final window
/// pulled back so it ends exactly at the extent.
std::vector<int64_t> window_starts(int64_t extent, int64_t patch) {
    std::vector<int64_t> out;
    if (extent <= patch) {
        out.push_back(0);
        return out;
    }
    const int64_t step = std::max<int64_t>(1, patch / 2);
    for (int64_t s = 0; s + patch <= extent; s += step) out.push_back(s);
    if (out.back() + patch != extent) out.push_back(extent - patch);
    return out;
}

}  // namespace

Tensor predict_probs(const ParamStore& store, const NetworkSpec& spec,
                     ModelKind kind, const Volume& v,
                     const std::array<int64_t, 3>& patch_size) {
    spec.validate();
    for (int64_t d : patch_size)
        if (d <= 0) throw ConfigError("predict_probs: non-positive patch size");
    if (v.data.empty()) throw DataError("predict_probs: empty volume");

    // pad below-patch extents with zeros (the z-scored background level)
    const std::array<int64_t, 3> padded{std::max(v.shape[0], patch_size[0]),
                                        std::max(v.shape[1], patch_size[1]),
                                        std::max(v.shape[2], patch_size[2])};
    const bool needs_pad = padded != v.shape;
    std::vector<float> grid;
    const float* src = v.data.data();
    if (needs_pad) {
        grid.assign(static_cast<size_t>(padded[0] * padded[1] * padded[2]), 0.0f);
        for (int64_t z = 0; z < v.shape[0]; ++z)
            for (int64_t y = 0; y < v.shape[1]; ++y)
                for (int64_t x = 0; x < v.shape[2]; ++x)
                    grid[static_cast<size_t>((z * padded[1] + y) * padded[2] + x)] =
                        v.data[static_cast<size_t>((z * v.shape[1] + y) * v.shape[2] +
                                                   x)];
        src = grid.data();
    }

    const int64_t classes = spec.num_classes;
    Tensor sum({classes, padded[0], padded[1], padded[2]});
    Tensor count({padded[0], padded[1], padded[2]});

    const auto zs = window_starts(padded[0], patch_size[0]);
    const auto ys = window_starts(padded[1], patch_size[1]);
    const auto xs = window_starts(padded[2], patch_size[2]);
    const int64_t pz = patch_size[0], py = patch_size[1], px = patch_size[2];
    const int64_t pn = pz * py * px;

    for (int64_t z0 : zs)
        for (int64_t y0 : ys)
            for (int64_t x0 : xs) {
                Tensor patch({1, 1, pz, py, px});
                for (int64_t z = 0; z < pz; ++z)
                    for (int64_t y = 0; y < py; ++y)
                        for (int64_t x = 0; x < px; ++x)
                            patch[(z * py + y) * px + x] = static_cast<double>(
                                src[((z0 + z) * padded[1] + (y0 + y)) * padded[2] +
                                    (x0 + x)]);

                ad::Tape tape;
                Binder bind(tape, store);
                const ad::NodeId in = tape.constant(std::move(patch));
                const ForwardResult fwd = kind == ModelKind::kHybrid
                                              ? hybrid_forward(tape, bind, in, spec)
                                              : forward_model(tape, bind, in, spec);
                const Tensor& logits = tape.value(fwd.logits[0]);
                if (logits.shape() !=
                    std::vector<int64_t>{1, classes, pz, py, px})
                    throw DataError("predict_probs: head resolution " +
                                    logits.shape_str() +
                                    " does not cover the patch");

                // per-voxel stable softmax accumulated into the canvas
                for (int64_t i = 0; i < pn; ++i) {
                    double mx = logits[i];
                    for (int64_t c = 1; c < classes; ++c)
                        mx = std::max(mx, logits[c * pn + i]);
                    double denom = 0.0;
                    for (int64_t c = 0; c < classes; ++c)
                        denom += std::exp(logits[c * pn + i] - mx);
                    const int64_t z = i / (py * px);
                    const int64_t y = (i / px) % py;
                    const int64_t x = i % px;
                    const int64_t at =
                        ((z0 + z) * padded[1] + (y0 + y)) * padded[2] + (x0 + x);
                    for (int64_t c = 0; c < classes; ++c)
                        sum[c * padded[0] * padded[1] * padded[2] + at] +=
                            std::exp(logits[c * pn + i] - mx) / denom;
                    count[at] += 1.0;
                }
            }

    const int64_t pad_n = padded[0] * padded[1] * padded[2];
    for (int64_t c = 0; c < classes; ++c)
        for (int64_t i = 0; i < pad_n; ++i) sum[c * pad_n + i] /= count[i];

    if (!needs_pad) return sum;
    Tensor out({classes, v.shape[0], v.shape[1], v.shape[2]});
    for (int64_t c = 0; c < classes; ++c)
        for (int64_t z = 0; z < v.shape[0]; ++z)
            for (int64_t y = 0; y < v.shape[1]; ++y)
                for (int64_t x = 0; x < v.shape[2]; ++x)
                    out[((c * v.shape[0] + z) * v.shape[1] + y) * v.shape[2] + x] =
                        sum[c * pad_n + (z * padded[1] + y) * padded[2] + x];
    return out;
}

Mask argmax_labels(const Tensor& probs) {
    if (probs.rank() != 4)
        throw DataError("argmax_labels: expected [classes, z, y, x], got " +
                        probs.shape_str());
    const int64_t classes = probs.dim(0);
    const int64_t n = probs.dim(1) * probs.dim(2) * probs.dim(3);
    Mask m;
    m.shape = {probs.dim(1), probs.dim(2), probs.dim(3)};
    m.num_classes = static_cast<int>(classes);
    m.labels.assign(static_cast<size_t>(n), 0);
    for (int64_t i = 0; i < n; ++i) {
        int64_t best = 0;
        double best_p = probs[i];
        for (int64_t c = 1; c < classes; ++c)
            if (probs[c * n + i] > best_p) {
                best_p = probs[c * n + i];
                best = c;
            }
        m.labels[static_cast<size_t>(i)] = static_cast<uint8_t>(best);
    }
    return m;
}

double soft_dice(const Tensor& probs, const Mask& labels) {
    if (probs.rank() != 4)
        throw DataError("soft_dice: expected [classes, z, y, x], got " +
                        probs.shape_str());
    const int64_t classes = probs.dim(0);
    const int64_t n = probs.dim(1) * probs.dim(2) * probs.dim(3);
    if (static_cast<int64_t>(labels.labels.size()) != n)
        throw DataError("soft_dice: probability map and labels disagree in size");
    if (classes < 2) throw DataError("soft_dice: need at least one foreground class");

    const double eps = 1e-5;
    double acc = 0.0;
    for (int64_t c = 1; c < classes; ++c) {
        double inter = 0.0, psum = 0.0;
        int64_t ysum = 0;
        for (int64_t i = 0; i < n; ++i) {
            const double p = probs[c * n + i];
            psum += p;
            if (labels.labels[static_cast<size_t>(i)] == c) {
                inter += p;
                ++ysum;
            }
        }
        acc += (2.0 * inter + eps) / (psum + static_cast<double>(ysum) + eps);
    }
    return acc / static_cast<double>(classes - 1);
}

}  // namespace volseg

#pragma once

#include <array>

#include "volseg/train.hpp"
#include "volseg/volume.hpp"

namespace volseg {

/// Full-volume class probabilities via sliding-window tiling: windows step
/// by half the patch size (the trailing window shifts back so coverage is
/// complete), softmax is computed per window at the finest supervision
/// resolution, and overlapping windows are averaged uniformly. Volumes
/// smaller than the patch are zero-padded and the result cropped back, so
/// a volume exactly one patch in size reproduces the direct forward pass.
/// Returns [num_classes, z, y, x]; the volume must already be preprocessed.
Tensor predict_probs(const ParamStore& store, const NetworkSpec& spec,
                     ModelKind kind, const Volume& v,
                     const std::array<int64_t, 3>& patch_size);

/// Argmax over the class axis of a [num_classes, z, y, x] probability map;
/// ties resolve to the lowest class index.
Mask argmax_labels(const Tensor& probs);

/// Soft overlap score of a probability map against integer labels: for each
/// foreground class, (2 * sum(p * 1[y=c]) + eps) / (sum(p) + count(y=c) + eps)
/// with eps = 1e-5, averaged over foreground classes. Matches the training
/// objective's overlap term, so validation scores and the optimized loss
/// move together.
double soft_dice(const Tensor& probs, const Mask& labels);

}  // namespace volseg

#pragma once

#include <vector>

#include "volseg/autodiff.hpp"
#include "volseg/errors.hpp"

namespace volseg {

struct LossConfig {
    double dice_smooth = 1e-5;
    std::vector<double> ds_weights;      // one weight per supervision level, sums to 1
    std::vector<double> class_weights;   // optional per-class CE weights; empty = uniform
};

/// Geometrically halving weights, renormalized to sum 1 (finest level
/// heaviest): 1 level -> {1}, 2 -> {2/3, 1/3}, 3 -> {4/7, 2/7, 1/7}.
std::vector<double> make_ds_weights(int64_t levels);

/// Throws ConfigError when weights are malformed (ds_weights not summing to
/// one, non-positive smoothing, bad class weight count).
void validate_loss_config(const LossConfig& cfg, int64_t levels, int64_t num_classes);

/// Soft-Dice over foreground classes (batch-aggregated sums, smoothing in
/// numerator and denominator) plus mean cross-entropy, as one fused scalar
/// node with a hand-derived softmax-chain gradient. Targets are integer
/// labels in a [n,z,y,x] tensor. If out_dice is given it receives the mean
/// foreground soft-Dice score (not the loss).
ad::NodeId dice_ce_loss(ad::Tape& tape, ad::NodeId logits, const Tensor& target,
                        const LossConfig& cfg, double* out_dice = nullptr);

/// Nearest-neighbor label downsampling onto a coarser grid whose extents
/// divide the source extents.
Tensor downsample_labels(const Tensor& target, const std::array<int64_t, 3>& out_zyx);

/// Weighted sum of per-level dice_ce losses, each against the target
/// downsampled to that level's resolution. Pyramid is finest-first;
/// out_dice reports the finest level's score.
ad::NodeId deep_supervision_loss(ad::Tape& tape, const std::vector<ad::NodeId>& pyramid,
                                 const Tensor& target, const LossConfig& cfg,
                                 double* out_dice = nullptr);

}  // namespace volseg

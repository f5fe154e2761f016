#pragma once

#include <utility>
#include <vector>

#include "volseg/backbone.hpp"

namespace volseg {

/// Reduction ratio for the attention bottleneck: 16 when the channel count
/// allows it, otherwise a divisor that keeps at least two reduced features.
int64_t fusion_reduction_ratio(int64_t channels);

/// Appends fusion/* parameters (reduce FC with normalization affine terms,
/// and the two selection matrices) sized to the spec's deepest stage.
void fusion_defs(std::vector<ParamDef>& defs, const NetworkSpec& spec);

/// Layout of the two-branch model: dedicated/* (trainable encoder),
/// adapted/* (frozen pre-trained encoder), fusion/*, decoder/*.
std::vector<ParamDef> hybrid_model_defs(const NetworkSpec& spec);

/// Initialized hybrid store with the adapted subtree frozen. The adapted
/// values start random; transfer setup overwrites them from a checkpoint.
ParamStore init_hybrid_params(const NetworkSpec& spec, uint64_t seed);

/// Elementwise sum of the two branch features.
ad::NodeId fuse_sum(ad::Tape& tape, ad::NodeId x_de, ad::NodeId x_ad);

/// z = leaky_relu(norm(W s)): reduce the pooled channel vector, standardize
/// across the reduced features, apply affine terms, then the nonlinearity.
ad::NodeId reduce_fc(ad::Tape& tape, Binder& bind, ad::NodeId s, double leaky_slope);

/// Per-channel two-way softmax over logits Az and Bz, computed as a sigmoid
/// of the logit difference so huge magnitudes saturate instead of
/// overflowing. Returns (a, b) with a + b = 1 exactly.
std::pair<ad::NodeId, ad::NodeId> soft_select(ad::Tape& tape, Binder& bind,
                                              ad::NodeId z);

/// Convex combination a*x_de + (1-a)*x_ad, computed as
/// x_ad + a*(x_de - x_ad) so equal inputs pass through exactly.
ad::NodeId fusion_aggregate(ad::Tape& tape, ad::NodeId x_de, ad::NodeId x_ad,
                            ad::NodeId a);

/// Full unit: sum -> pool -> reduce -> select -> aggregate -> bottleneck
/// entry conv block (the decoder applies the same block, so the fused
/// features enter the decoder exactly like single-encoder features do).
ad::NodeId selective_fusion(ad::Tape& tape, Binder& bind, ad::NodeId x_de,
                            ad::NodeId x_ad, const NetworkSpec& spec);

/// Runs both encoder branches, sums per-stage skip features, aggregates the
/// bottleneck pair via the attention unit, and decodes with the shared
/// decoder. The frozen adapted subtree contributes no gradients.
ForwardResult hybrid_forward(ad::Tape& tape, Binder& bind, ad::NodeId patch,
                             const NetworkSpec& spec);

}  // namespace volseg

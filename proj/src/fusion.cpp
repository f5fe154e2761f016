#include "volseg/fusion.hpp"

namespace volseg {

namespace {
constexpr double kNormEps = 1e-5;
}

int64_t fusion_reduction_ratio(int64_t channels) {
    if (channels >= 16 && channels % 16 == 0) return 16;
    if (channels % 2 == 0) return channels / 2;
    return 1;
}

void fusion_defs(std::vector<ParamDef>& defs, const NetworkSpec& spec) {
    const int64_t c = spec.channels_per_stage.back();
    const int64_t r = fusion_reduction_ratio(c);
    if (c % r != 0)
        throw ConfigError("fusion: channel count not divisible by reduction ratio");
    const int64_t cr = c / r;
    defs.push_back({"fusion/reduce_w", {cr, c}, ParamDef::kHe, c});
    defs.push_back({"fusion/norm_gamma", {cr}, ParamDef::kOnes, 0});
    defs.push_back({"fusion/norm_beta", {cr}, ParamDef::kZeros, 0});
    defs.push_back({"fusion/select_a", {c, cr}, ParamDef::kHe, cr});
    defs.push_back({"fusion/select_b", {c, cr}, ParamDef::kHe, cr});
}

std::vector<ParamDef> hybrid_model_defs(const NetworkSpec& spec) {
    spec.validate();
    std::vector<ParamDef> defs;
    encoder_defs(defs, spec, "dedicated");
    encoder_defs(defs, spec, "adapted");
    fusion_defs(defs, spec);
    decoder_defs(defs, spec);
    return defs;
}

ParamStore init_hybrid_params(const NetworkSpec& spec, uint64_t seed) {
    ParamStore store = init_from_defs(hybrid_model_defs(spec), seed, spec.leaky_slope);
    store.set_frozen("adapted/", true);
    return store;
}

ad::NodeId fuse_sum(ad::Tape& tape, ad::NodeId x_de, ad::NodeId x_ad) {
    return tape.add(x_de, x_ad);
}

ad::NodeId reduce_fc(ad::Tape& tape, Binder& bind, ad::NodeId s, double leaky_slope) {
    ad::NodeId z = tape.linear(s, bind("fusion/reduce_w"));
    z = tape.feature_norm(z, bind("fusion/norm_gamma"), bind("fusion/norm_beta"),
                          kNormEps);
    return tape.leaky_relu(z, leaky_slope);
}

std::pair<ad::NodeId, ad::NodeId> soft_select(ad::Tape& tape, Binder& bind,
                                              ad::NodeId z) {
    const ad::NodeId logits_a = tape.linear(z, bind("fusion/select_a"));
    const ad::NodeId logits_b = tape.linear(z, bind("fusion/select_b"));
    // e^p/(e^p+e^q) == sigmoid(p-q); the subtraction plays the role of the
    // usual max-logit shift and keeps both branches overflow-free.
    const ad::NodeId a = tape.sigmoid(tape.sub(logits_a, logits_b));
    const ad::NodeId b = tape.affine(a, -1.0, 1.0);
    return {a, b};
}

ad::NodeId fusion_aggregate(ad::Tape& tape, ad::NodeId x_de, ad::NodeId x_ad,
                            ad::NodeId a) {
    return tape.add(x_ad, tape.channel_scale(tape.sub(x_de, x_ad), a));
}

ad::NodeId selective_fusion(ad::Tape& tape, Binder& bind, ad::NodeId x_de,
                            ad::NodeId x_ad, const NetworkSpec& spec) {
    const ad::NodeId xf = fuse_sum(tape, x_de, x_ad);
    const ad::NodeId s = tape.global_avg_pool(xf);
    const ad::NodeId z = reduce_fc(tape, bind, s, spec.leaky_slope);
    const auto [a, b] = soft_select(tape, bind, z);
    (void)b;  // b = 1 - a is folded into the aggregate form
    const ad::NodeId agg = fusion_aggregate(tape, x_de, x_ad, a);
    return conv_block(tape, bind, "decoder/entry", agg, {1, 1, 1}, spec);
}

ForwardResult hybrid_forward(ad::Tape& tape, Binder& bind, ad::NodeId patch,
                             const NetworkSpec& spec) {
    const std::vector<ad::NodeId> ded =
        encoder_forward(tape, bind, patch, spec, "dedicated");
    const std::vector<ad::NodeId> ada =
        encoder_forward(tape, bind, patch, spec, "adapted");

    // Skip features are the elementwise sum of the branches; the bottleneck
    // pair goes through the attention unit. The decoder's entry block then
    // realizes the fused features' output convolution.
    std::vector<ad::NodeId> pyramid;
    for (int64_t i = 0; i + 1 < spec.num_stages; ++i)
        pyramid.push_back(fuse_sum(tape, ded[static_cast<size_t>(i)],
                                   ada[static_cast<size_t>(i)]));

    const ad::NodeId x_de = ded.back();
    const ad::NodeId x_ad = ada.back();
    const ad::NodeId xf = fuse_sum(tape, x_de, x_ad);
    const ad::NodeId s = tape.global_avg_pool(xf);
    const ad::NodeId z = reduce_fc(tape, bind, s, spec.leaky_slope);
    const auto [a, b] = soft_select(tape, bind, z);
    (void)b;
    pyramid.push_back(fusion_aggregate(tape, x_de, x_ad, a));

    ForwardResult r;
    r.pyramid = pyramid;
    r.logits = decoder_forward(tape, bind, pyramid, spec);
    return r;
}

}  // namespace volseg

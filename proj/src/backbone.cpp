#include "volseg/backbone.hpp"

#include <cmath>

namespace volseg {

namespace {

constexpr double kNormEps = 1e-5;
constexpr ad::Stride3 kUnit{1, 1, 1};

bool is_unit(const std::array<int64_t, 3>& s) {
    return s[0] == 1 && s[1] == 1 && s[2] == 1;
}

void conv_block_defs(std::vector<ParamDef>& defs, const std::string& prefix,
                     int64_t ci, int64_t co, const std::array<int64_t, 3>& k) {
    const int64_t fan_in = ci * k[0] * k[1] * k[2];
    defs.push_back({prefix + "/conv_w", {co, ci, k[0], k[1], k[2]}, ParamDef::kHe, fan_in});
    defs.push_back({prefix + "/conv_b", {co}, ParamDef::kZeros, 0});
    defs.push_back({prefix + "/norm_gamma", {co}, ParamDef::kOnes, 0});
    defs.push_back({prefix + "/norm_beta", {co}, ParamDef::kZeros, 0});
}

void up_defs(std::vector<ParamDef>& defs, const std::string& prefix, int64_t ci,
             int64_t co, const std::array<int64_t, 3>& stride) {
    // Kernel equals stride, so each output voxel sees ci input values.
    defs.push_back({prefix + "/up_w", {ci, co, stride[0], stride[1], stride[2]},
                    ParamDef::kHe, ci});
    defs.push_back({prefix + "/up_b", {co}, ParamDef::kZeros, 0});
}

void head_defs(std::vector<ParamDef>& defs, const std::string& prefix, int64_t ci,
               int64_t classes) {
    defs.push_back({prefix + "/head_w", {classes, ci, 1, 1, 1}, ParamDef::kHe, ci});
    defs.push_back({prefix + "/head_b", {classes}, ParamDef::kZeros, 0});
}

/// Decoder feature owners, deepest first; the bottleneck entry block is
/// always first. Mirrored by decoder_forward.
std::vector<std::string> decoder_owners(const NetworkSpec& spec) {
    std::vector<std::string> owners{"decoder/entry"};
    for (int64_t i = spec.num_stages - 2; i >= 0; --i)
        owners.push_back("decoder/stage" + std::to_string(i));
    if (!is_unit(spec.strides_per_stage[0])) owners.push_back("decoder/full");
    return owners;
}

int64_t owner_channels(const NetworkSpec& spec, const std::string& owner) {
    if (owner == "decoder/entry") return spec.channels_per_stage.back();
    if (owner == "decoder/full") return spec.channels_per_stage[0];
    const int64_t stage = std::stoll(owner.substr(std::string("decoder/stage").size()));
    return spec.channels_per_stage[stage];
}

}  // namespace

double he_std(int64_t fan_in, double leaky_slope) {
    return std::sqrt(2.0 / ((1.0 + leaky_slope * leaky_slope) *
                            static_cast<double>(fan_in)));
}

void encoder_defs(std::vector<ParamDef>& defs, const NetworkSpec& spec,
                  const std::string& subtree) {
    for (int64_t i = 0; i < spec.num_stages; ++i) {
        const int64_t ci = i == 0 ? 1 : spec.channels_per_stage[i - 1];
        const int64_t co = spec.channels_per_stage[i];
        const std::string base = subtree + "/stage" + std::to_string(i);
        conv_block_defs(defs, base + "/block0", ci, co, spec.kernel_size);
        conv_block_defs(defs, base + "/block1", co, co, spec.kernel_size);
    }
}

void decoder_defs(std::vector<ParamDef>& defs, const NetworkSpec& spec) {
    const auto& ch = spec.channels_per_stage;
    conv_block_defs(defs, "decoder/entry", ch.back(), ch.back(), spec.kernel_size);
    for (int64_t i = spec.num_stages - 2; i >= 0; --i) {
        const std::string base = "decoder/stage" + std::to_string(i);
        up_defs(defs, base, ch[i + 1], ch[i], spec.strides_per_stage[i + 1]);
        conv_block_defs(defs, base + "/block0", 2 * ch[i], ch[i], spec.kernel_size);
        conv_block_defs(defs, base + "/block1", ch[i], ch[i], spec.kernel_size);
    }
    if (!is_unit(spec.strides_per_stage[0])) {
        up_defs(defs, "decoder/full", ch[0], ch[0], spec.strides_per_stage[0]);
        conv_block_defs(defs, "decoder/full/block0", ch[0], ch[0], spec.kernel_size);
        conv_block_defs(defs, "decoder/full/block1", ch[0], ch[0], spec.kernel_size);
    }

    std::vector<std::string> owners = decoder_owners(spec);
    if (owners.size() == 1) {
        head_defs(defs, owners[0], owner_channels(spec, owners[0]), spec.num_classes);
    } else {
        // Heads sit at every decoder resolution except the deepest (the
        // entry block, owners[0]).
        for (size_t i = 1; i < owners.size(); ++i)
            head_defs(defs, owners[i], owner_channels(spec, owners[i]),
                      spec.num_classes);
    }
}

std::vector<ParamDef> plain_model_defs(const NetworkSpec& spec) {
    spec.validate();
    std::vector<ParamDef> defs;
    encoder_defs(defs, spec, "encoder");
    decoder_defs(defs, spec);
    return defs;
}

ParamStore init_from_defs(const std::vector<ParamDef>& defs, uint64_t seed,
                          double leaky_slope) {
    ParamStore store;
    store.seed = seed;
    const Rng base(seed);
    for (const ParamDef& def : defs) {
        Tensor t(def.shape);
        switch (def.init) {
            case ParamDef::kZeros:
                break;
            case ParamDef::kOnes:
                t.fill(1.0);
                break;
            case ParamDef::kHe: {
                // Per-name stream: initialization does not depend on the
                // order parameters are declared in.
                Rng rng = base.fork(fnv1a64(def.name));
                const double std = he_std(def.fan_in, leaky_slope);
                for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, std);
                break;
            }
        }
        store.add(def.name, std::move(t));
    }
    return store;
}

ParamStore init_params(const NetworkSpec& spec, uint64_t seed) {
    return init_from_defs(plain_model_defs(spec), seed, spec.leaky_slope);
}

ad::NodeId conv_block(ad::Tape& tape, Binder& bind, const std::string& prefix,
                      ad::NodeId x, ad::Stride3 stride, const NetworkSpec& spec) {
    const ad::Stride3 pad{spec.kernel_size[0] / 2, spec.kernel_size[1] / 2,
                          spec.kernel_size[2] / 2};
    ad::NodeId y = tape.conv3d(x, bind(prefix + "/conv_w"), bind(prefix + "/conv_b"),
                               stride, pad);
    y = tape.instance_norm(y, bind(prefix + "/norm_gamma"),
                           bind(prefix + "/norm_beta"), kNormEps);
    return tape.leaky_relu(y, spec.leaky_slope);
}

void check_patch_shape(const NetworkSpec& spec, const Tensor& patch) {
    if (patch.rank() != 5)
        throw ConfigError("forward: patch tensor must be [n,1,z,y,x]");
    if (patch.dim(1) != 1)
        throw ConfigError("forward: patch must have a single input channel");
    const auto cum = spec.cumulative_stride(spec.num_stages - 1);
    for (int a = 0; a < 3; ++a)
        if (patch.dim(2 + a) % cum[a] != 0)
            throw ConfigError(
                "forward: patch extent on axis " + std::to_string(a) + " (" +
                std::to_string(patch.dim(2 + a)) + ") is not divisible by cumulative stride " +
                std::to_string(cum[a]));
}

std::vector<ad::NodeId> encoder_forward(ad::Tape& tape, Binder& bind,
                                        ad::NodeId patch, const NetworkSpec& spec,
                                        const std::string& subtree) {
    check_patch_shape(spec, tape.value(patch));
    std::vector<ad::NodeId> pyramid;
    ad::NodeId x = patch;
    for (int64_t i = 0; i < spec.num_stages; ++i) {
        const std::string base = subtree + "/stage" + std::to_string(i);
        const auto& s = spec.strides_per_stage[i];
        x = conv_block(tape, bind, base + "/block0", x, {s[0], s[1], s[2]}, spec);
        x = conv_block(tape, bind, base + "/block1", x, kUnit, spec);
        pyramid.push_back(x);
    }
    return pyramid;
}

std::vector<ad::NodeId> decoder_forward(ad::Tape& tape, Binder& bind,
                                        const std::vector<ad::NodeId>& pyramid,
                                        const NetworkSpec& spec) {
    if (static_cast<int64_t>(pyramid.size()) != spec.num_stages)
        throw ConfigError("decoder_forward: pyramid length must equal num_stages");

    std::vector<ad::NodeId> feats;       // deepest first
    std::vector<std::string> owners = decoder_owners(spec);

    ad::NodeId x = conv_block(tape, bind, "decoder/entry", pyramid.back(), kUnit, spec);
    feats.push_back(x);
    for (int64_t i = spec.num_stages - 2; i >= 0; --i) {
        const std::string base = "decoder/stage" + std::to_string(i);
        const auto& s = spec.strides_per_stage[i + 1];
        x = tape.conv3d_transpose(x, bind(base + "/up_w"), bind(base + "/up_b"),
                                  {s[0], s[1], s[2]});
        x = tape.concat_channels(x, pyramid[static_cast<size_t>(i)]);
        x = conv_block(tape, bind, base + "/block0", x, kUnit, spec);
        x = conv_block(tape, bind, base + "/block1", x, kUnit, spec);
        feats.push_back(x);
    }
    if (!is_unit(spec.strides_per_stage[0])) {
        const auto& s = spec.strides_per_stage[0];
        x = tape.conv3d_transpose(x, bind("decoder/full/up_w"),
                                  bind("decoder/full/up_b"), {s[0], s[1], s[2]});
        x = conv_block(tape, bind, "decoder/full/block0", x, kUnit, spec);
        x = conv_block(tape, bind, "decoder/full/block1", x, kUnit, spec);
        feats.push_back(x);
    }

    std::vector<ad::NodeId> logits;  // finest-first
    if (feats.size() == 1) {
        logits.push_back(tape.conv3d(feats[0], bind(owners[0] + "/head_w"),
                                     bind(owners[0] + "/head_b"), kUnit, {0, 0, 0}));
        return logits;
    }
    for (size_t i = feats.size(); i-- > 1;)
        logits.push_back(tape.conv3d(feats[i], bind(owners[i] + "/head_w"),
                                     bind(owners[i] + "/head_b"), kUnit, {0, 0, 0}));
    return logits;
}

ForwardResult forward_model(ad::Tape& tape, Binder& bind, ad::NodeId patch,
                            const NetworkSpec& spec) {
    ForwardResult r;
    r.pyramid = encoder_forward(tape, bind, patch, spec, "encoder");
    r.logits = decoder_forward(tape, bind, r.pyramid, spec);
    return r;
}

int64_t num_supervision_levels(const NetworkSpec& spec) {
    const int64_t owners = static_cast<int64_t>(decoder_owners(spec).size());
    return owners == 1 ? 1 : owners - 1;
}

}  // namespace volseg

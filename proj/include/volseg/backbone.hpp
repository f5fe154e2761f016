#pragma once

#include <map>
#include <string>
#include <vector>

#include "volseg/autodiff.hpp"
#include "volseg/net_spec.hpp"
#include "volseg/params.hpp"
#include "volseg/rng.hpp"

namespace volseg {

/// Declares one parameter's shape and initialization.
struct ParamDef {
    enum Init { kHe, kZeros, kOnes };
    std::string name;
    std::vector<int64_t> shape;
    Init init = kZeros;
    int64_t fan_in = 0;  // used by kHe
};

/// He-style std for leaky-ReLU networks: sqrt(2 / ((1+slope^2) * fan_in)).
double he_std(int64_t fan_in, double leaky_slope);

/// Appends the encoder parameter layout under `subtree` (encoder for the
/// plain model; dedicated/adapted for the hybrid branches).
void encoder_defs(std::vector<ParamDef>& defs, const NetworkSpec& spec,
                  const std::string& subtree);

/// Appends the decoder/* layout (entry block, upsampling stages, heads).
void decoder_defs(std::vector<ParamDef>& defs, const NetworkSpec& spec);

/// Parameter layout of the single-encoder model: encoder/* and decoder/*.
std::vector<ParamDef> plain_model_defs(const NetworkSpec& spec);

/// Materializes and initializes a store from definitions. Each parameter
/// draws from its own name-keyed stream, so initialization is independent
/// of definition order and bit-reproducible for a given seed.
ParamStore init_from_defs(const std::vector<ParamDef>& defs, uint64_t seed,
                          double leaky_slope);

/// init_from_defs over plain_model_defs.
ParamStore init_params(const NetworkSpec& spec, uint64_t seed);

/// Lazily binds store parameters to tape leaves (requires_grad tracks the
/// freeze flag) so each parameter appears on the tape exactly once.
class Binder {
public:
    Binder(ad::Tape& tape, const ParamStore& store) : tape_(tape), store_(store) {}

    ad::NodeId operator()(const std::string& name) {
        auto it = bound_.find(name);
        if (it != bound_.end()) return it->second;
        const Param& p = store_.at(name);
        const ad::NodeId id = tape_.leaf(p.value, !p.frozen);
        bound_.emplace(name, id);
        return id;
    }

    const std::map<std::string, ad::NodeId>& bound() const { return bound_; }

private:
    ad::Tape& tape_;
    const ParamStore& store_;
    std::map<std::string, ad::NodeId> bound_;
};

/// conv3d -> instance norm -> leaky ReLU, reading the four parameters under
/// `prefix` (conv_w, conv_b, norm_gamma, norm_beta).
ad::NodeId conv_block(ad::Tape& tape, Binder& bind, const std::string& prefix,
                      ad::NodeId x, ad::Stride3 stride, const NetworkSpec& spec);

/// Runs the encoding path; returns one feature node per stage, deepest
/// last. `subtree` selects which parameter subtree to read (encoder for the
/// plain model; dedicated/adapted for the hybrid branches).
std::vector<ad::NodeId> encoder_forward(ad::Tape& tape, Binder& bind,
                                        ad::NodeId patch, const NetworkSpec& spec,
                                        const std::string& subtree = "encoder");

/// Decodes a pyramid of skip features (deepest last) into logits, finest
/// first. The deepest pyramid entry feeds the decoder's bottleneck entry
/// block; supervision heads attach at every decoder resolution except the
/// deepest (a single-resolution decoder keeps its one head).
std::vector<ad::NodeId> decoder_forward(ad::Tape& tape, Binder& bind,
                                        const std::vector<ad::NodeId>& pyramid,
                                        const NetworkSpec& spec);

struct ForwardResult {
    std::vector<ad::NodeId> logits;   // finest-first
    std::vector<ad::NodeId> pyramid;  // encoder stages, deepest last
};

/// encoder_forward composed with decoder_forward.
ForwardResult forward_model(ad::Tape& tape, Binder& bind, ad::NodeId patch,
                            const NetworkSpec& spec);

/// Number of supervision levels forward_model emits for this spec.
int64_t num_supervision_levels(const NetworkSpec& spec);

/// Validates patch divisibility by the spec's cumulative strides.
void check_patch_shape(const NetworkSpec& spec, const Tensor& patch);

}  // namespace volseg

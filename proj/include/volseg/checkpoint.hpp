#pragma once

#include <string>

#include "volseg/net_spec.hpp"
#include "volseg/params.hpp"
#include "volseg/volume.hpp"

namespace volseg {

/// A trained model snapshot: the architecture it was built for, every
/// parameter tensor with its freeze flag, where the epoch schedule stood
/// when it was written, how well it validated, which corpus produced it,
/// and the intensity normalization its inputs were trained under.
struct Checkpoint {
    NetworkSpec spec;
    ParamStore params;
    int64_t epoch = 0;       // absolute epochs completed at save time
    double val_dice = 0.0;   // validation soft-Dice at save time
    std::string task;        // corpus tag, e.g. "blob" or "multi_lesion"
    IntensityStats stats;    // normalization fitted on the training split
};

/// Magic line, JSON header (spec, provenance fields, and a parameter
/// manifest with shapes and freeze flags), then the parameter payloads as
/// raw little-endian float64 in manifest order. save then load round-trips
/// every parameter and header double bit-exactly.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Throws ConfigError unless the checkpoint's embedded architecture equals
/// `expected` field-for-field. Strategies call this before touching any
/// weights so a mismatched snapshot can never be partially loaded.
void check_spec_match(const Checkpoint& ckpt, const NetworkSpec& expected,
                      const std::string& context);

}  // namespace volseg

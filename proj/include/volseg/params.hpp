#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "volseg/errors.hpp"
#include "volseg/tensor.hpp"

namespace volseg {

/// One named tensor plus its freeze flag; frozen parameters never receive
/// gradients and are never touched by the optimizer.
struct Param {
    Tensor value;
    bool frozen = false;
};

/// Named, hierarchical parameter collection. Names are slash-separated
/// paths; the top-level segments partition the model into subtrees
/// (encoder/, decoder/, and for hybrid models dedicated/, adapted/,
/// fusion/).
class ParamStore {
public:
    uint64_t seed = 0;

    void add(const std::string& name, Tensor value) {
        if (params_.count(name))
            throw ConfigError("ParamStore: duplicate parameter '" + name + "'");
        params_[name] = Param{std::move(value), false};
    }

    bool has(const std::string& name) const { return params_.count(name) > 0; }

    Param& at(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end())
            throw ConfigError("ParamStore: unknown parameter '" + name + "'");
        return it->second;
    }
    const Param& at(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end())
            throw ConfigError("ParamStore: unknown parameter '" + name + "'");
        return it->second;
    }

    std::map<std::string, Param>& entries() { return params_; }
    const std::map<std::string, Param>& entries() const { return params_; }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(params_.size());
        for (const auto& [name, p] : params_) out.push_back(name);
        return out;
    }

    /// Sets the freeze flag on every parameter whose name starts with
    /// `prefix` (empty prefix = whole store). Returns the count affected.
    int64_t set_frozen(const std::string& prefix, bool frozen) {
        int64_t n = 0;
        for (auto& [name, p] : params_) {
            if (name.rfind(prefix, 0) == 0) {
                p.frozen = frozen;
                ++n;
            }
        }
        return n;
    }

    int64_t total_scalars() const {
        int64_t n = 0;
        for (const auto& [name, p] : params_) n += p.value.numel();
        return n;
    }
    int64_t trainable_scalars() const {
        int64_t n = 0;
        for (const auto& [name, p] : params_)
            if (!p.frozen) n += p.value.numel();
        return n;
    }

private:
    std::map<std::string, Param> params_;
};

inline uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace volseg

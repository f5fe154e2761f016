#include "volseg/optimizer.hpp"

#include <cmath>
#include <stdexcept>

#include "volseg/errors.hpp"

namespace volseg {

double poly_lr(double lr0, int64_t epoch, int64_t max_epochs, double power) {
    if (max_epochs < 1) throw ConfigError("poly_lr: max_epochs must be at least 1");
    if (epoch < 0 || epoch > max_epochs)
        throw ConfigError("poly_lr: epoch must lie in [0, max_epochs]");
    if (!(lr0 > 0.0)) throw ConfigError("poly_lr: base learning rate must be positive");
    const double frac = 1.0 - static_cast<double>(epoch) / static_cast<double>(max_epochs);
    return lr0 * std::pow(frac, power);
}

Optimizer::Optimizer(OptimizerConfig cfg) : cfg_(cfg) {
    if (!(cfg_.lr0 > 0.0)) throw ConfigError("optimizer: lr0 must be positive");
    if (cfg_.momentum < 0.0 || cfg_.momentum >= 1.0)
        throw ConfigError("optimizer: momentum must lie in [0, 1)");
    if (cfg_.max_epochs < 1) throw ConfigError("optimizer: max_epochs must be at least 1");
}

double Optimizer::lr_for_epoch(int64_t epoch) const {
    return poly_lr(cfg_.lr0, epoch, cfg_.max_epochs, cfg_.power);
}

void Optimizer::step(ParamStore& params, const std::map<std::string, Tensor>& grads,
                     double lr) {
    const double mu = cfg_.momentum;
    for (const auto& [name, g] : grads) {
        Param& p = params.at(name);
        if (p.frozen)
            throw std::logic_error("optimizer: gradient supplied for frozen parameter " +
                                   name);
        if (g.numel() != p.value.numel())
            throw std::logic_error("optimizer: gradient shape mismatch for " + name);
        auto it = velocity_.find(name);
        if (it == velocity_.end())
            it = velocity_.emplace(name, Tensor(p.value.shape())).first;
        Tensor& v = it->second;
        for (int64_t i = 0; i < g.numel(); ++i) {
            v[i] = mu * v[i] + g[i];
            p.value[i] -= lr * (g[i] + mu * v[i]);
        }
    }
}

}  // namespace volseg

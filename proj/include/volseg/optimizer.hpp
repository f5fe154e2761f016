#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "volseg/params.hpp"

namespace volseg {

// Polynomial learning-rate decay: lr0 * (1 - epoch/max_epochs)^power.
// `epoch` counts completed epochs, so the first epoch trains at lr0 and the
// schedule reaches zero only at epoch == max_epochs.
double poly_lr(double lr0, int64_t epoch, int64_t max_epochs, double power = 0.9);

struct OptimizerConfig {
    double lr0 = 0.01;
    double momentum = 0.99;
    int64_t max_epochs = 0;  // horizon for the poly schedule
    double power = 0.9;
};

// SGD with Nesterov momentum over a ParamStore. Velocity buffers are created
// lazily (zero-initialized) the first time a parameter receives a gradient,
// so loading a checkpoint without velocities behaves like a fresh start.
class Optimizer {
public:
    explicit Optimizer(OptimizerConfig cfg);

    const OptimizerConfig& config() const { return cfg_; }
    double lr_for_epoch(int64_t epoch) const;

    // Applies one update to every non-frozen parameter that appears in
    // `grads`. Gradients for frozen parameters are a contract violation.
    void step(ParamStore& params, const std::map<std::string, Tensor>& grads,
              double lr);

    std::map<std::string, Tensor>& velocity() { return velocity_; }
    const std::map<std::string, Tensor>& velocity() const { return velocity_; }

private:
    OptimizerConfig cfg_;
    std::map<std::string, Tensor> velocity_;
};

}  // namespace volseg

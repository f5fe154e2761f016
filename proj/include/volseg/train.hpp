#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "volseg/fusion.hpp"
#include "volseg/loss.hpp"
#include "volseg/optimizer.hpp"
#include "volseg/sampling.hpp"
#include "volseg/volume.hpp"

namespace volseg {

/// One training example: a preprocessed volume with its label mask and the
/// task it came from (used by task-uniform batch composition).
struct TrainCase {
    Volume volume;
    Mask mask;
    std::string task_id;
};

enum class ModelKind { kPlain, kHybrid };

struct TrainConfig {
    int64_t epochs = 200;
    int64_t iters_per_epoch = 20;
    int64_t batch_size = 2;
    std::array<int64_t, 3> patch_size{28, 44, 44};
    double fg_bias = 0.5;
    uint64_t seed = 0;
    /// Sample a task uniformly first, then a case within it; off = uniform
    /// over cases regardless of task.
    bool task_uniform = false;
    /// Stop once the epoch-mean training soft-Dice reaches this value
    /// (negative disables). The final log row still records that epoch.
    double early_stop_dice = -1.0;
    LossConfig loss;  // ds_weights filled from the model depth when empty
};

struct TrainLogEntry {
    int64_t epoch = 0;  // absolute index; continual runs keep counting
    double lr = 0.0;
    double train_loss = 0.0;
    double seconds_per_epoch = 0.0;
    double train_dice = 0.0;  // in-memory only, not a CSV column
};

struct TrainLog {
    std::vector<TrainLogEntry> entries;

    double mean_seconds() const;
    double final_dice() const;
    void save_csv(const std::string& path) const;
};

TrainLog load_train_log(const std::string& path);

/// Case index for one batch slot: with task_uniform and more than one task
/// present, a task is drawn uniformly first and then a case within it, so
/// no corpus dominates by size; otherwise uniform over all cases. Exposed
/// so the batch-composition law is testable without running the loop.
int64_t pick_training_case(const std::vector<TrainCase>& cases, bool task_uniform,
                           Rng& rng);

/// Runs the patch-sampling SGD loop: per epoch, iters_per_epoch batches of
/// randomly cropped patches, deep-supervision loss, backward, one optimizer
/// step per batch at that epoch's learning rate. Epoch `e` of this call is
/// absolute epoch start_epoch + e; the learning rate follows the
/// optimizer's schedule at the absolute epoch, which is how a continued
/// run keeps decaying where its source left off. Patch draws depend only
/// on (seed, absolute epoch), not on how training was segmented into
/// calls. Throws TrainDivergedError on a non-finite loss.
TrainLog train_model(ParamStore& params, const NetworkSpec& spec, ModelKind kind,
                     const std::vector<TrainCase>& cases, const TrainConfig& cfg,
                     Optimizer& opt, int64_t start_epoch = 0);

}  // namespace volseg

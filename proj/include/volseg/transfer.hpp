#pragma once

#include <string>
#include <utility>
#include <vector>

#include "volseg/checkpoint.hpp"
#include "volseg/train.hpp"

namespace volseg {

/// The five ways to initialize the target-task model from (or without) a
/// pre-trained source model.
enum class StrategyKind {
    kFromScratch,     // fresh weights, everything trainable
    kContinual,       // checkpoint weights, schedule continues where it stopped
    kBodyFinetune,    // checkpoint weights, schedule restarts
    kFrozenEncoder,   // checkpoint encoder frozen, fresh trainable decoder
    kHybrid,          // frozen checkpoint encoder + fresh second encoder, fused
};

/// Accepts the CLI tokens (scratch, continual, body, frozen, hybrid) and
/// the long names (from_scratch, body_finetune, frozen_encoder).
StrategyKind strategy_from_string(const std::string& s);
std::string strategy_to_string(StrategyKind k);

struct StrategyConfig {
    StrategyKind kind = StrategyKind::kFromScratch;
    std::string source_checkpoint;  // required for every kind but from_scratch
    uint64_t seed = 0;
};

/// The materialized strategy: which network shape to run, its initialized
/// parameters with freeze flags applied, and the absolute epoch at which
/// the decay schedule resumes (nonzero only for the continuing strategy).
struct TrainableSetup {
    ModelKind model = ModelKind::kPlain;
    NetworkSpec spec;
    ParamStore params;
    int64_t start_epoch = 0;
    std::string frozen_subtree;  // empty = fully trainable
};

/// Builds the setup from an already-loaded source snapshot (null only for
/// from_scratch). The source must be a single-encoder model whose
/// architecture matches target_spec exactly; anything else throws
/// ConfigError before any weight is copied.
TrainableSetup apply_strategy(const StrategyConfig& cfg,
                              const NetworkSpec& target_spec,
                              const Checkpoint* source);

/// Loads cfg.source_checkpoint when the kind needs one, then delegates.
TrainableSetup apply_strategy(const StrategyConfig& cfg,
                              const NetworkSpec& target_spec);

/// Names of parameters flagged frozen in `before` whose values differ
/// bitwise in `after`; empty = the freeze held. The two stores must contain
/// exactly the same names.
std::vector<std::string> verify_frozen(const ParamStore& before,
                                       const ParamStore& after);

/// Any label above zero collapses to the single lesion class; the mask
/// becomes binary.
void merge_to_binary(Mask& m);

/// One pre-training corpus: an identifier and the case container paths.
/// Labels are always merged to binary when the corpus is loaded.
struct PretrainTask {
    std::string task_id;
    std::vector<std::string> case_paths;
};

/// In-memory corpus used by the core routine and the tests directly.
struct TaskCases {
    std::string task_id;
    std::vector<std::pair<Volume, Mask>> cases;
};

struct PretrainConfig {
    NetworkSpec spec;
    TrainConfig train;
    OptimizerConfig opt;
};

/// Shared pre-training pipeline: per-task 80/20 train/validation split,
/// intensity statistics fitted on the pooled training split, labels merged
/// to binary, patch-based training (task-uniform batches when more than
/// one task), then a validation soft-Dice computed by full-volume
/// inference. The returned checkpoint carries the trained weights, the
/// architecture, the epochs completed, the validation score, the given
/// tag, and the fitted statistics.
Checkpoint pretrain_core(const std::vector<TaskCases>& tasks,
                         const PretrainConfig& cfg, const std::string& tag);

/// Loads the task's cases and runs pretrain_core tagged with its task_id.
Checkpoint pretrain_single(const PretrainTask& task, const PretrainConfig& cfg);

/// Requires at least two tasks; trains one model on their union with
/// uniform task sampling and tags the checkpoint "multi_lesion".
Checkpoint pretrain_multi(const std::vector<PretrainTask>& tasks,
                          const PretrainConfig& cfg);

}  // namespace volseg

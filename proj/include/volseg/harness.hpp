#pragma once

#include <string>
#include <vector>

#include "volseg/metrics.hpp"
#include "volseg/transfer.hpp"

namespace volseg {

/// Settings for generating the synthetic corpora: grid shape, structure
/// radius window, and corpus sizes. Families keep their other generator
/// defaults.
struct SyntheticConfig {
    std::array<int64_t, 3> shape{16, 24, 24};
    double min_radius = 2.5;
    double max_radius = 4.5;
    int64_t cases_per_task = 8;
    int64_t target_cases = 20;
};

/// One experiment end to end: where the data lives, the architecture and
/// schedules, the strategy-by-source grid, the cross-validation protocol,
/// and where artifacts go. Loaded from JSON; every field has a default
/// except the seed list, which must be explicit.
struct ExperimentConfig {
    std::string out_dir = "runs/exp";
    std::string target_root;                                    // target-task cases
    std::vector<std::pair<std::string, std::string>> task_roots;  // (task, dir)
    std::string target_family = "plate";  // generated into target_root
    NetworkSpec spec = NetworkSpec::desk_default();
    OptimizerConfig optimizer{0.01, 0.99, 0, 0.9};  // horizons set per phase
    TrainConfig pretrain;
    TrainConfig transfer;
    int64_t folds = 5;
    double train_fraction = 0.2;
    std::vector<uint64_t> seeds;
    std::vector<std::string> strategies{"scratch", "continual", "body", "frozen",
                                        "hybrid"};
    std::vector<std::string> sources{"multi_lesion"};
    double tau_mm = 3.0;
    SyntheticConfig synthetic;

    ExperimentConfig();  // desk-scale phase defaults
    void validate() const;
};

/// Parses the JSON config file; unknown keys are rejected so typos cannot
/// silently fall back to defaults. Throws ConfigError on malformed input,
/// DataError when the file cannot be read.
ExperimentConfig load_experiment_config(const std::string& path);

/// Generates every configured corpus: cases_per_task cases per pre-training
/// task (family named by the task id) and target_cases cases of the target
/// family into target_root. Deterministic in (config, seed). Returns the
/// number of case files written.
int64_t cmd_make_synthetic(const ExperimentConfig& cfg, uint64_t seed);

struct PretrainOutcome {
    std::vector<std::string> checkpoint_paths;  // single tasks in order, multi last
    std::string manifest_path;
};

/// Trains one checkpoint per task plus the multi-task checkpoint, writing
/// <out>/checkpoints/<task>.ckpt and a manifest JSON recording each
/// checkpoint's seed, epochs, and validation score. Task i trains under
/// seed + i, the multi-task model under the base seed.
PretrainOutcome cmd_pretrain(const ExperimentConfig& cfg, uint64_t seed);

struct TransferOutcome {
    std::string cell_dir;
    std::string model_path;
    std::string log_path;
    TrainLog log;
    std::vector<std::string> freeze_violations;  // non-empty = audit failure
};

/// Runs one strategy on one cross-validation fold: fold-train cases are
/// normalized by their own statistics, the strategy is materialized from
/// the named source checkpoint (ignored for scratch), training runs under
/// the transfer schedule, and the model plus TrainLog CSV land in
/// <out>/matrix/<strategy>_<source>_f<fold>/. A post-hoc frozen-parameter
/// audit is always recorded.
TransferOutcome cmd_transfer(const ExperimentConfig& cfg, StrategyKind kind,
                             const std::string& source_tag, int64_t fold,
                             uint64_t seed);

struct EvalOutcome {
    std::vector<CaseMetrics> cases;
    FoldSummary summary;
    std::string case_csv;
    std::string summary_csv;
};

/// Sliding-window inference of the model over the given case files, scored
/// with the metrics module at the configured tolerance; per-case and
/// summary CSVs go to out_dir. Preprocessing uses the statistics stored in
/// the model checkpoint, so evaluation needs no training-side state.
EvalOutcome cmd_eval(const ExperimentConfig& cfg, const std::string& model_path,
                     const std::vector<std::string>& case_paths, double tau_mm,
                     const std::string& out_dir);

/// Matrix result: one row per (strategy, source, fold) plus an AVG row per
/// (strategy, source) averaging its completed folds.
struct RunReport {
    struct Row {
        std::string strategy;
        std::string source;
        std::string fold;  // decimal index, or "AVG"
        bool ok = false;
        std::string error;
        FoldSummary summary{};
        double seconds_per_epoch = 0.0;
    };
    std::vector<Row> rows;
};

/// Executes the full strategy-by-source-by-fold grid. Completed cells
/// (recorded in each cell's cell.json with a matching seed) are skipped on
/// rerun; failing cells are marked failed and the run continues. The report
/// CSV and markdown table are rewritten at the end of every run.
RunReport cmd_matrix(const ExperimentConfig& cfg);

void save_report_csv(const std::string& path, const RunReport& report);
void save_report_markdown(const std::string& path, const RunReport& report);

/// Order-sensitive digest of every report field except wall-clock timing,
/// as a 16-hex-digit string. Two runs of the same configuration hash
/// identically even though their epoch times differ.
std::string report_hash(const RunReport& report);

}  // namespace volseg

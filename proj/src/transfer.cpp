#include "volseg/transfer.hpp"

#include <algorithm>
#include <cmath>

#include "volseg/inference.hpp"

namespace volseg {

namespace {

bool is_single_encoder(const ParamStore& store) {
    for (const auto& [name, p] : store.entries())
        if (name.rfind("dedicated/", 0) == 0 || name.rfind("adapted/", 0) == 0 ||
            name.rfind("fusion/", 0) == 0)
            return false;
    return true;
}

/// Copies every destination parameter under dst_prefix from the source
/// parameter with the same suffix under src_prefix. Shape or presence
/// mismatches throw before anything is written.
int64_t copy_subtree(const ParamStore& src, const std::string& src_prefix,
                     ParamStore& dst, const std::string& dst_prefix) {
    std::vector<std::pair<std::string, std::string>> plan;
    for (const auto& [name, p] : dst.entries()) {
        if (name.rfind(dst_prefix, 0) != 0) continue;
        const std::string src_name = src_prefix + name.substr(dst_prefix.size());
        if (!src.has(src_name))
            throw ConfigError("apply_strategy: checkpoint is missing '" + src_name +
                              "'");
        if (!src.at(src_name).value.same_shape(p.value))
            throw ConfigError("apply_strategy: shape mismatch for '" + src_name +
                              "'");
        plan.emplace_back(name, src_name);
    }
    for (const auto& [dst_name, src_name] : plan)
        dst.at(dst_name).value = src.at(src_name).value;
    return static_cast<int64_t>(plan.size());
}

const Checkpoint& require_source(const StrategyConfig& cfg, const Checkpoint* source,
                                 const NetworkSpec& target_spec) {
    if (source == nullptr)
        throw ConfigError("apply_strategy: strategy '" +
                          strategy_to_string(cfg.kind) +
                          "' requires a source checkpoint");
    check_spec_match(*source, target_spec, "apply_strategy");
    if (!is_single_encoder(source->params))
        throw ConfigError(
            "apply_strategy: source checkpoint is not a single-encoder model");
    return *source;
}

}  // namespace

StrategyKind strategy_from_string(const std::string& s) {
    if (s == "scratch" || s == "from_scratch") return StrategyKind::kFromScratch;
    if (s == "continual") return StrategyKind::kContinual;
    if (s == "body" || s == "body_finetune") return StrategyKind::kBodyFinetune;
    if (s == "frozen" || s == "frozen_encoder") return StrategyKind::kFrozenEncoder;
    if (s == "hybrid") return StrategyKind::kHybrid;
    throw ConfigError("unknown strategy '" + s +
                      "' (expected scratch, continual, body, frozen, or hybrid)");
}

std::string strategy_to_string(StrategyKind k) {
    switch (k) {
        case StrategyKind::kFromScratch: return "scratch";
        case StrategyKind::kContinual: return "continual";
        case StrategyKind::kBodyFinetune: return "body";
        case StrategyKind::kFrozenEncoder: return "frozen";
        case StrategyKind::kHybrid: return "hybrid";
    }
    throw ConfigError("strategy_to_string: invalid kind");
}

TrainableSetup apply_strategy(const StrategyConfig& cfg,
                              const NetworkSpec& target_spec,
                              const Checkpoint* source) {
    target_spec.validate();
    TrainableSetup setup;
    setup.spec = target_spec;

    switch (cfg.kind) {
        case StrategyKind::kFromScratch: {
            setup.params = init_params(target_spec, cfg.seed);
            break;
        }
        case StrategyKind::kContinual:
        case StrategyKind::kBodyFinetune: {
            const Checkpoint& src = require_source(cfg, source, target_spec);
            setup.params = init_params(target_spec, cfg.seed);
            const int64_t expected =
                static_cast<int64_t>(setup.params.entries().size());
            if (static_cast<int64_t>(src.params.entries().size()) != expected)
                throw ConfigError(
                    "apply_strategy: checkpoint parameter set does not match the "
                    "single-encoder layout");
            copy_subtree(src.params, "", setup.params, "");
            setup.params.set_frozen("", false);
            if (cfg.kind == StrategyKind::kContinual) setup.start_epoch = src.epoch;
            break;
        }
        case StrategyKind::kFrozenEncoder: {
            const Checkpoint& src = require_source(cfg, source, target_spec);
            setup.params = init_params(target_spec, cfg.seed);
            copy_subtree(src.params, "encoder/", setup.params, "encoder/");
            setup.params.set_frozen("encoder/", true);
            setup.frozen_subtree = "encoder/";
            break;
        }
        case StrategyKind::kHybrid: {
            const Checkpoint& src = require_source(cfg, source, target_spec);
            setup.model = ModelKind::kHybrid;
            setup.params = init_hybrid_params(target_spec, cfg.seed);
            copy_subtree(src.params, "encoder/", setup.params, "adapted/");
            setup.params.set_frozen("adapted/", true);
            setup.frozen_subtree = "adapted/";
            break;
        }
    }
    setup.params.seed = cfg.seed;
    return setup;
}

TrainableSetup apply_strategy(const StrategyConfig& cfg,
                              const NetworkSpec& target_spec) {
    if (cfg.kind == StrategyKind::kFromScratch)
        return apply_strategy(cfg, target_spec, nullptr);
    if (cfg.source_checkpoint.empty())
        throw ConfigError("apply_strategy: strategy '" +
                          strategy_to_string(cfg.kind) +
                          "' requires a source checkpoint path");
    const Checkpoint src = load_checkpoint(cfg.source_checkpoint);
    return apply_strategy(cfg, target_spec, &src);
}

std::vector<std::string> verify_frozen(const ParamStore& before,
                                       const ParamStore& after) {
    if (before.names() != after.names())
        throw ConfigError("verify_frozen: parameter name sets differ");
    for (const auto& [name, p] : before.entries())
        if (!p.value.same_shape(after.at(name).value))
            throw ConfigError("verify_frozen: shape mismatch for '" + name + "'");
    std::vector<std::string> violated;
    for (const auto& [name, p] : before.entries()) {
        if (!p.frozen) continue;
        if (!bitwise_equal(p.value, after.at(name).value)) violated.push_back(name);
    }
    return violated;
}

void merge_to_binary(Mask& m) {
    for (auto& l : m.labels) l = l > 0 ? 1 : 0;
    m.num_classes = 2;
}

Checkpoint pretrain_core(const std::vector<TaskCases>& tasks,
                         const PretrainConfig& cfg, const std::string& tag) {
    cfg.spec.validate();
    if (cfg.spec.num_classes != 2)
        throw ConfigError(
            "pretrain_core: pre-training always targets the merged binary lesion "
            "class; spec.num_classes must be 2");
    if (tasks.empty()) throw DataError("pretrain_core: no tasks given");
    for (const auto& t : tasks)
        if (t.cases.empty())
            throw DataError("pretrain_core: task '" + t.task_id + "' has no cases");

    // per-task 80/20 split; a single-case task trains and validates on the
    // same case rather than leaving one side empty
    std::vector<TrainCase> train_cases;
    std::vector<std::pair<Volume, Mask>> val_cases;
    std::vector<std::pair<const Volume*, const Mask*>> stat_inputs;
    for (size_t ti = 0; ti < tasks.size(); ++ti) {
        const TaskCases& task = tasks[ti];
        const int64_t n = static_cast<int64_t>(task.cases.size());
        std::vector<int64_t> order(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
        Rng rng = Rng(cfg.train.seed).fork(0xbeef0000ull + ti);
        for (int64_t i = n - 1; i > 0; --i)
            std::swap(order[static_cast<size_t>(i)],
                      order[static_cast<size_t>(rng.uniform_index(i + 1))]);
        const int64_t n_train =
            n == 1 ? 1 : std::clamp<int64_t>((4 * n) / 5, 1, n - 1);
        for (int64_t i = 0; i < n; ++i) {
            const auto& [vol, mask] = task.cases[static_cast<size_t>(order[i])];
            Mask merged = mask;
            merge_to_binary(merged);
            if (i < n_train) {
                train_cases.push_back(TrainCase{vol, std::move(merged), task.task_id});
            } else {
                val_cases.emplace_back(vol, std::move(merged));
            }
        }
    }
    for (const auto& c : train_cases) stat_inputs.emplace_back(&c.volume, &c.mask);

    const IntensityStats stats = compute_intensity_stats(stat_inputs);
    for (auto& c : train_cases) c.volume = preprocess(c.volume, stats);
    for (auto& [vol, mask] : val_cases) vol = preprocess(vol, stats);

    TrainConfig train_cfg = cfg.train;
    train_cfg.task_uniform = tasks.size() > 1;

    ParamStore params = init_params(cfg.spec, cfg.train.seed);
    Optimizer opt(cfg.opt);
    const TrainLog log =
        train_model(params, cfg.spec, ModelKind::kPlain, train_cases, train_cfg, opt);

    // score by full-volume inference on the held-out split (training split
    // for the degenerate single-case corpus)
    double dice_sum = 0.0;
    int64_t dice_n = 0;
    if (!val_cases.empty()) {
        for (const auto& [vol, mask] : val_cases) {
            const Tensor probs = predict_probs(params, cfg.spec, ModelKind::kPlain,
                                               vol, train_cfg.patch_size);
            dice_sum += soft_dice(probs, mask);
            ++dice_n;
        }
    } else {
        for (const auto& c : train_cases) {
            const Tensor probs = predict_probs(params, cfg.spec, ModelKind::kPlain,
                                               c.volume, train_cfg.patch_size);
            dice_sum += soft_dice(probs, c.mask);
            ++dice_n;
        }
    }

    Checkpoint ckpt;
    ckpt.spec = cfg.spec;
    ckpt.params = std::move(params);
    ckpt.params.seed = cfg.train.seed;
    ckpt.epoch = log.entries.empty() ? 0 : log.entries.back().epoch + 1;
    ckpt.val_dice = dice_sum / static_cast<double>(dice_n);
    ckpt.task = tag;
    ckpt.stats = stats;
    return ckpt;
}

namespace {

TaskCases load_task(const PretrainTask& task) {
    if (task.case_paths.empty())
        throw DataError("pretrain: task '" + task.task_id + "' lists no cases");
    TaskCases loaded;
    loaded.task_id = task.task_id;
    for (const auto& path : task.case_paths) loaded.cases.push_back(load_case(path));
    return loaded;
}

}  // namespace

Checkpoint pretrain_single(const PretrainTask& task, const PretrainConfig& cfg) {
    return pretrain_core({load_task(task)}, cfg, task.task_id);
}

Checkpoint pretrain_multi(const std::vector<PretrainTask>& tasks,
                          const PretrainConfig& cfg) {
    if (tasks.size() < 2)
        throw ConfigError("pretrain_multi: needs at least two tasks");
    std::vector<TaskCases> loaded;
    loaded.reserve(tasks.size());
    for (const auto& t : tasks) loaded.push_back(load_task(t));
    return pretrain_core(loaded, cfg, "multi_lesion");
}

}  // namespace volseg

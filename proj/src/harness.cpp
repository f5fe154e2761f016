#include "volseg/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <set>

#include "volseg/inference.hpp"
#include "volseg/synthetic.hpp"

namespace fs = std::filesystem;

namespace volseg {

namespace {

void reject_unknown_keys(const nlohmann::json& obj, const std::set<std::string>& known,
                         const std::string& where) {
    for (const auto& [key, value] : obj.items())
        if (!known.count(key))
            throw ConfigError("config: unknown key '" + key + "' in " + where);
}

void parse_phase(const nlohmann::json& j, TrainConfig& cfg, const std::string& where) {
    reject_unknown_keys(j,
                        {"epochs", "iters_per_epoch", "batch_size", "patch_size",
                         "fg_bias", "early_stop_dice"},
                        where);
    if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<int64_t>();
    if (j.contains("iters_per_epoch"))
        cfg.iters_per_epoch = j.at("iters_per_epoch").get<int64_t>();
    if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<int64_t>();
    if (j.contains("patch_size")) {
        const auto& p = j.at("patch_size");
        if (!p.is_array() || p.size() != 3)
            throw ConfigError("config: " + where + ".patch_size must have 3 entries");
        for (int i = 0; i < 3; ++i)
            cfg.patch_size[static_cast<size_t>(i)] = p.at(i).get<int64_t>();
    }
    if (j.contains("fg_bias")) cfg.fg_bias = j.at("fg_bias").get<double>();
    if (j.contains("early_stop_dice"))
        cfg.early_stop_dice = j.at("early_stop_dice").get<double>();
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw DataError("cannot create directory '" + dir + "': " + ec.message());
}

/// Sorted (id, path) pairs for every .bin case container under root.
std::vector<std::pair<std::string, std::string>> list_cases(const std::string& root,
                                                            const std::string& what) {
    if (!fs::is_directory(root))
        throw DataError("missing data root for " + what + ": '" + root + "'");
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (!entry.is_regular_file()) continue;
        if (entry.path().extension() != ".bin") continue;
        out.emplace_back(entry.path().stem().string(), entry.path().string());
    }
    std::sort(out.begin(), out.end());
    if (out.empty())
        throw DataError("no case files under " + what + " root '" + root + "'");
    return out;
}

FamilySpec configured_family(const ExperimentConfig& cfg, const std::string& name) {
    FamilySpec f = make_family(name);
    f.shape = cfg.synthetic.shape;
    f.min_radius = cfg.synthetic.min_radius;
    f.max_radius = cfg.synthetic.max_radius;
    return f;
}

std::string checkpoint_path(const ExperimentConfig& cfg, const std::string& tag) {
    return cfg.out_dir + "/checkpoints/" + tag + ".ckpt";
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot open '" + path + "' for writing");
    f << text;
    if (!f) throw DataError("write failed for '" + path + "'");
}

nlohmann::json metric_to_json(const MetricSummary& m) {
    return {{"mean", m.mean},
            {"std", m.std},
            {"count", m.count},
            {"excluded", m.excluded}};
}

MetricSummary metric_from_json(const nlohmann::json& j) {
    MetricSummary m;
    m.mean = j.at("mean").get<double>();
    m.std = j.at("std").get<double>();
    m.count = j.at("count").get<int64_t>();
    m.excluded = j.at("excluded").get<int64_t>();
    return m;
}

nlohmann::json summary_to_json(const FoldSummary& s) {
    return {{"dsc", metric_to_json(s.dsc)},
            {"nsd", metric_to_json(s.nsd)},
            {"sensitivity", metric_to_json(s.sensitivity)},
            {"precision", metric_to_json(s.precision)},
            {"f1", metric_to_json(s.f1)},
            {"accuracy", metric_to_json(s.accuracy)}};
}

FoldSummary summary_from_json(const nlohmann::json& j) {
    FoldSummary s;
    s.dsc = metric_from_json(j.at("dsc"));
    s.nsd = metric_from_json(j.at("nsd"));
    s.sensitivity = metric_from_json(j.at("sensitivity"));
    s.precision = metric_from_json(j.at("precision"));
    s.f1 = metric_from_json(j.at("f1"));
    s.accuracy = metric_from_json(j.at("accuracy"));
    return s;
}

/// Fold-train cases for the given fold, merged to binary and normalized by
/// their own intensity statistics (returned so the model can carry them).
std::vector<TrainCase> load_fold_train_cases(const ExperimentConfig& cfg,
                                             int64_t fold, IntensityStats* out_stats,
                                             SplitPlan* out_plan) {
    const auto listed = list_cases(cfg.target_root, "target task");
    std::vector<std::string> ids;
    std::map<std::string, std::string> paths;
    for (const auto& [id, path] : listed) {
        ids.push_back(id);
        paths[id] = path;
    }
    const SplitPlan plan =
        make_split(ids, cfg.folds, cfg.seeds.front(), cfg.train_fraction);
    if (fold < 0 || fold >= static_cast<int64_t>(plan.folds.size()))
        throw ConfigError("fold index " + std::to_string(fold) +
                          " outside [0, " + std::to_string(plan.folds.size()) + ")");
    if (out_plan) *out_plan = plan;

    std::vector<TrainCase> cases;
    for (const auto& id : plan.folds[static_cast<size_t>(fold)].train_ids) {
        auto [vol, mask] = load_case(paths.at(id));
        merge_to_binary(mask);
        cases.push_back(TrainCase{std::move(vol), std::move(mask), "target"});
    }
    std::vector<std::pair<const Volume*, const Mask*>> stat_inputs;
    for (const auto& c : cases) stat_inputs.emplace_back(&c.volume, &c.mask);
    const IntensityStats stats = compute_intensity_stats(stat_inputs);
    for (auto& c : cases) c.volume = preprocess(c.volume, stats);
    if (out_stats) *out_stats = stats;
    return cases;
}

std::string cell_dir_name(StrategyKind kind, const std::string& source_tag,
                          int64_t fold) {
    return strategy_to_string(kind) + "_" + source_tag + "_f" + std::to_string(fold);
}

void append_hash(uint64_t& h, const std::string& s) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    h ^= 0x1f;
    h *= 1099511628211ull;
}

void append_hash(uint64_t& h, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    append_hash(h, std::string(buf));
}

void append_hash(uint64_t& h, const MetricSummary& m) {
    append_hash(h, m.mean);
    append_hash(h, m.std);
    append_hash(h, std::to_string(m.count));
    append_hash(h, std::to_string(m.excluded));
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
    pretrain.epochs = 60;
    pretrain.iters_per_epoch = 15;
    pretrain.batch_size = 2;
    pretrain.patch_size = {8, 12, 12};
    pretrain.fg_bias = 0.4;
    pretrain.early_stop_dice = 0.96;
    transfer = pretrain;
    transfer.epochs = 30;
}

void ExperimentConfig::validate() const {
    if (out_dir.empty()) throw ConfigError("config: out_dir must not be empty");
    if (target_root.empty())
        throw ConfigError("config: data.target_root must be set");
    if (task_roots.empty())
        throw ConfigError("config: data.tasks must list at least one task");
    for (const auto& [task, root] : task_roots) {
        if (task.empty() || root.empty())
            throw ConfigError("config: empty task id or root in data.tasks");
        if (task == "none" || task == "multi_lesion")
            throw ConfigError("config: task id '" + task + "' is reserved");
    }
    spec.validate();
    if (folds < 2) throw ConfigError("config: folds must be at least 2");
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw ConfigError("config: train_fraction must lie in (0, 1)");
    if (seeds.empty())
        throw ConfigError("config: seeds must be explicit and non-empty");
    if (strategies.empty()) throw ConfigError("config: strategies must not be empty");
    for (const auto& s : strategies) strategy_from_string(s);
    if (sources.empty()) throw ConfigError("config: sources must not be empty");
    if (tau_mm < 0.0) throw ConfigError("config: tau_mm must be non-negative");
    if (pretrain.epochs < 0 || transfer.epochs < 0)
        throw ConfigError("config: epochs must be non-negative");
    for (const auto* phase : {&pretrain, &transfer}) {
        if (phase->iters_per_epoch < 1 || phase->batch_size < 1)
            throw ConfigError("config: iterations and batch size must be positive");
        for (int64_t d : phase->patch_size)
            if (d < 1) throw ConfigError("config: patch_size must be positive");
    }
    for (int64_t d : synthetic.shape)
        if (d < 1) throw ConfigError("config: synthetic.shape must be positive");
    if (!(synthetic.min_radius > 0.0 && synthetic.max_radius >= synthetic.min_radius))
        throw ConfigError("config: synthetic radius window is malformed");
    if (synthetic.cases_per_task < 1 || synthetic.target_cases < 2)
        throw ConfigError("config: synthetic corpus sizes are too small");
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("config: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: bad JSON in '" + path + "': " + e.what());
    }

    ExperimentConfig cfg;
    try {
        reject_unknown_keys(j,
                            {"out_dir", "data", "spec", "optimizer", "pretrain",
                             "transfer", "folds", "train_fraction", "seeds",
                             "strategies", "sources", "tau_mm", "synthetic"},
                            "the top level");
        if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
        if (j.contains("data")) {
            const auto& d = j.at("data");
            reject_unknown_keys(d, {"target_root", "tasks", "target_family"},
                                "data");
            if (d.contains("target_root"))
                cfg.target_root = d.at("target_root").get<std::string>();
            if (d.contains("target_family"))
                cfg.target_family = d.at("target_family").get<std::string>();
            if (d.contains("tasks")) {
                cfg.task_roots.clear();
                for (const auto& [task, root] : d.at("tasks").items())
                    cfg.task_roots.emplace_back(task, root.get<std::string>());
            }
        }
        if (j.contains("spec")) {
            nlohmann::json merged = spec_to_json(cfg.spec);
            reject_unknown_keys(j.at("spec"),
                                {"num_stages", "base_channels", "channels_per_stage",
                                 "strides_per_stage", "kernel_size", "leaky_slope",
                                 "num_classes"},
                                "spec");
            for (const auto& [key, value] : j.at("spec").items()) merged[key] = value;
            cfg.spec = spec_from_json(merged);
        }
        if (j.contains("optimizer")) {
            const auto& o = j.at("optimizer");
            reject_unknown_keys(o, {"lr0", "momentum", "power"}, "optimizer");
            if (o.contains("lr0")) cfg.optimizer.lr0 = o.at("lr0").get<double>();
            if (o.contains("momentum"))
                cfg.optimizer.momentum = o.at("momentum").get<double>();
            if (o.contains("power")) cfg.optimizer.power = o.at("power").get<double>();
        }
        if (j.contains("pretrain")) parse_phase(j.at("pretrain"), cfg.pretrain, "pretrain");
        if (j.contains("transfer")) parse_phase(j.at("transfer"), cfg.transfer, "transfer");
        if (j.contains("folds")) cfg.folds = j.at("folds").get<int64_t>();
        if (j.contains("train_fraction"))
            cfg.train_fraction = j.at("train_fraction").get<double>();
        if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<uint64_t>>();
        if (j.contains("strategies"))
            cfg.strategies = j.at("strategies").get<std::vector<std::string>>();
        if (j.contains("sources"))
            cfg.sources = j.at("sources").get<std::vector<std::string>>();
        if (j.contains("tau_mm")) cfg.tau_mm = j.at("tau_mm").get<double>();
        if (j.contains("synthetic")) {
            const auto& s = j.at("synthetic");
            reject_unknown_keys(s,
                                {"shape", "min_radius", "max_radius",
                                 "cases_per_task", "target_cases"},
                                "synthetic");
            if (s.contains("shape")) {
                const auto& sh = s.at("shape");
                if (!sh.is_array() || sh.size() != 3)
                    throw ConfigError("config: synthetic.shape must have 3 entries");
                for (int i = 0; i < 3; ++i)
                    cfg.synthetic.shape[static_cast<size_t>(i)] =
                        sh.at(i).get<int64_t>();
            }
            if (s.contains("min_radius"))
                cfg.synthetic.min_radius = s.at("min_radius").get<double>();
            if (s.contains("max_radius"))
                cfg.synthetic.max_radius = s.at("max_radius").get<double>();
            if (s.contains("cases_per_task"))
                cfg.synthetic.cases_per_task = s.at("cases_per_task").get<int64_t>();
            if (s.contains("target_cases"))
                cfg.synthetic.target_cases = s.at("target_cases").get<int64_t>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: malformed value in '" + path + "': " + e.what());
    }
    cfg.validate();
    return cfg;
}

int64_t cmd_make_synthetic(const ExperimentConfig& cfg, uint64_t seed) {
    cfg.validate();
    int64_t written = 0;
    auto emit = [&](const std::string& family_name, const std::string& root,
                    int64_t count, uint64_t stream) {
        ensure_dir(root);
        const FamilySpec family = configured_family(cfg, family_name);
        for (int64_t i = 0; i < count; ++i) {
            char name[64];
            std::snprintf(name, sizeof(name), "%s_%03lld", family_name.c_str(),
                          static_cast<long long>(i));
            Rng rng = Rng(seed ^ stream).fork(static_cast<uint64_t>(i));
            auto [vol, mask] = gen_synthetic_case(rng, family, name);
            save_case(root + "/" + std::string(name) + ".bin", vol, mask);
            ++written;
        }
    };
    for (const auto& [task, root] : cfg.task_roots)
        emit(task, root, cfg.synthetic.cases_per_task, fnv1a64(task));
    emit(cfg.target_family, cfg.target_root, cfg.synthetic.target_cases,
         fnv1a64("target"));
    return written;
}

PretrainOutcome cmd_pretrain(const ExperimentConfig& cfg, uint64_t seed) {
    cfg.validate();
    ensure_dir(cfg.out_dir + "/checkpoints");

    PretrainConfig pc;
    pc.spec = cfg.spec;
    pc.train = cfg.pretrain;
    pc.opt = cfg.optimizer;
    pc.opt.max_epochs = cfg.pretrain.epochs;

    PretrainOutcome outcome;
    nlohmann::json entries = nlohmann::json::array();
    std::vector<PretrainTask> tasks;
    for (size_t i = 0; i < cfg.task_roots.size(); ++i) {
        const auto& [task_id, root] = cfg.task_roots[i];
        PretrainTask task;
        task.task_id = task_id;
        for (const auto& [id, path] : list_cases(root, "task '" + task_id + "'"))
            task.case_paths.push_back(path);
        tasks.push_back(task);

        pc.train.seed = seed + i;
        const Checkpoint ckpt = pretrain_single(task, pc);
        const std::string path = checkpoint_path(cfg, task_id);
        save_checkpoint(path, ckpt);
        outcome.checkpoint_paths.push_back(path);
        entries.push_back({{"task", task_id},
                           {"path", path},
                           {"seed", pc.train.seed},
                           {"epochs", ckpt.epoch},
                           {"val_dice", ckpt.val_dice}});
    }

    pc.train.seed = seed;
    const Checkpoint multi = pretrain_multi(tasks, pc);
    const std::string multi_path = checkpoint_path(cfg, "multi_lesion");
    save_checkpoint(multi_path, multi);
    outcome.checkpoint_paths.push_back(multi_path);
    entries.push_back({{"task", "multi_lesion"},
                       {"path", multi_path},
                       {"seed", seed},
                       {"epochs", multi.epoch},
                       {"val_dice", multi.val_dice}});

    const nlohmann::json manifest = {{"seed", seed}, {"checkpoints", entries}};
    outcome.manifest_path = cfg.out_dir + "/checkpoints/manifest.json";
    write_text(outcome.manifest_path, manifest.dump(2) + "\n");
    return outcome;
}

TransferOutcome cmd_transfer(const ExperimentConfig& cfg, StrategyKind kind,
                             const std::string& source_tag, int64_t fold,
                             uint64_t seed) {
    cfg.validate();
    const std::string tag =
        kind == StrategyKind::kFromScratch ? "none" : source_tag;

    IntensityStats stats;
    const std::vector<TrainCase> cases = load_fold_train_cases(cfg, fold, &stats,
                                                               nullptr);

    StrategyConfig sc;
    sc.kind = kind;
    sc.seed = seed;
    if (kind != StrategyKind::kFromScratch) {
        if (tag.empty())
            throw ConfigError("cmd_transfer: this strategy needs --source");
        sc.source_checkpoint = checkpoint_path(cfg, tag);
    }
    TrainableSetup setup = apply_strategy(sc, cfg.spec);
    const ParamStore initial = setup.params;

    OptimizerConfig oc = cfg.optimizer;
    oc.max_epochs = setup.start_epoch + cfg.transfer.epochs;
    Optimizer opt(oc);

    TrainConfig tc = cfg.transfer;
    tc.seed = seed;

    TransferOutcome outcome;
    outcome.cell_dir =
        cfg.out_dir + "/matrix/" + cell_dir_name(kind, tag, fold);
    ensure_dir(outcome.cell_dir);

    outcome.log = train_model(setup.params, cfg.spec, setup.model, cases, tc, opt,
                              setup.start_epoch);
    outcome.freeze_violations = verify_frozen(initial, setup.params);

    Checkpoint model;
    model.spec = cfg.spec;
    model.params = setup.params;
    model.params.seed = seed;
    model.epoch = outcome.log.entries.empty() ? setup.start_epoch
                                              : outcome.log.entries.back().epoch + 1;
    model.val_dice = outcome.log.final_dice();
    model.task = "target:" + strategy_to_string(kind);
    model.stats = stats;

    outcome.model_path = outcome.cell_dir + "/model.ckpt";
    outcome.log_path = outcome.cell_dir + "/trainlog.csv";
    save_checkpoint(outcome.model_path, model);
    outcome.log.save_csv(outcome.log_path);
    return outcome;
}

EvalOutcome cmd_eval(const ExperimentConfig& cfg, const std::string& model_path,
                     const std::vector<std::string>& case_paths, double tau_mm,
                     const std::string& out_dir) {
    if (case_paths.empty()) throw DataError("cmd_eval: no cases to evaluate");
    const Checkpoint model = load_checkpoint(model_path);
    const ModelKind kind = model.params.has("fusion/select_a")
                               ? ModelKind::kHybrid
                               : ModelKind::kPlain;
    ensure_dir(out_dir);

    EvalOutcome outcome;
    for (const auto& path : case_paths) {
        auto [vol, mask] = load_case(path);
        merge_to_binary(mask);
        const Volume prep = preprocess(vol, model.stats);
        const Tensor probs = predict_probs(model.params, model.spec, kind, prep,
                                           cfg.transfer.patch_size);
        const Mask predicted = argmax_labels(probs);
        outcome.cases.push_back(
            evaluate_case(vol.case_id, mask, predicted, vol.spacing, tau_mm));
    }
    outcome.summary = aggregate(outcome.cases);
    outcome.case_csv = out_dir + "/cases.csv";
    outcome.summary_csv = out_dir + "/summary.csv";
    save_case_metrics_csv(outcome.case_csv, outcome.cases);
    save_fold_summary_csv(outcome.summary_csv, outcome.summary);
    return outcome;
}

RunReport cmd_matrix(const ExperimentConfig& cfg) {
    cfg.validate();
    ensure_dir(cfg.out_dir + "/matrix");
    const uint64_t seed = cfg.seeds.front();

    // the split is a pure function of the sorted ids and the seed; saved
    // for inspection, not needed for resume
    {
        const auto listed = list_cases(cfg.target_root, "target task");
        std::vector<std::string> ids;
        for (const auto& [id, path] : listed) ids.push_back(id);
        const SplitPlan plan =
            make_split(ids, cfg.folds, seed, cfg.train_fraction);
        save_split(cfg.out_dir + "/split.json", plan);
    }

    RunReport report;
    for (const auto& strategy_name : cfg.strategies) {
        const StrategyKind kind = strategy_from_string(strategy_name);
        std::vector<std::string> sources =
            kind == StrategyKind::kFromScratch ? std::vector<std::string>{"none"}
                                               : cfg.sources;
        for (const auto& source : sources) {
            std::vector<RunReport::Row> fold_rows;
            for (int64_t fold = 0; fold < cfg.folds; ++fold) {
                RunReport::Row row;
                row.strategy = strategy_to_string(kind);
                row.source = source;
                row.fold = std::to_string(fold);

                const std::string cell =
                    cfg.out_dir + "/matrix/" + cell_dir_name(kind, source, fold);
                const std::string cell_json = cell + "/cell.json";

                bool reused = false;
                if (fs::exists(cell_json)) {
                    try {
                        std::ifstream in(cell_json);
                        nlohmann::json j;
                        in >> j;
                        if (j.at("status").get<std::string>() == "ok" &&
                            j.at("seed").get<uint64_t>() == seed) {
                            row.ok = true;
                            row.summary = summary_from_json(j.at("summary"));
                            row.seconds_per_epoch =
                                j.at("seconds_per_epoch").get<double>();
                            reused = true;
                        }
                    } catch (const std::exception&) {
                        reused = false;  // unreadable marker: recompute the cell
                    }
                }

                if (!reused) {
                    try {
                        const TransferOutcome tr =
                            cmd_transfer(cfg, kind, source, fold, seed);
                        if (!tr.freeze_violations.empty())
                            throw DataError(
                                "frozen parameters changed during training");

                        // evaluate on the fold's held-out cases
                        const auto listed =
                            list_cases(cfg.target_root, "target task");
                        std::map<std::string, std::string> paths;
                        std::vector<std::string> ids;
                        for (const auto& [id, path] : listed) {
                            ids.push_back(id);
                            paths[id] = path;
                        }
                        const SplitPlan plan = make_split(ids, cfg.folds, seed,
                                                          cfg.train_fraction);
                        std::vector<std::string> test_paths;
                        for (const auto& id :
                             plan.folds[static_cast<size_t>(fold)].test_ids)
                            test_paths.push_back(paths.at(id));
                        const EvalOutcome ev = cmd_eval(cfg, tr.model_path,
                                                        test_paths, cfg.tau_mm, cell);

                        row.ok = true;
                        row.summary = ev.summary;
                        row.seconds_per_epoch = tr.log.mean_seconds();
                        const nlohmann::json done = {
                            {"status", "ok"},
                            {"seed", seed},
                            {"strategy", row.strategy},
                            {"source", source},
                            {"fold", fold},
                            {"seconds_per_epoch", row.seconds_per_epoch},
                            {"summary", summary_to_json(row.summary)},
                        };
                        write_text(cell_json, done.dump(2) + "\n");
                    } catch (const std::exception& e) {
                        row.ok = false;
                        row.error = e.what();
                        ensure_dir(cell);
                        const nlohmann::json failed = {{"status", "failed"},
                                                       {"seed", seed},
                                                       {"error", row.error}};
                        write_text(cell_json, failed.dump(2) + "\n");
                    }
                }
                fold_rows.push_back(row);
                report.rows.push_back(row);
            }

            // AVG row over this group's completed folds
            RunReport::Row avg;
            avg.strategy = strategy_to_string(kind);
            avg.source = source;
            avg.fold = "AVG";
            int64_t n_ok = 0;
            for (const auto& row : fold_rows) {
                if (!row.ok) continue;
                ++n_ok;
                auto add = [](MetricSummary& acc, const MetricSummary& m) {
                    acc.mean += m.mean;
                    acc.std += m.std;
                    acc.count += m.count;
                    acc.excluded += m.excluded;
                };
                add(avg.summary.dsc, row.summary.dsc);
                add(avg.summary.nsd, row.summary.nsd);
                add(avg.summary.sensitivity, row.summary.sensitivity);
                add(avg.summary.precision, row.summary.precision);
                add(avg.summary.f1, row.summary.f1);
                add(avg.summary.accuracy, row.summary.accuracy);
                avg.seconds_per_epoch += row.seconds_per_epoch;
            }
            if (n_ok > 0) {
                avg.ok = true;
                auto scale = [n_ok](MetricSummary& m) {
                    m.mean /= static_cast<double>(n_ok);
                    m.std /= static_cast<double>(n_ok);
                };
                scale(avg.summary.dsc);
                scale(avg.summary.nsd);
                scale(avg.summary.sensitivity);
                scale(avg.summary.precision);
                scale(avg.summary.f1);
                scale(avg.summary.accuracy);
                avg.seconds_per_epoch /= static_cast<double>(n_ok);
            } else {
                avg.error = "no completed folds";
            }
            report.rows.push_back(avg);
        }
    }

    save_report_csv(cfg.out_dir + "/report.csv", report);
    save_report_markdown(cfg.out_dir + "/report.md", report);
    return report;
}

namespace {

const char* kReportHeader =
    "strategy,source,fold,status,dsc_mean,dsc_std,nsd_mean,nsd_std,"
    "sensitivity_mean,sensitivity_std,precision_mean,precision_std,"
    "f1_mean,f1_std,accuracy_mean,accuracy_std,seconds_per_epoch";

std::string row_metrics_csv(const RunReport::Row& row) {
    if (!row.ok) return "NA,NA,NA,NA,NA,NA,NA,NA,NA,NA,NA,NA";
    char buf[320];
    const FoldSummary& s = row.summary;
    std::snprintf(buf, sizeof(buf),
                  "%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f",
                  s.dsc.mean, s.dsc.std, s.nsd.mean, s.nsd.std, s.sensitivity.mean,
                  s.sensitivity.std, s.precision.mean, s.precision.std, s.f1.mean,
                  s.f1.std, s.accuracy.mean, s.accuracy.std);
    return buf;
}

}  // namespace

void save_report_csv(const std::string& path, const RunReport& report) {
    std::string text = std::string(kReportHeader) + "\n";
    for (const auto& row : report.rows) {
        char sec[40];
        if (row.ok)
            std::snprintf(sec, sizeof(sec), "%.6f", row.seconds_per_epoch);
        else
            std::snprintf(sec, sizeof(sec), "NA");
        text += row.strategy + "," + row.source + "," + row.fold + "," +
                (row.ok ? "ok" : "failed") + "," + row_metrics_csv(row) + "," +
                sec + "\n";
    }
    write_text(path, text);
}

void save_report_markdown(const std::string& path, const RunReport& report) {
    std::string text =
        "| Strategy | Source | Fold | DSC | NSD | Sensitivity | Precision | F1 "
        "| Accuracy | s/epoch |\n"
        "|---|---|---|---|---|---|---|---|---|---|\n";
    for (const auto& row : report.rows) {
        text += "| " + row.strategy + " | " + row.source + " | " + row.fold + " | ";
        if (!row.ok) {
            text += "failed | failed | failed | failed | failed | failed | - |\n";
            continue;
        }
        auto cell = [](const MetricSummary& m) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%.4f±%.4f", m.mean, m.std);
            return std::string(buf);
        };
        char sec[40];
        std::snprintf(sec, sizeof(sec), "%.2f", row.seconds_per_epoch);
        text += cell(row.summary.dsc) + " | " + cell(row.summary.nsd) + " | " +
                cell(row.summary.sensitivity) + " | " +
                cell(row.summary.precision) + " | " + cell(row.summary.f1) +
                " | " + cell(row.summary.accuracy) + " | " + sec + " |\n";
    }
    write_text(path, text);
}

std::string report_hash(const RunReport& report) {
    uint64_t h = 1469598103934665603ull;
    for (const auto& row : report.rows) {
        append_hash(h, row.strategy);
        append_hash(h, row.source);
        append_hash(h, row.fold);
        append_hash(h, row.ok ? "ok" : "failed");
        append_hash(h, row.error);
        if (row.ok) {
            append_hash(h, row.summary.dsc);
            append_hash(h, row.summary.nsd);
            append_hash(h, row.summary.sensitivity);
            append_hash(h, row.summary.precision);
            append_hash(h, row.summary.f1);
            append_hash(h, row.summary.accuracy);
        }
    }
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace volseg

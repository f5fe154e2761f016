// Command-line front end: pretrain, transfer, eval, matrix, render, and
// make-synthetic verbs over the experiment config. Exit codes: 0 success,
// 2 configuration problem, 3 data problem, 4 training divergence.
#include <CLI11.hpp>

#include <cstdio>
#include <string>
#include <vector>

#include "volseg/harness.hpp"
#include "volseg/inference.hpp"
#include "volseg/render.hpp"

namespace {

volseg::ExperimentConfig load_config(const std::string& path, const std::string& out,
                                     uint64_t* seed, bool seed_given) {
    if (path.empty()) throw volseg::ConfigError("--config is required");
    volseg::ExperimentConfig cfg = volseg::load_experiment_config(path);
    if (!out.empty()) cfg.out_dir = out;
    if (!seed_given && seed) *seed = cfg.seeds.front();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Volumetric lesion segmentation transfer-learning toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_override, source = "", model_path, pred_path;
    std::string case_path;
    std::string strategy = "scratch";
    int64_t fold = 0;
    double tau_mm = -1.0;  // negative = take the config value
    uint64_t seed = 0;
    bool seed_given = false;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "experiment config JSON");
        sub->add_option("--out", out_override, "override the output directory");
        sub->add_option("--seed", seed, "override the first configured seed")
            ->each([&](const std::string&) { seed_given = true; });
    };

    CLI::App* pretrain = app.add_subcommand(
        "pretrain", "train one checkpoint per task plus the multi-task model");
    add_common(pretrain);

    CLI::App* transfer = app.add_subcommand(
        "transfer", "train the target task under one strategy and fold");
    add_common(transfer);
    transfer->add_option("--strategy", strategy,
                         "scratch, continual, body, frozen, or hybrid");
    transfer->add_option("--source", source, "source checkpoint tag");
    transfer->add_option("--fold", fold, "cross-validation fold index");

    CLI::App* eval = app.add_subcommand(
        "eval", "score a trained model on case files");
    add_common(eval);
    eval->add_option("model", model_path, "model checkpoint")->required();
    std::vector<std::string> eval_cases;
    eval->add_option("cases", eval_cases, "case container files")->required();
    eval->add_option("--tau-mm", tau_mm, "surface tolerance in mm");

    CLI::App* matrix = app.add_subcommand(
        "matrix", "run the full strategy-by-source-by-fold grid");
    add_common(matrix);

    CLI::App* render = app.add_subcommand(
        "render", "write an axial montage with contour overlays");
    add_common(render);
    render->add_option("case", case_path, "case container with the annotation")
        ->required();
    render->add_option("--pred", pred_path,
                       "case container whose mask is the prediction");
    render->add_option("--model", model_path,
                       "model checkpoint to predict with instead of --pred");
    std::string png_out = "montage.png";
    render->add_option("--png", png_out, "output image path");

    CLI::App* synth = app.add_subcommand(
        "make-synthetic", "generate the configured synthetic corpora");
    add_common(synth);

    try {
        app.parse(argc, argv);

        if (pretrain->parsed()) {
            const auto cfg = load_config(config_path, out_override, &seed, seed_given);
            const auto outcome = volseg::cmd_pretrain(cfg, seed);
            std::printf("wrote %zu checkpoints; manifest at %s\n",
                        outcome.checkpoint_paths.size(),
                        outcome.manifest_path.c_str());
        } else if (transfer->parsed()) {
            const auto cfg = load_config(config_path, out_override, &seed, seed_given);
            const volseg::StrategyKind kind = volseg::strategy_from_string(strategy);
            const std::string tag = source.empty() ? cfg.sources.front() : source;
            const auto outcome = volseg::cmd_transfer(cfg, kind, tag, fold, seed);
            std::printf("model at %s; mean epoch time %.3fs\n",
                        outcome.model_path.c_str(), outcome.log.mean_seconds());
            if (!outcome.freeze_violations.empty()) {
                std::fprintf(stderr, "frozen parameters changed during training\n");
                return 1;
            }
        } else if (eval->parsed()) {
            const auto cfg = load_config(config_path, out_override, &seed, seed_given);
            const double tau = tau_mm >= 0.0 ? tau_mm : cfg.tau_mm;
            const std::string out =
                out_override.empty() ? cfg.out_dir + "/eval" : out_override;
            const auto outcome =
                volseg::cmd_eval(cfg, model_path, eval_cases, tau, out);
            std::printf("evaluated %zu cases; mean DSC %.4f; CSVs in %s\n",
                        outcome.cases.size(), outcome.summary.dsc.mean,
                        out.c_str());
        } else if (matrix->parsed()) {
            const auto cfg = load_config(config_path, out_override, &seed, seed_given);
            const auto report = volseg::cmd_matrix(cfg);
            std::printf("%zu report rows; hash %s; report at %s/report.csv\n",
                        report.rows.size(), volseg::report_hash(report).c_str(),
                        cfg.out_dir.c_str());
        } else if (render->parsed()) {
            auto [vol, annotation] = volseg::load_case(case_path);
            volseg::Mask prediction = annotation;
            prediction.labels.assign(prediction.labels.size(), 0);
            if (!pred_path.empty()) {
                auto [pv, pm] = volseg::load_case(pred_path);
                if (pm.shape != annotation.shape)
                    throw volseg::DataError("prediction mask is not aligned");
                prediction = pm;
            } else if (!model_path.empty()) {
                const auto cfg =
                    load_config(config_path, out_override, &seed, seed_given);
                const volseg::Checkpoint model = volseg::load_checkpoint(model_path);
                const auto kind = model.params.has("fusion/select_a")
                                      ? volseg::ModelKind::kHybrid
                                      : volseg::ModelKind::kPlain;
                const volseg::Volume prep = volseg::preprocess(vol, model.stats);
                prediction = volseg::argmax_labels(volseg::predict_probs(
                    model.params, model.spec, kind, prep, cfg.transfer.patch_size));
            }
            const auto slices =
                volseg::render_montage(png_out, vol, annotation, prediction);
            std::printf("rendered %zu slices to %s\n", slices.size(),
                        png_out.c_str());
        } else if (synth->parsed()) {
            const auto cfg = load_config(config_path, out_override, &seed, seed_given);
            const int64_t n = volseg::cmd_make_synthetic(cfg, seed);
            std::printf("wrote %lld case files\n", static_cast<long long>(n));
        }
        return 0;
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    } catch (const volseg::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const volseg::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const volseg::TrainDivergedError& e) {
        std::fprintf(stderr, "training diverged: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

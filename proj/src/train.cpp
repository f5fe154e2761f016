#include "volseg/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace volseg {

double TrainLog::mean_seconds() const {
    if (entries.empty()) return 0.0;
    double s = 0.0;
    for (const auto& e : entries) s += e.seconds_per_epoch;
    return s / static_cast<double>(entries.size());
}

double TrainLog::final_dice() const {
    return entries.empty() ? 0.0 : entries.back().train_dice;
}

void TrainLog::save_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("train log: cannot write " + path);
    out << "epoch,lr,train_loss,seconds_per_epoch\n";
    char line[160];
    for (const auto& e : entries) {
        std::snprintf(line, sizeof(line), "%lld,%.17g,%.17g,%.6f\n",
                      static_cast<long long>(e.epoch), e.lr, e.train_loss,
                      e.seconds_per_epoch);
        out << line;
    }
    if (!out) throw DataError("train log: write failed for " + path);
}

TrainLog load_train_log(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("train log: cannot read " + path);
    std::string line;
    if (!std::getline(in, line) || line != "epoch,lr,train_loss,seconds_per_epoch")
        throw DataError("train log: bad header in " + path);
    TrainLog log;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        TrainLogEntry e;
        std::istringstream row(line);
        std::string field;
        try {
            if (!std::getline(row, field, ',')) throw DataError("");
            e.epoch = std::stoll(field);
            if (!std::getline(row, field, ',')) throw DataError("");
            e.lr = std::stod(field);
            if (!std::getline(row, field, ',')) throw DataError("");
            e.train_loss = std::stod(field);
            if (!std::getline(row, field, ',')) throw DataError("");
            e.seconds_per_epoch = std::stod(field);
        } catch (const std::exception&) {
            throw DataError("train log: malformed row in " + path);
        }
        log.entries.push_back(e);
    }
    return log;
}

namespace {

// Case indices grouped by task, in first-appearance task order.
std::vector<std::vector<int64_t>> group_by_task(const std::vector<TrainCase>& cases) {
    std::vector<std::string> order;
    std::vector<std::vector<int64_t>> groups;
    for (int64_t i = 0; i < static_cast<int64_t>(cases.size()); ++i) {
        const std::string& t = cases[static_cast<size_t>(i)].task_id;
        size_t g = 0;
        for (; g < order.size(); ++g)
            if (order[g] == t) break;
        if (g == order.size()) {
            order.push_back(t);
            groups.emplace_back();
        }
        groups[g].push_back(i);
    }
    return groups;
}

}  // namespace

int64_t pick_training_case(const std::vector<TrainCase>& cases, bool task_uniform,
                           Rng& rng) {
    if (cases.empty()) throw DataError("pick_training_case: no cases");
    const auto groups = group_by_task(cases);
    if (task_uniform && groups.size() > 1) {
        const auto& g = groups[static_cast<size_t>(
            rng.uniform_index(static_cast<int64_t>(groups.size())))];
        return g[static_cast<size_t>(
            rng.uniform_index(static_cast<int64_t>(g.size())))];
    }
    return rng.uniform_index(static_cast<int64_t>(cases.size()));
}

TrainLog train_model(ParamStore& params, const NetworkSpec& spec, ModelKind kind,
                     const std::vector<TrainCase>& cases, const TrainConfig& cfg,
                     Optimizer& opt, int64_t start_epoch) {
    if (cfg.epochs < 0) throw ConfigError("train: epochs must be non-negative");
    if (cfg.batch_size < 1) throw ConfigError("train: batch size must be at least 1");
    if (cfg.iters_per_epoch < 1)
        throw ConfigError("train: iters_per_epoch must be at least 1");
    if (cases.empty()) throw DataError("train: no training cases");
    if (start_epoch < 0) throw ConfigError("train: start_epoch must be non-negative");
    if (start_epoch + cfg.epochs > opt.config().max_epochs)
        throw ConfigError("train: start_epoch + epochs exceeds the schedule horizon");

    const int64_t levels = num_supervision_levels(spec);
    LossConfig loss_cfg = cfg.loss;
    if (loss_cfg.ds_weights.empty()) loss_cfg.ds_weights = make_ds_weights(levels);
    validate_loss_config(loss_cfg, levels, spec.num_classes);

    {
        // Patch geometry must survive the encoder's cumulative striding.
        Tensor probe({1, 1, cfg.patch_size[0], cfg.patch_size[1], cfg.patch_size[2]});
        check_patch_shape(spec, probe);
    }
    for (const auto& c : cases) check_aligned(c.volume, c.mask);

    const int64_t pvox = cfg.patch_size[0] * cfg.patch_size[1] * cfg.patch_size[2];

    TrainLog log;
    for (int64_t e = 0; e < cfg.epochs; ++e) {
        const int64_t epoch = start_epoch + e;
        const double lr = opt.lr_for_epoch(epoch);
        // Keyed off the absolute epoch so a resumed run draws the same
        // patches an uninterrupted run would.
        Rng rng = Rng(cfg.seed).fork(static_cast<uint64_t>(epoch));

        const auto t0 = std::chrono::steady_clock::now();
        double loss_sum = 0.0, dice_sum = 0.0;
        for (int64_t it = 0; it < cfg.iters_per_epoch; ++it) {
            Tensor xb({cfg.batch_size, 1, cfg.patch_size[0], cfg.patch_size[1],
                       cfg.patch_size[2]});
            Tensor yb({cfg.batch_size, cfg.patch_size[0], cfg.patch_size[1],
                       cfg.patch_size[2]});
            for (int64_t b = 0; b < cfg.batch_size; ++b) {
                const int64_t ci =
                    pick_training_case(cases, cfg.task_uniform, rng);
                const TrainCase& tc = cases[static_cast<size_t>(ci)];
                Patch p = sample_patch(tc.volume, tc.mask, cfg.patch_size, rng,
                                       cfg.fg_bias);
                for (int64_t v = 0; v < pvox; ++v) {
                    xb[b * pvox + v] =
                        static_cast<double>(p.volume_crop[static_cast<size_t>(v)]);
                    yb[b * pvox + v] =
                        static_cast<double>(p.mask_crop[static_cast<size_t>(v)]);
                }
            }

            ad::Tape tape;
            Binder bind(tape, params);
            const ad::NodeId x = tape.constant(std::move(xb));
            ForwardResult fr = (kind == ModelKind::kPlain)
                                   ? forward_model(tape, bind, x, spec)
                                   : hybrid_forward(tape, bind, x, spec);
            double dice = 0.0;
            const ad::NodeId loss_id =
                deep_supervision_loss(tape, fr.logits, yb, loss_cfg, &dice);
            const double loss_val = tape.value(loss_id)[0];
            if (!std::isfinite(loss_val))
                throw TrainDivergedError(
                    "train: non-finite loss " + std::to_string(loss_val) +
                    " at epoch " + std::to_string(epoch) + " iteration " +
                    std::to_string(it) + " (lr " + std::to_string(lr) + ")");
            tape.backward(loss_id);

            std::map<std::string, Tensor> grads;
            for (const auto& [name, id] : bind.bound())
                if (tape.requires_grad(id)) grads.emplace(name, tape.grad(id));
            opt.step(params, grads, lr);

            loss_sum += loss_val;
            dice_sum += dice;
        }
        const auto t1 = std::chrono::steady_clock::now();

        TrainLogEntry entry;
        entry.epoch = epoch;
        entry.lr = lr;
        entry.train_loss = loss_sum / static_cast<double>(cfg.iters_per_epoch);
        entry.train_dice = dice_sum / static_cast<double>(cfg.iters_per_epoch);
        entry.seconds_per_epoch =
            std::chrono::duration<double>(t1 - t0).count();
        log.entries.push_back(entry);

        if (cfg.early_stop_dice >= 0.0 && entry.train_dice >= cfg.early_stop_dice)
            break;
    }
    return log;
}

}  // namespace volseg
